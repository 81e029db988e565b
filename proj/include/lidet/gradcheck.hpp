#pragma once

#include <functional>

#include "lidet/tensor.hpp"

namespace lidet {

using TensorFn = std::function<Tensor(const Tensor&)>;

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar-valued f. Throws NumericError (with the coordinate index) when
// either gradient is NaN.
double grad_check(const TensorFn& f, const Tensor& x, double h = 1e-6);

} // namespace lidet
