#include "lidet/gradcheck.hpp"

#include <cmath>

#include "lidet/tape.hpp"

namespace lidet {

double grad_check(const TensorFn& f, const Tensor& x, double h) {
    // Analytic pass on a fresh tape.
    Tensor leaf = x.clone();
    leaf.requires_grad = true;
    std::vector<double> analytic(static_cast<std::size_t>(x.size()), 0.0);
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor y = f(leaf);
        if (y.size() != 1) {
            throw Error("grad_check: f must be scalar-valued, got " + shape_str(y.shape));
        }
        tape.backward(y);
        if (const auto* g = tape.grad(leaf)) analytic = *g;
    }

    double max_err = 0.0;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        Tensor xp = x.clone();
        Tensor xm = x.clone();
        (*xp.data)[static_cast<std::size_t>(i)] += h;
        (*xm.data)[static_cast<std::size_t>(i)] -= h;
        const double fp = f(xp).item();
        const double fm = f(xm).item();
        const double fd = (fp - fm) / (2.0 * h);
        const double a = analytic[static_cast<std::size_t>(i)];
        if (std::isnan(a) || std::isnan(fd)) {
            throw NumericError("grad_check: NaN gradient at coordinate " + std::to_string(i) +
                               " (analytic=" + std::to_string(a) + ", fd=" + std::to_string(fd) +
                               ")");
        }
        const double err = std::fabs(a - fd) / std::max(1.0, std::fabs(a));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

} // namespace lidet
