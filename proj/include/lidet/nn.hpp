#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "lidet/ops.hpp"
#include "lidet/rng.hpp"
#include "lidet/tensor.hpp"

namespace lidet {

// Named trainable tensors in creation order. Handles share the underlying
// buffer, so in-place optimizer updates are visible to the modules holding
// them and checkpoint order is stable.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor value;
    };

    Tensor add(const std::string& name, Shape shape);
    Tensor* find(const std::string& name);
    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }
    std::int64_t total_params() const;

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> by_name_;
};

void fill_normal(Tensor& t, Rng& rng, double stddev, double mean = 0.0);
// Glorot-style scaling for a dense layer of the given fan.
void fill_xavier(Tensor& t, Rng& rng, std::int64_t fan_in, std::int64_t fan_out);
void fill_const(Tensor& t, double v);

struct Linear {
    Tensor w; // [in, out]
    Tensor b; // [out]

    static Linear create(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng,
                         double bias_init = 0.0);
    Tensor apply(const Tensor& x) const { return add(matmul(x, w), b); }
    int out_dim() const { return w.shape[1]; }
};

struct Conv {
    Tensor w; // [kh, kw, cin, cout]
    Tensor b; // [cout]
    int stride = 1;
    int pad = 0;

    static Conv create(ParamStore& ps, const std::string& prefix, int kh, int kw, int cin,
                       int cout, int stride, int pad, Rng& rng);
    Tensor apply(const Tensor& x) const { return add(conv2d(x, w, stride, pad), b); }
};

} // namespace lidet
