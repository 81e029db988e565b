#include "lidet/nn.hpp"

#include <cmath>

namespace lidet {

Tensor ParamStore::add(const std::string& name, Shape shape) {
    if (by_name_.count(name)) throw Error("ParamStore: duplicate parameter " + name);
    Entry e;
    e.name = name;
    e.value = Tensor::zeros(std::move(shape));
    e.value.requires_grad = true;
    by_name_.emplace(name, static_cast<int>(entries_.size()));
    entries_.push_back(std::move(e));
    return entries_.back().value;
}

Tensor* ParamStore::find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : &entries_[static_cast<std::size_t>(it->second)].value;
}

std::int64_t ParamStore::total_params() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

void fill_normal(Tensor& t, Rng& rng, double stddev, double mean) {
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal(mean, stddev);
}

void fill_xavier(Tensor& t, Rng& rng, std::int64_t fan_in, std::int64_t fan_out) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    fill_normal(t, rng, stddev);
}

void fill_const(Tensor& t, double v) {
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = v;
}

Linear Linear::create(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng,
                      double bias_init) {
    Linear l;
    l.w = ps.add(prefix + ".w", {in, out});
    l.b = ps.add(prefix + ".b", {out});
    fill_xavier(l.w, rng, in, out);
    fill_const(l.b, bias_init);
    return l;
}

Conv Conv::create(ParamStore& ps, const std::string& prefix, int kh, int kw, int cin, int cout,
                  int stride, int pad, Rng& rng) {
    Conv c;
    c.w = ps.add(prefix + ".w", {kh, kw, cin, cout});
    c.b = ps.add(prefix + ".b", {cout});
    c.stride = stride;
    c.pad = pad;
    const double stddev = std::sqrt(2.0 / static_cast<double>(kh * kw * cin));
    fill_normal(c.w, rng, stddev);
    fill_const(c.b, 0.0);
    return c;
}

} // namespace lidet
