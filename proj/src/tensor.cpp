#include "lidet/tensor.hpp"

#include <numeric>
#include <sstream>

namespace lidet {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape s) {
    Tensor t;
    std::int64_t n = numel(s);
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n), 0.0);
    return t;
}

Tensor Tensor::full(Shape s, double value) {
    Tensor t = zeros(std::move(s));
    std::fill(t.data->begin(), t.data->end(), value);
    return t;
}

Tensor Tensor::from(Shape s, std::vector<double> values) {
    std::int64_t n = numel(s);
    if (n != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(s));
    }
    Tensor t;
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<double>>(std::move(values));
    return t;
}

Tensor Tensor::scalar(double value) {
    return from({1}, {value});
}

Tensor Tensor::uninit(Shape s) {
    Tensor t;
    std::int64_t n = numel(s);
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
    return t;
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape));
    return (*data)[0];
}

Tensor Tensor::detached() const {
    Tensor t;
    t.shape = shape;
    t.data = data;
    t.requires_grad = false;
    t.node = -1;
    t.tape = nullptr;
    return t;
}

Tensor Tensor::clone() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<double>>(*data);
    return t;
}

void check_same_numel(const char* op, const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) {
        throw ShapeError(std::string(op) + ": element count mismatch " + shape_str(a.shape) +
                         " vs " + shape_str(b.shape));
    }
}

} // namespace lidet
