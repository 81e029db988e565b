#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "lidet/error.hpp"

namespace lidet {

class Tape;

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major 64-bit float tensor. Handles are cheap to copy; the data
// buffer is shared and treated as immutable once an op has produced it.
// `node` links the tensor to the tape that recorded it (-1 = off tape).
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<double>> data;
    bool requires_grad = false;
    int node = -1;
    Tape* tape = nullptr;

    Tensor() = default;

    static Tensor zeros(Shape s);
    static Tensor full(Shape s, double value);
    static Tensor from(Shape s, std::vector<double> values);
    static Tensor scalar(double value);
    static Tensor uninit(Shape s);

    std::int64_t size() const { return data ? static_cast<std::int64_t>(data->size()) : 0; }
    bool defined() const { return static_cast<bool>(data); }
    int ndim() const { return static_cast<int>(shape.size()); }

    double* ptr() { return data->data(); }
    const double* ptr() const { return data->data(); }

    double& operator[](std::int64_t i) { return (*data)[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return (*data)[static_cast<std::size_t>(i)]; }

    double item() const;

    // Same buffer, no grad tracking.
    Tensor detached() const;
    // Deep copy of the buffer.
    Tensor clone() const;

    Tensor& set_requires_grad(bool v) {
        requires_grad = v;
        return *this;
    }
};

void check_same_numel(const char* op, const Tensor& a, const Tensor& b);

} // namespace lidet
