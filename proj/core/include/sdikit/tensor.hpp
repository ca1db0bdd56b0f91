#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sdikit {

/// Dense row-major f64 tensor of rank 1 or 2. All model parameters and
/// gradients are carried in this type.
struct Tensor {
    std::vector<uint32_t> dims;
    std::vector<double> data;

    Tensor() = default;

    static Tensor vector(uint32_t d) {
        Tensor t;
        t.dims = {d};
        t.data.assign(d, 0.0);
        return t;
    }

    static Tensor matrix(uint32_t rows, uint32_t cols) {
        Tensor t;
        t.dims = {rows, cols};
        t.data.assign(static_cast<size_t>(rows) * cols, 0.0);
        return t;
    }

    bool is_vector() const { return dims.size() == 1; }
    bool is_matrix() const { return dims.size() == 2; }
    uint32_t rows() const { return dims.empty() ? 0 : dims[0]; }
    uint32_t cols() const { return dims.size() < 2 ? 1 : dims[1]; }
    size_t size() const { return data.size(); }

    double& operator()(uint32_t i, uint32_t j) { return data[static_cast<size_t>(i) * cols() + j]; }
    double operator()(uint32_t i, uint32_t j) const {
        return data[static_cast<size_t>(i) * cols() + j];
    }
    double& operator[](size_t i) { return data[i]; }
    double operator[](size_t i) const { return data[i]; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    Tensor& operator+=(const Tensor& o) {
        if (o.size() != size()) throw std::invalid_argument("Tensor+=: shape mismatch");
        for (size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
        return *this;
    }

    Tensor& scale(double a) {
        for (auto& x : data) x *= a;
        return *this;
    }
};

using NamedTensor = std::pair<std::string, Tensor>;
/// Ordered named collection; order is semantic (sketch concatenation order).
using TensorMap = std::vector<NamedTensor>;

inline const Tensor* find_tensor(const TensorMap& m, const std::string& name) {
    for (const auto& [n, t] : m) {
        if (n == name) return &t;
    }
    return nullptr;
}

}  // namespace sdikit
