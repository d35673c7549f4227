#pragma once

#include <cstdint>
#include <vector>

#include "gvd/error.hpp"

namespace gvd {

// Dense row-major tensor. Compute happens in 64-bit; serialized grids and
// checkpoints store 32-bit floats (see io.hpp / params.hpp).
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s, double fill = 0.0);
    static Tensor from(std::vector<int64_t> s, std::vector<double> values);

    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int64_t numel() const;

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }
    double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // 2-d views (rank must be 2)
    int64_t rows() const { return shape[0]; }
    int64_t cols() const { return shape[1]; }
    double& at2(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
    double at2(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
    void zero();
};

int64_t shape_numel(const std::vector<int64_t>& shape);

// c (n x m) = a (n x k) * b (k x m); accumulate adds into c.
void matmul(const double* a, const double* b, double* c, int64_t n, int64_t k, int64_t m,
            bool accumulate = false);
// c (n x m) = a (k x n)^T * b (k x m)
void matmul_tn(const double* a, const double* b, double* c, int64_t n, int64_t k, int64_t m,
               bool accumulate = false);
// c (n x m) = a (n x k) * b (m x k)^T
void matmul_nt(const double* a, const double* b, double* c, int64_t n, int64_t k, int64_t m,
               bool accumulate = false);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
void axpy(double s, const Tensor& x, Tensor& y);  // y += s * x
double dot(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool bit_equal(const Tensor& a, const Tensor& b);

}  // namespace gvd
