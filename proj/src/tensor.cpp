#include "gvd/tensor.hpp"

#include <cmath>
#include <cstring>

namespace gvd {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

Tensor::Tensor(std::vector<int64_t> s, double fill) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(shape_numel(shape)), fill);
}

Tensor Tensor::from(std::vector<int64_t> s, std::vector<double> values) {
    if (shape_numel(s) != static_cast<int64_t>(values.size()))
        fail("tensor-shape", "value count does not match shape");
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(values);
    return t;
}

int64_t Tensor::numel() const { return static_cast<int64_t>(data.size()); }

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::zero() { std::memset(data.data(), 0, data.size() * sizeof(double)); }

void matmul(const double* a, const double* b, double* c, int64_t n, int64_t k, int64_t m,
            bool accumulate) {
    if (!accumulate) std::memset(c, 0, static_cast<size_t>(n * m) * sizeof(double));
    for (int64_t i = 0; i < n; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * m;
        for (int64_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * m;
            for (int64_t j = 0; j < m; ++j) ci[j] += av * bp[j];
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c, int64_t n, int64_t k, int64_t m,
               bool accumulate) {
    if (!accumulate) std::memset(c, 0, static_cast<size_t>(n * m) * sizeof(double));
    for (int64_t p = 0; p < k; ++p) {
        const double* ap = a + p * n;
        const double* bp = b + p * m;
        for (int64_t i = 0; i < n; ++i) {
            const double av = ap[i];
            if (av == 0.0) continue;
            double* ci = c + i * m;
            for (int64_t j = 0; j < m; ++j) ci[j] += av * bp[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c, int64_t n, int64_t k, int64_t m,
               bool accumulate) {
    if (!accumulate) std::memset(c, 0, static_cast<size_t>(n * m) * sizeof(double));
    for (int64_t i = 0; i < n; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * m;
        for (int64_t j = 0; j < m; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

static void check_same(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) fail("tensor-shape", std::string(op) + ": shape mismatch");
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same(a, b, "add");
    Tensor r = a;
    for (size_t i = 0; i < r.data.size(); ++i) r.data[i] += b.data[i];
    return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same(a, b, "sub");
    Tensor r = a;
    for (size_t i = 0; i < r.data.size(); ++i) r.data[i] -= b.data[i];
    return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same(a, b, "mul");
    Tensor r = a;
    for (size_t i = 0; i < r.data.size(); ++i) r.data[i] *= b.data[i];
    return r;
}

Tensor scale(const Tensor& a, double s) {
    Tensor r = a;
    for (double& v : r.data) v *= s;
    return r;
}

void axpy(double s, const Tensor& x, Tensor& y) {
    check_same(x, y, "axpy");
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += s * x.data[i];
}

double dot(const Tensor& a, const Tensor& b) {
    check_same(a, b, "dot");
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) acc += a.data[i] * b.data[i];
    return acc;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    check_same(a, b, "max_abs_diff");
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

}  // namespace gvd
