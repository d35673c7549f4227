#include "gvd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace gvd {

static void require_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) fail("non-finite", std::string(op) + " produced NaN/Inf");
}

Tensor softmax(const Tensor& x) {
    if (x.numel() == 0) fail("empty-softmax", "softmax of an empty vector");
    Tensor y(x.shape);
    softmax_rows(x.ptr(), y.ptr(), 1, x.numel());
    require_finite(y, "softmax");
    return y;
}

void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols) {
    for (int64_t r = 0; r < rows; ++r) {
        const double* xi = x + r * cols;
        double* yi = y + r * cols;
        double m = xi[0];
        for (int64_t j = 1; j < cols; ++j) m = std::max(m, xi[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            yi[j] = std::exp(xi[j] - m);
            sum += yi[j];
        }
        const double inv = 1.0 / sum;
        for (int64_t j = 0; j < cols; ++j) yi[j] *= inv;
    }
}

void softmax_row_vjp(const double* y, const double* dy, double* dx, int64_t n) {
    double inner = 0.0;
    for (int64_t j = 0; j < n; ++j) inner += y[j] * dy[j];
    for (int64_t j = 0; j < n; ++j) dx[j] = y[j] * (dy[j] - inner);
}

Tensor softmax_vjp(const Tensor& y, const Tensor& dy) {
    Tensor dx(y.shape);
    softmax_row_vjp(y.ptr(), dy.ptr(), dx.ptr(), y.numel());
    return dx;
}

static BiasKind bias_kind(const Tensor* bias, int64_t nq, int64_t nk) {
    if (!bias || bias->numel() == 0) return BiasKind::none;
    if (bias->rank() == 1 && bias->dim(0) == nk) return BiasKind::per_key;
    if (bias->rank() == 2 && bias->dim(0) == nq && bias->dim(1) == nk) return BiasKind::full;
    fail("attention-shape", "bias not broadcastable to (num_queries x num_keys)");
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const Tensor* bias, Tensor* attn_out) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        fail("attention-shape", "Q, K, V must be matrices");
    const int64_t nq = q.rows(), d = q.cols(), nk = k.rows(), dv = v.cols();
    if (k.cols() != d) fail("attention-shape", "Q/K feature width mismatch");
    if (v.rows() != nk) fail("attention-shape", "K/V row count mismatch");
    const BiasKind bk = bias_kind(bias, nq, nk);

    Tensor logits({nq, nk});
    matmul_nt(q.ptr(), k.ptr(), logits.ptr(), nq, d, nk);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    for (double& x : logits.data) x *= inv_sqrt_d;
    if (bk == BiasKind::per_key) {
        for (int64_t i = 0; i < nq; ++i)
            for (int64_t j = 0; j < nk; ++j) logits.at2(i, j) += (*bias)[j];
    } else if (bk == BiasKind::full) {
        for (size_t i = 0; i < logits.data.size(); ++i) logits.data[i] += bias->data[i];
    }

    Tensor attn({nq, nk});
    softmax_rows(logits.ptr(), attn.ptr(), nq, nk);
    Tensor out({nq, dv});
    matmul(attn.ptr(), v.ptr(), out.ptr(), nq, nk, dv);
    require_finite(out, "scaled_dot_attention");
    if (attn_out) *attn_out = attn;
    return out;
}

AttentionGrads scaled_dot_attention_vjp(const Tensor& q, const Tensor& k, const Tensor& v,
                                        const Tensor* bias, const Tensor& attn,
                                        const Tensor& dout) {
    const int64_t nq = q.rows(), d = q.cols(), nk = k.rows(), dv = v.cols();
    const BiasKind bk = bias_kind(bias, nq, nk);

    AttentionGrads g;
    g.dv = Tensor({nk, dv});
    matmul_tn(attn.ptr(), dout.ptr(), g.dv.ptr(), nk, nq, dv);

    Tensor dattn({nq, nk});
    matmul_nt(dout.ptr(), v.ptr(), dattn.ptr(), nq, dv, nk);

    Tensor dlogits({nq, nk});
    for (int64_t i = 0; i < nq; ++i)
        softmax_row_vjp(attn.ptr() + i * nk, dattn.ptr() + i * nk, dlogits.ptr() + i * nk, nk);

    if (bk == BiasKind::per_key) {
        g.dbias = Tensor({nk});
        for (int64_t i = 0; i < nq; ++i)
            for (int64_t j = 0; j < nk; ++j) g.dbias[j] += dlogits.at2(i, j);
    } else if (bk == BiasKind::full) {
        g.dbias = dlogits;
    }

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    g.dq = Tensor({nq, d});
    matmul(dlogits.ptr(), k.ptr(), g.dq.ptr(), nq, nk, d);
    for (double& x : g.dq.data) x *= inv_sqrt_d;
    g.dk = Tensor({nk, d});
    matmul_tn(dlogits.ptr(), q.ptr(), g.dk.ptr(), nk, nq, d);
    for (double& x : g.dk.data) x *= inv_sqrt_d;
    return g;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

Tensor gelu(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data) v = gelu(v);
    return y;
}

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || x.cols() != w.rows() || b.numel() != w.cols())
        fail("mlp-shape", "linear layer shape mismatch");
    const int64_t n = x.rows(), din = x.cols(), dout = w.cols();
    Tensor y({n, dout});
    matmul(x.ptr(), w.ptr(), y.ptr(), n, din, dout);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < dout; ++j) y.at2(i, j) += b[j];
    return y;
}

LinearGrads linear_vjp(const Tensor& x, const Tensor& w, const Tensor& dy) {
    const int64_t n = x.rows(), din = x.cols(), dout = w.cols();
    LinearGrads g;
    g.dx = Tensor({n, din});
    matmul_nt(dy.ptr(), w.ptr(), g.dx.ptr(), n, dout, din);
    g.dw = Tensor({din, dout});
    matmul_tn(x.ptr(), dy.ptr(), g.dw.ptr(), din, n, dout);
    g.db = Tensor({dout});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < dout; ++j) g.db[j] += dy.at2(i, j);
    return g;
}

Tensor mlp_forward(const Tensor& x, const MlpWeights& w, MlpActivation act) {
    Tensor h = linear_forward(x, w.w1, w.b1);
    if (act == MlpActivation::gelu)
        for (double& v : h.data) v = gelu(v);
    Tensor y = linear_forward(h, w.w2, w.b2);
    require_finite(y, "mlp_forward");
    return y;
}

MlpGrads mlp_vjp(const Tensor& x, const MlpWeights& w, const Tensor& dy, MlpActivation act) {
    Tensor pre = linear_forward(x, w.w1, w.b1);
    Tensor h = pre;
    if (act == MlpActivation::gelu)
        for (double& v : h.data) v = gelu(v);
    LinearGrads g2 = linear_vjp(h, w.w2, dy);
    Tensor dh = std::move(g2.dx);
    if (act == MlpActivation::gelu)
        for (size_t i = 0; i < dh.data.size(); ++i) dh.data[i] *= gelu_grad(pre.data[i]);
    LinearGrads g1 = linear_vjp(x, w.w1, dh);
    return MlpGrads{std::move(g1.dx), std::move(g1.dw), std::move(g1.db), std::move(g2.dw),
                    std::move(g2.db)};
}

Tensor fourier_embed(const Tensor& coords, int num_freqs) {
    if (num_freqs < 1) fail("fourier-freqs", "num_freqs must be >= 1");
    const int64_t n = coords.numel();
    Tensor out({2 * num_freqs * n});
    int64_t idx = 0;
    for (int64_t i = 0; i < n; ++i) {
        double f = M_PI;
        for (int k = 0; k < num_freqs; ++k, f *= 2.0) out[idx++] = std::sin(f * coords[i]);
        f = M_PI;
        for (int k = 0; k < num_freqs; ++k, f *= 2.0) out[idx++] = std::cos(f * coords[i]);
    }
    return out;
}

// One separable pass along stride/count, gather form with the in-bounds kernel
// mass renormalized per cell.
static void blur_pass(const double* in, double* out, int64_t count, int64_t stride, int64_t lines,
                      int64_t line_stride, const std::vector<double>& kernel, int radius) {
    for (int64_t l = 0; l < lines; ++l) {
        const double* src = in + l * line_stride;
        double* dst = out + l * line_stride;
        for (int64_t i = 0; i < count; ++i) {
            double acc = 0.0, mass = 0.0;
            const int64_t lo = std::max<int64_t>(0, i - radius);
            const int64_t hi = std::min<int64_t>(count - 1, i + radius);
            for (int64_t j = lo; j <= hi; ++j) {
                const double kw = kernel[static_cast<size_t>(j - i + radius)];
                acc += kw * src[j * stride];
                mass += kw;
            }
            dst[i * stride] = acc / mass;
        }
    }
}

void gaussian_blur_grid(const double* in, double* out, int width, int height, double sigma,
                        int radius) {
    if (sigma <= 0.0) fail("blur-sigma", "sigma must be positive");
    if (radius < 1) fail("blur-radius", "radius must be >= 1");

    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double ksum = 0.0;
    for (int o = -radius; o <= radius; ++o) {
        const double w = std::exp(-0.5 * (static_cast<double>(o) * o) / (sigma * sigma));
        kernel[static_cast<size_t>(o + radius)] = w;
        ksum += w;
    }
    for (double& w : kernel) w /= ksum;

    const int64_t n = static_cast<int64_t>(width) * height;
    std::vector<double> tmp(static_cast<size_t>(n));
    double mass_in = 0.0;
    for (int64_t i = 0; i < n; ++i) mass_in += in[i];

    // horizontal then vertical
    blur_pass(in, tmp.data(), width, 1, height, width, kernel, radius);
    blur_pass(tmp.data(), out, height, width, width, 1, kernel, radius);

    double mass_out = 0.0;
    for (int64_t i = 0; i < n; ++i) mass_out += out[i];
    if (mass_in != 0.0 && mass_out != 0.0) {
        const double fix = mass_in / mass_out;
        for (int64_t i = 0; i < n; ++i) out[i] *= fix;
    }
}

static void layer_norm_dims(const Tensor& x, int64_t& rows, int64_t& cols) {
    if (x.rank() == 1) {
        rows = 1;
        cols = x.dim(0);
    } else if (x.rank() == 2) {
        rows = x.dim(0);
        cols = x.dim(1);
    } else {
        fail("norm-shape", "layer_norm expects rank 1 or 2");
    }
    if (cols == 0) fail("norm-shape", "feature width 0");
}

Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift) {
    int64_t rows, cols;
    layer_norm_dims(x, rows, cols);
    if (scale.numel() != cols || shift.numel() != cols)
        fail("norm-shape", "affine width mismatch");
    Tensor y(x.shape);
    for (int64_t r = 0; r < rows; ++r) {
        const double* xi = x.ptr() + r * cols;
        double* yi = y.ptr() + r * cols;
        double mean = 0.0;
        for (int64_t j = 0; j < cols; ++j) mean += xi[j];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (int64_t j = 0; j < cols; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var /= static_cast<double>(cols);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        for (int64_t j = 0; j < cols; ++j) yi[j] = (xi[j] - mean) * inv * scale[j] + shift[j];
    }
    return y;
}

LayerNormGrads layer_norm_vjp(const Tensor& x, const Tensor& scale, const Tensor& shift,
                              const Tensor& dy) {
    (void)shift;
    int64_t rows, cols;
    layer_norm_dims(x, rows, cols);
    LayerNormGrads g;
    g.dx = Tensor(x.shape);
    g.dscale = Tensor({cols});
    g.dshift = Tensor({cols});
    const double invd = 1.0 / static_cast<double>(cols);
    for (int64_t r = 0; r < rows; ++r) {
        const double* xi = x.ptr() + r * cols;
        const double* dyi = dy.ptr() + r * cols;
        double* dxi = g.dx.ptr() + r * cols;
        double mean = 0.0;
        for (int64_t j = 0; j < cols; ++j) mean += xi[j];
        mean *= invd;
        double var = 0.0;
        for (int64_t j = 0; j < cols; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var *= invd;
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);

        // accumulate affine grads; dxhat = dy * scale
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            const double xhat = (xi[j] - mean) * inv;
            g.dscale[j] += dyi[j] * xhat;
            g.dshift[j] += dyi[j];
            const double dxhat = dyi[j] * scale[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
        }
        for (int64_t j = 0; j < cols; ++j) {
            const double xhat = (xi[j] - mean) * inv;
            const double dxhat = dyi[j] * scale[j];
            dxi[j] = inv * (dxhat - invd * sum_dxhat - xhat * invd * sum_dxhat_xhat);
        }
    }
    return g;
}

double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace gvd
