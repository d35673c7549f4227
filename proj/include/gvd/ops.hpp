#pragma once

#include <optional>

#include "gvd/tensor.hpp"

namespace gvd {

// Stable softmax over a vector (max subtraction). Throws "empty-softmax".
Tensor softmax(const Tensor& x);
// Row-wise stable softmax on a (rows x cols) matrix, in place into y.
void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols);
// dx for one softmaxed row: dx = y * (dy - <y, dy>)
void softmax_row_vjp(const double* y, const double* dy, double* dx, int64_t n);
Tensor softmax_vjp(const Tensor& y, const Tensor& dy);

enum class BiasKind { none, per_key, full };

// out (nq x dv) = softmax(Q K^T / sqrt(d) + bias) V. bias is either a per-key
// vector of length nk (added to every query row) or a full (nq x nk) matrix.
// Throws "attention-shape" on width/row mismatches.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const Tensor* bias = nullptr,
                            Tensor* attn_out = nullptr);

struct AttentionGrads {
    Tensor dq, dk, dv, dbias;
};
AttentionGrads scaled_dot_attention_vjp(const Tensor& q, const Tensor& k, const Tensor& v,
                                        const Tensor* bias, const Tensor& attn,
                                        const Tensor& dout);

double gelu(double x);
double gelu_grad(double x);
Tensor gelu(const Tensor& x);

enum class MlpActivation { gelu, identity };

struct MlpWeights {
    Tensor w1, b1;  // (din x hidden), (hidden)
    Tensor w2, b2;  // (hidden x dout), (dout)
};

// Two affine layers with a smooth activation between. The identity activation
// is a test hook. Throws "mlp-shape".
Tensor mlp_forward(const Tensor& x, const MlpWeights& w,
                   MlpActivation act = MlpActivation::gelu);

struct MlpGrads {
    Tensor dx, dw1, db1, dw2, db2;
};
MlpGrads mlp_vjp(const Tensor& x, const MlpWeights& w, const Tensor& dy,
                 MlpActivation act = MlpActivation::gelu);

// sin/cos of 2^k * pi * coord, k = 0..num_freqs-1; per coordinate the sin
// block precedes the cos block. Output length 2 * num_freqs * len(coords).
Tensor fourier_embed(const Tensor& coords, int num_freqs);

// Separable truncated Gaussian blur. The in-bounds kernel mass is renormalized
// per cell, then the result is rescaled so the total mass matches the input
// exactly. Throws "blur-sigma" / "blur-radius".
void gaussian_blur_grid(const double* in, double* out, int width, int height, double sigma,
                        int radius);

constexpr double kLayerNormEps = 1e-5;

// Normalization over the feature axis (rank-1 vector or rank-2 rows of
// tokens), then affine: y = xhat * scale + shift. Throws "norm-shape".
Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift);

struct LayerNormGrads {
    Tensor dx, dscale, dshift;
};
LayerNormGrads layer_norm_vjp(const Tensor& x, const Tensor& scale, const Tensor& shift,
                              const Tensor& dy);

// y (n x dout) = x (n x din) * w + b
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b);
struct LinearGrads {
    Tensor dx, dw, db;
};
LinearGrads linear_vjp(const Tensor& x, const Tensor& w, const Tensor& dy);

double sigmoid(double x);

}  // namespace gvd
