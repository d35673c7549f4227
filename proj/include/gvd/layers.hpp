#pragma once

#include "gvd/ops.hpp"
#include "gvd/params.hpp"

namespace gvd {

// Parameter-backed layers. Each holds ids into a ParamStore; forward fills a
// cache, backward consumes it and accumulates parameter gradients. Backward
// functions ACCUMULATE into the caller's input-gradient tensors so aliased
// accumulators (self-attention q == kv) stay correct.

struct LinearLayer {
    int w = -1, b = -1;
    int din = 0, dout = 0;
};

LinearLayer make_linear(ParamStore& ps, const std::string& name, int din, int dout, Stage stage,
                        Init init = Init::normal_scaled);

struct LinearCache {
    Tensor x;
};
Tensor linear_fwd(const ParamStore& ps, const LinearLayer& l, const Tensor& x, LinearCache* cache);
void linear_bwd(ParamStore& ps, const LinearLayer& l, const LinearCache& cache, const Tensor& dy,
                Tensor* dx_acc);

struct LayerNormLayer {
    int scale = -1, shift = -1;
    int d = 0;
};

LayerNormLayer make_layer_norm(ParamStore& ps, const std::string& name, int d, Stage stage);

struct NormCache {
    Tensor x;
};
Tensor norm_fwd(const ParamStore& ps, const LayerNormLayer& l, const Tensor& x, NormCache* cache);
void norm_bwd(ParamStore& ps, const LayerNormLayer& l, const NormCache& cache, const Tensor& dy,
              Tensor* dx_acc);

// Single-head attention: projections around the scaled-dot primitive.
struct AttentionLayer {
    LinearLayer q, k, v, o;
};

// zero_out zero-initializes the output projection (zero-init temporal layers).
AttentionLayer make_attention(ParamStore& ps, const std::string& name, int d_q_in, int d_kv_in,
                              int d_attn, int d_out, Stage stage, bool zero_out = false);

struct AttnCache {
    LinearCache qc, kc, vc, oc;
    Tensor query, key, value, attn;
    bool has_bias = false;
    Tensor bias;  // per-key vector when present
};

// q_in (n x d_q_in), kv_in (m x d_kv_in), bias optional per-key (m).
Tensor attention_fwd(const ParamStore& ps, const AttentionLayer& l, const Tensor& q_in,
                     const Tensor& kv_in, const Tensor* bias, AttnCache* cache);
void attention_bwd(ParamStore& ps, const AttentionLayer& l, const AttnCache& cache,
                   const Tensor& dy, Tensor* dq_in_acc, Tensor* dkv_in_acc,
                   Tensor* dbias_acc = nullptr);

// True when the output projection maps everything to exactly zero, making the
// residual branch a bit-exact no-op.
bool attention_out_is_zero(const ParamStore& ps, const AttentionLayer& l);

}  // namespace gvd
