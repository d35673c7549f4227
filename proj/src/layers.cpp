#include "gvd/layers.hpp"

namespace gvd {

LinearLayer make_linear(ParamStore& ps, const std::string& name, int din, int dout, Stage stage,
                        Init init) {
    LinearLayer l;
    l.din = din;
    l.dout = dout;
    l.w = ps.add(name + ".w", {din, dout}, stage, init);
    l.b = ps.add(name + ".b", {dout}, stage, Init::zeros);
    return l;
}

Tensor linear_fwd(const ParamStore& ps, const LinearLayer& l, const Tensor& x, LinearCache* cache) {
    if (cache) cache->x = x;
    return linear_forward(x, ps.value(l.w), ps.value(l.b));
}

void linear_bwd(ParamStore& ps, const LinearLayer& l, const LinearCache& cache, const Tensor& dy,
                Tensor* dx_acc) {
    LinearGrads g = linear_vjp(cache.x, ps.value(l.w), dy);
    axpy(1.0, g.dw, ps.grad(l.w));
    axpy(1.0, g.db, ps.grad(l.b));
    if (dx_acc) axpy(1.0, g.dx, *dx_acc);
}

LayerNormLayer make_layer_norm(ParamStore& ps, const std::string& name, int d, Stage stage) {
    LayerNormLayer l;
    l.d = d;
    l.scale = ps.add(name + ".scale", {d}, stage, Init::zeros);
    l.shift = ps.add(name + ".shift", {d}, stage, Init::zeros);
    for (double& v : ps.at(l.scale).value.data) v = 1.0;
    return l;
}

Tensor norm_fwd(const ParamStore& ps, const LayerNormLayer& l, const Tensor& x, NormCache* cache) {
    if (cache) cache->x = x;
    return layer_norm(x, ps.value(l.scale), ps.value(l.shift));
}

void norm_bwd(ParamStore& ps, const LayerNormLayer& l, const NormCache& cache, const Tensor& dy,
              Tensor* dx_acc) {
    LayerNormGrads g = layer_norm_vjp(cache.x, ps.value(l.scale), ps.value(l.shift), dy);
    axpy(1.0, g.dscale, ps.grad(l.scale));
    axpy(1.0, g.dshift, ps.grad(l.shift));
    if (dx_acc) axpy(1.0, g.dx, *dx_acc);
}

AttentionLayer make_attention(ParamStore& ps, const std::string& name, int d_q_in, int d_kv_in,
                              int d_attn, int d_out, Stage stage, bool zero_out) {
    AttentionLayer l;
    l.q = make_linear(ps, name + ".q", d_q_in, d_attn, stage);
    l.k = make_linear(ps, name + ".k", d_kv_in, d_attn, stage);
    l.v = make_linear(ps, name + ".v", d_kv_in, d_attn, stage);
    l.o = make_linear(ps, name + ".o", d_attn, d_out, stage,
                      zero_out ? Init::zeros : Init::normal_scaled);
    return l;
}

Tensor attention_fwd(const ParamStore& ps, const AttentionLayer& l, const Tensor& q_in,
                     const Tensor& kv_in, const Tensor* bias, AttnCache* cache) {
    AttnCache local;
    AttnCache& c = cache ? *cache : local;
    c.query = linear_fwd(ps, l.q, q_in, &c.qc);
    c.key = linear_fwd(ps, l.k, kv_in, &c.kc);
    c.value = linear_fwd(ps, l.v, kv_in, &c.vc);
    c.has_bias = bias != nullptr && bias->numel() > 0;
    if (c.has_bias) c.bias = *bias;
    Tensor h = scaled_dot_attention(c.query, c.key, c.value, c.has_bias ? &c.bias : nullptr,
                                    &c.attn);
    return linear_fwd(ps, l.o, h, &c.oc);
}

void attention_bwd(ParamStore& ps, const AttentionLayer& l, const AttnCache& cache,
                   const Tensor& dy, Tensor* dq_in_acc, Tensor* dkv_in_acc, Tensor* dbias_acc) {
    LinearGrads go = linear_vjp(cache.oc.x, ps.value(l.o.w), dy);
    axpy(1.0, go.dw, ps.grad(l.o.w));
    axpy(1.0, go.db, ps.grad(l.o.b));
    AttentionGrads ga = scaled_dot_attention_vjp(cache.query, cache.key, cache.value,
                                                 cache.has_bias ? &cache.bias : nullptr,
                                                 cache.attn, go.dx);
    if (dbias_acc && cache.has_bias) axpy(1.0, ga.dbias, *dbias_acc);
    linear_bwd(ps, l.q, cache.qc, ga.dq, dq_in_acc);
    linear_bwd(ps, l.k, cache.kc, ga.dk, dkv_in_acc);
    linear_bwd(ps, l.v, cache.vc, ga.dv, dkv_in_acc);
}

bool attention_out_is_zero(const ParamStore& ps, const AttentionLayer& l) {
    for (double v : ps.value(l.o.w).data)
        if (v != 0.0) return false;
    for (double v : ps.value(l.o.b).data)
        if (v != 0.0) return false;
    return true;
}

}  // namespace gvd
