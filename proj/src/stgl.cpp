#include "gvd/stgl.hpp"

#include <cmath>
#include <cstring>

namespace gvd {

MlpLayer make_mlp(ParamStore& ps, const std::string& name, int din, int hidden, int dout,
                  Stage stage) {
    MlpLayer l;
    l.l1 = make_linear(ps, name + ".l1", din, hidden, stage);
    l.l2 = make_linear(ps, name + ".l2", hidden, dout, stage);
    return l;
}

Tensor mlp_fwd(const ParamStore& ps, const MlpLayer& l, const Tensor& x, MlpCache* cache) {
    MlpCache local;
    MlpCache& c = cache ? *cache : local;
    c.pre = linear_fwd(ps, l.l1, x, &c.c1);
    Tensor h = c.pre;
    for (double& v : h.data) v = gelu(v);
    return linear_fwd(ps, l.l2, h, &c.c2);
}

void mlp_bwd(ParamStore& ps, const MlpLayer& l, const MlpCache& cache, const Tensor& dy,
             Tensor* dx_acc) {
    Tensor dh(cache.pre.shape);
    linear_bwd(ps, l.l2, cache.c2, dy, &dh);
    for (size_t i = 0; i < dh.data.size(); ++i) dh.data[i] *= gelu_grad(cache.pre.data[i]);
    linear_bwd(ps, l.l1, cache.c1, dh, dx_acc);
}

GroundedEncoder make_grounded_encoder(ParamStore& ps, const std::string& name, int dtext,
                                      int hidden, int dg, int num_freqs) {
    GroundedEncoder enc;
    enc.dtext = dtext;
    enc.dg = dg;
    enc.num_freqs = num_freqs;
    enc.mlp = make_mlp(ps, name + ".mlp", dtext + 8 * num_freqs, hidden, dg, Stage::stga);
    enc.null_text = ps.add(name + ".null_text", {dtext}, Stage::stga);
    enc.null_coord = ps.add(name + ".null_coord", {8 * num_freqs}, Stage::stga);
    return enc;
}

static void condition_coords(const ConditionSlot& slot, double out[4]) {
    if (slot.kind == ConditionSlot::Kind::box) {
        out[0] = slot.box.x_min;
        out[1] = slot.box.y_min;
        out[2] = slot.box.x_max;
        out[3] = slot.box.y_max;
    } else {  // keypoint encoded as (x, y, x, y)
        out[0] = out[2] = slot.point.x;
        out[1] = out[3] = slot.point.y;
    }
}

Tensor encode_grounded_features(const ParamStore& ps, const GroundedEncoder& enc,
                                const GroundingTrack& track, const TextEmbedder& embedder,
                                EncodeCache* cache) {
    if (embedder.width() != enc.dtext)
        fail("grounded-width", "embedder width " + std::to_string(embedder.width()) +
                                   " != encoder text width " + std::to_string(enc.dtext));
    const int n = track.num_frames;
    const int m = static_cast<int>(track.objects.size());
    const int dcoord = 8 * enc.num_freqs;
    const int din = enc.dtext + dcoord;

    EncodeCache local;
    EncodeCache& c = cache ? *cache : local;
    c.frames = n;
    c.objects = m;
    c.inputs = Tensor({static_cast<int64_t>(n) * m, din});
    c.is_null.assign(static_cast<size_t>(n) * m, 0);

    // phrase embeddings are shared across frames
    std::vector<Tensor> phrase_embeds;
    phrase_embeds.reserve(static_cast<size_t>(m));
    for (const TrackObject& obj : track.objects) phrase_embeds.push_back(embedder.embed(obj.phrase));

    const Tensor& null_text = ps.value(enc.null_text);
    const Tensor& null_coord = ps.value(enc.null_coord);
    for (int j = 0; j < n; ++j) {
        for (int k = 0; k < m; ++k) {
            const int64_t row = static_cast<int64_t>(j) * m + k;
            double* dst = c.inputs.ptr() + row * din;
            const ConditionSlot& slot = track.objects[static_cast<size_t>(k)].frames[static_cast<size_t>(j)];
            if (slot.present()) {
                std::memcpy(dst, phrase_embeds[static_cast<size_t>(k)].ptr(),
                            static_cast<size_t>(enc.dtext) * sizeof(double));
                double coords[4];
                condition_coords(slot, coords);
                const Tensor emb = fourier_embed(Tensor::from({4}, {coords[0], coords[1], coords[2], coords[3]}),
                                                 enc.num_freqs);
                std::memcpy(dst + enc.dtext, emb.ptr(), static_cast<size_t>(dcoord) * sizeof(double));
            } else {
                std::memcpy(dst, null_text.ptr(), static_cast<size_t>(enc.dtext) * sizeof(double));
                std::memcpy(dst + enc.dtext, null_coord.ptr(), static_cast<size_t>(dcoord) * sizeof(double));
                c.is_null[static_cast<size_t>(row)] = 1;
            }
        }
    }

    Tensor flat = mlp_fwd(ps, enc.mlp, c.inputs, &c.mlp_c);  // (N*M x dg)
    Tensor g = Tensor({n, m, enc.dg});
    g.data = std::move(flat.data);
    return g;
}

void encode_grounded_backward(ParamStore& ps, const GroundedEncoder& enc, const EncodeCache& cache,
                              const Tensor& dg) {
    const int64_t rows = static_cast<int64_t>(cache.frames) * cache.objects;
    const int din = enc.dtext + 8 * enc.num_freqs;
    Tensor dflat;
    dflat.shape = {rows, enc.dg};
    dflat.data = dg.data;
    Tensor din_acc({rows, din});
    mlp_bwd(ps, enc.mlp, cache.mlp_c, dflat, &din_acc);
    Tensor& d_null_text = ps.grad(enc.null_text);
    Tensor& d_null_coord = ps.grad(enc.null_coord);
    for (int64_t r = 0; r < rows; ++r) {
        if (!cache.is_null[static_cast<size_t>(r)]) continue;  // data rows are leaves
        const double* src = din_acc.ptr() + r * din;
        for (int i = 0; i < enc.dtext; ++i) d_null_text[i] += src[i];
        for (int i = 0; i < 8 * enc.num_freqs; ++i) d_null_coord[i] += src[enc.dtext + i];
    }
}

Tensor null_grounded_feature(const ParamStore& ps, const GroundedEncoder& enc, EncodeCache* cache) {
    const int din = enc.dtext + 8 * enc.num_freqs;
    EncodeCache local;
    EncodeCache& c = cache ? *cache : local;
    c.frames = 1;
    c.objects = 1;
    c.inputs = Tensor({1, din});
    c.is_null.assign(1, 1);
    std::memcpy(c.inputs.ptr(), ps.value(enc.null_text).ptr(),
                static_cast<size_t>(enc.dtext) * sizeof(double));
    std::memcpy(c.inputs.ptr() + enc.dtext, ps.value(enc.null_coord).ptr(),
                static_cast<size_t>(8 * enc.num_freqs) * sizeof(double));
    return mlp_fwd(ps, enc.mlp, c.inputs, &c.mlp_c);
}

ResidualAttn make_residual_attn(ParamStore& ps, const std::string& name, int d, int d_kv,
                                Stage stage, bool zero_out) {
    ResidualAttn l;
    l.ln = make_layer_norm(ps, name + ".ln", d, stage);
    l.attn = make_attention(ps, name + ".attn", d, d_kv, d, d, stage, zero_out);
    return l;
}

Tensor residual_self_attn_fwd(const ParamStore& ps, const ResidualAttn& l, const Tensor& x,
                              const Tensor* bias, ResAttnCache* cache) {
    if (bias && bias->numel() != x.rows())
        fail("bias-length", "bias length " + std::to_string(bias->numel()) + " != token count " +
                                std::to_string(x.rows()));
    ResAttnCache local;
    ResAttnCache& c = cache ? *cache : local;
    Tensor normed = norm_fwd(ps, l.ln, x, &c.nc);
    Tensor y = attention_fwd(ps, l.attn, normed, normed, bias, &c.ac);
    if (attention_out_is_zero(ps, l.attn)) {
        c.add_skipped = true;
        return x;
    }
    return add(x, y);
}

Tensor residual_self_attn_bwd(ParamStore& ps, const ResidualAttn& l, const ResAttnCache& cache,
                              const Tensor& dy, Tensor* dbias_acc) {
    Tensor dnormed(cache.ac.qc.x.shape);
    attention_bwd(ps, l.attn, cache.ac, dy, &dnormed, &dnormed, dbias_acc);
    Tensor dx = dy;  // residual
    norm_bwd(ps, l.ln, cache.nc, dnormed, &dx);
    return dx;
}

Tensor residual_cross_attn_fwd(const ParamStore& ps, const ResidualAttn& l, const Tensor& x,
                               const Tensor& kv, ResAttnCache* cache) {
    ResAttnCache local;
    ResAttnCache& c = cache ? *cache : local;
    Tensor normed = norm_fwd(ps, l.ln, x, &c.nc);
    Tensor y = attention_fwd(ps, l.attn, normed, kv, nullptr, &c.ac);
    if (attention_out_is_zero(ps, l.attn)) {
        c.add_skipped = true;
        return x;
    }
    return add(x, y);
}

Tensor residual_cross_attn_bwd(ParamStore& ps, const ResidualAttn& l, const ResAttnCache& cache,
                               const Tensor& dy, Tensor* dkv_acc) {
    Tensor dnormed(cache.ac.qc.x.shape);
    Tensor dkv_scratch;
    Tensor* dkv = dkv_acc;
    if (!dkv) {
        dkv_scratch = Tensor(cache.ac.kc.x.shape);
        dkv = &dkv_scratch;
    }
    attention_bwd(ps, l.attn, cache.ac, dy, &dnormed, dkv);
    Tensor dx = dy;
    norm_bwd(ps, l.ln, cache.nc, dnormed, &dx);
    return dx;
}

TemporalAttend make_temporal_attend(ParamStore& ps, const std::string& name, int d, Stage stage) {
    TemporalAttend l;
    l.ln = make_layer_norm(ps, name + ".ln", d, stage);
    l.attn = make_attention(ps, name + ".attn", d, d, d, d, stage, /*zero_out=*/true);
    return l;
}

static Tensor gather_sequence(const Tensor& x, int64_t s) {
    const int64_t n = x.dim(0), seqs = x.dim(1), d = x.dim(2);
    Tensor seq({n, d});
    for (int64_t f = 0; f < n; ++f)
        std::memcpy(seq.ptr() + f * d, x.ptr() + (f * seqs + s) * d,
                    static_cast<size_t>(d) * sizeof(double));
    return seq;
}

static void scatter_sequence_add(Tensor& x, int64_t s, const Tensor& seq) {
    const int64_t n = x.dim(0), seqs = x.dim(1), d = x.dim(2);
    for (int64_t f = 0; f < n; ++f) {
        double* dst = x.ptr() + (f * seqs + s) * d;
        const double* src = seq.ptr() + f * d;
        for (int64_t i = 0; i < d; ++i) dst[i] += src[i];
    }
}

Tensor temporal_attend_fwd(const ParamStore& ps, const TemporalAttend& l, const Tensor& x,
                           TemporalCache* cache) {
    const int64_t n = x.dim(0), seqs = x.dim(1);
    TemporalCache local;
    TemporalCache& c = cache ? *cache : local;
    c.frames = static_cast<int>(n);
    c.seqs = static_cast<int>(seqs);
    c.seq_c.resize(static_cast<size_t>(seqs));
    c.add_skipped = attention_out_is_zero(ps, l.attn);

    Tensor out = x;
    for (int64_t s = 0; s < seqs; ++s) {
        ResAttnCache& sc = c.seq_c[static_cast<size_t>(s)];
        Tensor seq = gather_sequence(x, s);
        Tensor normed = norm_fwd(ps, l.ln, seq, &sc.nc);
        Tensor y = attention_fwd(ps, l.attn, normed, normed, nullptr, &sc.ac);
        if (!c.add_skipped) scatter_sequence_add(out, s, y);
    }
    return out;
}

Tensor temporal_attend_bwd(ParamStore& ps, const TemporalAttend& l, const TemporalCache& cache,
                           const Tensor& dy) {
    Tensor dx = dy;  // residual path
    const int64_t seqs = cache.seqs;
    for (int64_t s = 0; s < seqs; ++s) {
        const ResAttnCache& sc = cache.seq_c[static_cast<size_t>(s)];
        Tensor dseq_out = gather_sequence(dy, s);
        Tensor dnormed(sc.ac.qc.x.shape);
        attention_bwd(ps, l.attn, sc.ac, dseq_out, &dnormed, &dnormed);
        Tensor dseq(sc.nc.x.shape);
        norm_bwd(ps, l.ln, sc.nc, dnormed, &dseq);
        scatter_sequence_add(dx, s, dseq);
    }
    return dx;
}

StgaLayer make_stga(ParamStore& ps, const std::string& name, int width, int dg, Stage stage) {
    StgaLayer l;
    l.g_proj = make_linear(ps, name + ".g_proj", dg, width, stage);
    l.ln = make_layer_norm(ps, name + ".ln", width, stage);
    l.attn = make_attention(ps, name + ".attn", width, width, width, width, stage);
    l.gamma = ps.add(name + ".gamma", {1}, stage, Init::zeros);
    return l;
}

static Tensor concat_rows(const Tensor& a, const Tensor& b) {
    Tensor out({a.rows() + b.rows(), a.cols()});
    std::memcpy(out.ptr(), a.ptr(), a.data.size() * sizeof(double));
    std::memcpy(out.ptr() + a.data.size(), b.ptr(), b.data.size() * sizeof(double));
    return out;
}

Tensor stga_forward(const ParamStore& ps, const StgaLayer& l, const Tensor& z,
                    const Tensor& g_frame, double beta, double gate, bool skip_branch,
                    StgaCache* cache) {
    StgaCache local;
    StgaCache& c = cache ? *cache : local;
    c.n_vis = static_cast<int>(z.rows());
    c.m = static_cast<int>(g_frame.numel() > 0 ? g_frame.rows() : 0);
    c.gate = gate;
    c.beta = beta;
    const double gamma = ps.value(l.gamma)[0];
    c.scale = gate * beta * std::tanh(gamma);
    if (skip_branch || c.m == 0) {
        c.computed = false;
        return z;
    }
    c.computed = true;
    Tensor gp = linear_fwd(ps, l.g_proj, g_frame, &c.gproj_c);
    Tensor cat = concat_rows(z, gp);
    Tensor normed = norm_fwd(ps, l.ln, cat, &c.norm_c);
    Tensor attn_out = attention_fwd(ps, l.attn, normed, normed, nullptr, &c.attn_c);
    // token selection: keep exactly the visual-token rows
    c.ts = Tensor({z.rows(), z.cols()});
    std::memcpy(c.ts.ptr(), attn_out.ptr(), c.ts.data.size() * sizeof(double));
    if (c.scale == 0.0) return z;
    Tensor out = z;
    axpy(c.scale, c.ts, out);
    return out;
}

Tensor stga_backward(ParamStore& ps, const StgaLayer& l, const StgaCache& cache, const Tensor& dy,
                     Tensor* dg_frame_acc, double* dgate_acc) {
    Tensor dz = dy;  // residual
    if (!cache.computed) return dz;

    const double gamma = ps.value(l.gamma)[0];
    const double th = std::tanh(gamma);
    const double dscale = dot(dy, cache.ts);
    ps.grad(l.gamma)[0] += dscale * cache.gate * cache.beta * (1.0 - th * th);
    if (dgate_acc) *dgate_acc += dscale * cache.beta * th;

    const int64_t n = cache.n_vis, m = cache.m, w = dy.cols();
    // cotangent of the attention output: selected rows carry scale * dy,
    // discarded grounded rows carry zero
    Tensor dattn({n + m, w});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < w; ++j) dattn.at2(i, j) = cache.scale * dy.at2(i, j);

    Tensor dnormed({n + m, w});
    attention_bwd(ps, l.attn, cache.attn_c, dattn, &dnormed, &dnormed);
    Tensor dcat({n + m, w});
    norm_bwd(ps, l.ln, cache.norm_c, dnormed, &dcat);

    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < w; ++j) dz.at2(i, j) += dcat.at2(i, j);
    Tensor dgp({m, w});
    std::memcpy(dgp.ptr(), dcat.ptr() + n * w, static_cast<size_t>(m * w) * sizeof(double));
    linear_bwd(ps, l.g_proj, cache.gproj_c, dgp, dg_frame_acc);
    return dz;
}

StglBlock make_stgl_block(ParamStore& ps, const std::string& name, int width, int dg, int dtext) {
    StglBlock blk;
    blk.width = width;
    blk.self_attn = make_residual_attn(ps, name + ".self", width, width, Stage::base);
    blk.stga = make_stga(ps, name + ".stga", width, dg, Stage::stga);
    blk.cross_attn = make_residual_attn(ps, name + ".cross", width, dtext, Stage::base);
    blk.temp_attn = make_temporal_attend(ps, name + ".temporal", width, Stage::temporal);
    return blk;
}

Tensor frame_slice(const Tensor& x, int64_t f) {
    const int64_t b = x.dim(1), c = x.dim(2);
    Tensor out({b, c});
    std::memcpy(out.ptr(), x.ptr() + f * b * c, static_cast<size_t>(b * c) * sizeof(double));
    return out;
}

void set_frame_slice(Tensor& x, int64_t f, const Tensor& v) {
    const int64_t b = x.dim(1), c = x.dim(2);
    std::memcpy(x.ptr() + f * b * c, v.ptr(), static_cast<size_t>(b * c) * sizeof(double));
}

Tensor stgl_block_forward(const ParamStore& ps, const StglBlock& blk, const Tensor& x,
                          const Tensor* g, const Tensor& c, const std::vector<Tensor>* biases,
                          const StglBlockMode& mode, StglBlockCache* cache) {
    const int64_t n = x.dim(0);
    if (biases && static_cast<int64_t>(biases->size()) != n)
        fail("bias-length", "one bias per frame expected");
    StglBlockCache local;
    StglBlockCache& cc = cache ? *cache : local;
    cc.frames = static_cast<int>(n);
    cc.tokens = static_cast<int>(x.dim(1));
    cc.mode = mode;
    cc.has_g = mode.grounding && g != nullptr && g->numel() > 0;
    cc.self_c.resize(static_cast<size_t>(n));
    cc.cross_c.resize(static_cast<size_t>(n));
    cc.stga_c.resize(static_cast<size_t>(n));

    Tensor out = x;
    for (int64_t f = 0; f < n; ++f) {
        Tensor zf = frame_slice(out, f);
        zf = residual_self_attn_fwd(ps, blk.self_attn, zf,
                                    biases ? &(*biases)[static_cast<size_t>(f)] : nullptr,
                                    &cc.self_c[static_cast<size_t>(f)]);
        if (mode.grounding) {
            Tensor gf = cc.has_g ? frame_slice(*g, f) : Tensor();
            zf = stga_forward(ps, blk.stga, zf, gf, mode.beta, mode.gate, mode.skip_stga,
                              &cc.stga_c[static_cast<size_t>(f)]);
        }
        zf = residual_cross_attn_fwd(ps, blk.cross_attn, zf, frame_slice(c, f),
                                     &cc.cross_c[static_cast<size_t>(f)]);
        set_frame_slice(out, f, zf);
    }
    if (mode.temporal) out = temporal_attend_fwd(ps, blk.temp_attn, out, &cc.temp_c);
    return out;
}

Tensor stgl_block_backward(ParamStore& ps, const StglBlock& blk, const StglBlockCache& cache,
                           const Tensor& dy, Tensor* dg_acc, double* dgate_acc,
                           Tensor* dbias_acc) {
    Tensor dx = cache.mode.temporal ? temporal_attend_bwd(ps, blk.temp_attn, cache.temp_c, dy) : dy;
    const int64_t n = cache.frames;
    for (int64_t f = 0; f < n; ++f) {
        Tensor dzf = frame_slice(dx, f);
        dzf = residual_cross_attn_bwd(ps, blk.cross_attn, cache.cross_c[static_cast<size_t>(f)],
                                      dzf, nullptr);
        if (cache.mode.grounding) {
            Tensor dgf;
            Tensor* dgf_ptr = nullptr;
            if (dg_acc && cache.stga_c[static_cast<size_t>(f)].computed) {
                dgf = Tensor({dg_acc->dim(1), dg_acc->dim(2)});
                dgf_ptr = &dgf;
            }
            dzf = stga_backward(ps, blk.stga, cache.stga_c[static_cast<size_t>(f)], dzf, dgf_ptr,
                                dgate_acc);
            if (dgf_ptr) {
                const int64_t m = dg_acc->dim(1), d = dg_acc->dim(2);
                double* dst = dg_acc->ptr() + f * m * d;
                for (int64_t i = 0; i < m * d; ++i) dst[i] += dgf.ptr()[i];
            }
        }
        Tensor dbias_f;
        Tensor* dbias_ptr = nullptr;
        if (dbias_acc && cache.self_c[static_cast<size_t>(f)].ac.has_bias) {
            dbias_f = Tensor({dbias_acc->dim(1)});
            dbias_ptr = &dbias_f;
        }
        dzf = residual_self_attn_bwd(ps, blk.self_attn, cache.self_c[static_cast<size_t>(f)], dzf,
                                     dbias_ptr);
        if (dbias_ptr) {
            double* dst = dbias_acc->ptr() + f * dbias_acc->dim(1);
            for (int64_t i = 0; i < dbias_acc->dim(1); ++i) dst[i] += dbias_f[i];
        }
        set_frame_slice(dx, f, dzf);
    }
    return dx;
}

}  // namespace gvd
