#include "gvd/diffusion.hpp"

#include <cmath>
#include <cstring>

namespace gvd {

NoiseSchedule linear_beta_schedule(int T, double beta_start, double beta_end) {
    if (T < 1 || !(beta_start > 0.0) || !(beta_start < beta_end) || !(beta_end < 1.0))
        fail("schedule-bounds", "need T >= 1 and 0 < beta_start < beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.assign(static_cast<size_t>(T) + 1, 0.0);
    s.alpha_bar.assign(static_cast<size_t>(T) + 1, 1.0);
    for (int t = 1; t <= T; ++t) {
        s.beta[static_cast<size_t>(t)] =
            T == 1 ? beta_start
                   : beta_start + (beta_end - beta_start) * (t - 1) / static_cast<double>(T - 1);
        s.alpha_bar[static_cast<size_t>(t)] =
            s.alpha_bar[static_cast<size_t>(t - 1)] * (1.0 - s.beta[static_cast<size_t>(t)]);
    }
    return s;
}

Tensor add_noise(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    if (t < 0 || t > sched.T) fail("timestep-range", "t = " + std::to_string(t));
    if (!z0.same_shape(eps)) fail("tensor-shape", "noise shape must match the latent");
    const double ab = sched.alpha_bar[static_cast<size_t>(t)];
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    Tensor out = z0;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * z0.data[i] + b * eps.data[i];
    return out;
}

Tensor ddim_step(const Tensor& zt, const Tensor& eps_hat, int t, int t_prev,
                 const NoiseSchedule& sched) {
    if (t_prev < 0 || t_prev >= t || t > sched.T)
        fail("ddim-order", "need T >= t > t_prev >= 0, got t = " + std::to_string(t) +
                               ", t_prev = " + std::to_string(t_prev));
    if (!zt.same_shape(eps_hat)) fail("tensor-shape", "prediction shape must match the latent");
    const double ab_t = sched.alpha_bar[static_cast<size_t>(t)];
    const double ab_p = sched.alpha_bar[static_cast<size_t>(t_prev)];
    const double inv_sqrt_ab_t = 1.0 / std::sqrt(ab_t);
    const double sig_t = std::sqrt(1.0 - ab_t);
    const double a_p = std::sqrt(ab_p), sig_p = std::sqrt(1.0 - ab_p);
    Tensor out = zt;
    for (size_t i = 0; i < out.data.size(); ++i) {
        const double z0_hat = (zt.data[i] - sig_t * eps_hat.data[i]) * inv_sqrt_ab_t;
        out.data[i] = a_p * z0_hat + sig_p * eps_hat.data[i];
    }
    return out;
}

std::vector<int> sampling_timesteps(int T, int steps) {
    if (steps < 1 || steps > T) fail("schedule-bounds", "steps must lie in [1, T]");
    std::vector<int> ts(static_cast<size_t>(steps));
    for (int k = 0; k < steps; ++k)
        ts[static_cast<size_t>(k)] =
            static_cast<int>(static_cast<int64_t>(T) * (steps - 1 - k) / steps);
    return ts;
}

double diffusion_loss(const Tensor& pred, const Tensor& eps) {
    if (!pred.same_shape(eps)) fail("tensor-shape", "prediction/noise shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const double d = pred.data[i] - eps.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.numel());
}

// ---- token/space reshaping -------------------------------------------------

namespace {

Tensor to_tokens(const Tensor& z) {  // (N,C,H,W) -> (N,H*W,C)
    const int64_t n = z.dim(0), c = z.dim(1), h = z.dim(2), w = z.dim(3);
    Tensor x({n, h * w, c});
    for (int64_t f = 0; f < n; ++f)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t p = 0; p < h * w; ++p)
                x.data[static_cast<size_t>((f * h * w + p) * c + ch)] =
                    z.data[static_cast<size_t>((f * c + ch) * h * w + p)];
    return x;
}

Tensor from_tokens(const Tensor& x, int64_t h, int64_t w) {  // (N,T,C) -> (N,C,H,W)
    const int64_t n = x.dim(0), c = x.dim(2);
    Tensor z({n, c, h, w});
    for (int64_t f = 0; f < n; ++f)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t p = 0; p < h * w; ++p)
                z.data[static_cast<size_t>((f * c + ch) * h * w + p)] =
                    x.data[static_cast<size_t>((f * h * w + p) * c + ch)];
    return z;
}

// tokens at (h,w) -> (h/2,w/2) by 2x2 averaging, per frame
Tensor pool2x2(const Tensor& x, int64_t h, int64_t w) {
    const int64_t n = x.dim(0), d = x.dim(2), ho = h / 2, wo = w / 2;
    Tensor y({n, ho * wo, d});
    for (int64_t f = 0; f < n; ++f)
        for (int64_t yo = 0; yo < ho; ++yo)
            for (int64_t xo = 0; xo < wo; ++xo) {
                double* dst = y.ptr() + ((f * ho * wo) + yo * wo + xo) * d;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const double* src =
                            x.ptr() + ((f * h * w) + (2 * yo + dy) * w + (2 * xo + dx)) * d;
                        for (int64_t i = 0; i < d; ++i) dst[i] += src[i];
                    }
                for (int64_t i = 0; i < d; ++i) dst[i] *= 0.25;
            }
    return y;
}

Tensor pool2x2_bwd(const Tensor& dy, int64_t h, int64_t w) {
    const int64_t n = dy.dim(0), d = dy.dim(2), ho = h / 2, wo = w / 2;
    Tensor dx({n, h * w, d});
    for (int64_t f = 0; f < n; ++f)
        for (int64_t yo = 0; yo < ho; ++yo)
            for (int64_t xo = 0; xo < wo; ++xo) {
                const double* src = dy.ptr() + ((f * ho * wo) + yo * wo + xo) * d;
                for (int dyy = 0; dyy < 2; ++dyy)
                    for (int dxx = 0; dxx < 2; ++dxx) {
                        double* dst =
                            dx.ptr() + ((f * h * w) + (2 * yo + dyy) * w + (2 * xo + dxx)) * d;
                        for (int64_t i = 0; i < d; ++i) dst[i] = 0.25 * src[i];
                    }
            }
    return dx;
}

// tokens at (h,w) -> (2h,2w), nearest neighbor
Tensor upsample2x(const Tensor& x, int64_t h, int64_t w) {
    const int64_t n = x.dim(0), d = x.dim(2), ho = 2 * h, wo = 2 * w;
    Tensor y({n, ho * wo, d});
    for (int64_t f = 0; f < n; ++f)
        for (int64_t yo = 0; yo < ho; ++yo)
            for (int64_t xo = 0; xo < wo; ++xo) {
                const double* src = x.ptr() + ((f * h * w) + (yo / 2) * w + (xo / 2)) * d;
                double* dst = y.ptr() + ((f * ho * wo) + yo * wo + xo) * d;
                std::memcpy(dst, src, static_cast<size_t>(d) * sizeof(double));
            }
    return y;
}

Tensor upsample2x_bwd(const Tensor& dy, int64_t h, int64_t w) {  // dy at (2h,2w)
    const int64_t n = dy.dim(0), d = dy.dim(2), ho = 2 * h, wo = 2 * w;
    Tensor dx({n, h * w, d});
    for (int64_t f = 0; f < n; ++f)
        for (int64_t yo = 0; yo < ho; ++yo)
            for (int64_t xo = 0; xo < wo; ++xo) {
                const double* src = dy.ptr() + ((f * ho * wo) + yo * wo + xo) * d;
                double* dst = dx.ptr() + ((f * h * w) + (yo / 2) * w + (xo / 2)) * d;
                for (int64_t i = 0; i < d; ++i) dst[i] += src[i];
            }
    return dx;
}

Tensor concat_feat(const Tensor& a, const Tensor& b) {  // (N,T,da)+(N,T,db)
    const int64_t n = a.dim(0), tkn = a.dim(1), da = a.dim(2), db = b.dim(2);
    Tensor y({n, tkn, da + db});
    for (int64_t r = 0; r < n * tkn; ++r) {
        std::memcpy(y.ptr() + r * (da + db), a.ptr() + r * da,
                    static_cast<size_t>(da) * sizeof(double));
        std::memcpy(y.ptr() + r * (da + db) + da, b.ptr() + r * db,
                    static_cast<size_t>(db) * sizeof(double));
    }
    return y;
}

void split_feat(const Tensor& dcat, Tensor& da, Tensor& db) {
    const int64_t n = dcat.dim(0), tkn = dcat.dim(1);
    const int64_t wa = da.dim(2), wb = db.dim(2);
    for (int64_t r = 0; r < n * tkn; ++r) {
        std::memcpy(da.ptr() + r * wa, dcat.ptr() + r * (wa + wb),
                    static_cast<size_t>(wa) * sizeof(double));
        std::memcpy(db.ptr() + r * wb, dcat.ptr() + r * (wa + wb) + wa,
                    static_cast<size_t>(wb) * sizeof(double));
    }
}

Tensor linear3_fwd(const ParamStore& ps, const LinearLayer& l, const Tensor& x,
                   LinearCache* cache) {
    Tensor flat;
    flat.shape = {x.dim(0) * x.dim(1), x.dim(2)};
    flat.data = x.data;
    Tensor y = linear_fwd(ps, l, flat, cache);
    Tensor out;
    out.shape = {x.dim(0), x.dim(1), l.dout};
    out.data = std::move(y.data);
    return out;
}

void linear3_bwd(ParamStore& ps, const LinearLayer& l, const LinearCache& cache, const Tensor& dy,
                 Tensor* dx_acc3) {
    Tensor dflat;
    dflat.shape = {dy.dim(0) * dy.dim(1), dy.dim(2)};
    dflat.data = dy.data;
    if (!dx_acc3) {
        linear_bwd(ps, l, cache, dflat, nullptr);
        return;
    }
    Tensor dx2({dflat.dim(0), l.din});
    linear_bwd(ps, l, cache, dflat, &dx2);
    for (size_t i = 0; i < dx2.data.size(); ++i) dx_acc3->data[i] += dx2.data[i];
}

Tensor sinusoidal_time(int t, int dim) {
    Tensor e({1, dim});
    const int half = dim / 2;
    for (int k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(10000.0) * k / half);
        e[k] = std::sin(t * freq);
        e[half + k] = std::cos(t * freq);
    }
    return e;
}

}  // namespace

// ---- model ------------------------------------------------------------------

GroundedUNet::GroundedUNet(const ModelConfig& config, uint64_t init_seed) : cfg(config) {
    if (cfg.time_dim % 2 != 0) fail("config-value", "time_dim must be even");
    params.set_init_seed(init_seed);
    const int w0 = cfg.base_width, w1 = 2 * w0, w2 = 4 * w0;
    const int widths[kGatedLayers] = {w0, w1, w2, w1, w0};
    const char* names[kGatedLayers] = {"down0", "down1", "mid", "up1", "up0"};

    in_proj = make_linear(params, "unet.in_proj", cfg.channels, w0, Stage::base);
    out_proj = make_linear(params, "unet.out_proj", w0, cfg.channels, Stage::base);
    time_mlp = make_mlp(params, "unet.time_mlp", cfg.time_dim, 2 * cfg.time_dim, w0, Stage::base);
    for (int i = 0; i < kGatedLayers; ++i) {
        const std::string base = std::string("unet.") + names[i];
        temb_proj[static_cast<size_t>(i)] =
            make_linear(params, base + ".temb", w0, widths[i], Stage::base);
        blocks[static_cast<size_t>(i)] =
            make_stgl_block(params, base, widths[i], cfg.dg, cfg.dtext);
        gates[static_cast<size_t>(i)] =
            make_gate_layer(params, std::string("dgn.") + names[i], cfg.dg);
    }
    widen0 = make_linear(params, "unet.down0.widen", w0, w1, Stage::base);
    widen1 = make_linear(params, "unet.down1.widen", w1, w2, Stage::base);
    merge1 = make_linear(params, "unet.up1.merge", w2 + w1, w1, Stage::base);
    merge0 = make_linear(params, "unet.up0.merge", w1 + w0, w0, Stage::base);
    g_enc = make_grounded_encoder(params, "ground.encoder", cfg.dtext, cfg.g_hidden, cfg.dg,
                                  cfg.num_freqs);
    g_temporal = make_temporal_attend(params, "ground.temporal", cfg.dg, Stage::temporal);
    bias_gain = params.add("ground.bias_gain", {1}, Stage::stga, Init::zeros);
    embedder_ = std::make_unique<HashTextEmbedder>(cfg.dtext);
}

Tensor GroundedUNet::prompt_table(const std::string& prompt, int frames) const {
    const Tensor e = embedder_->embed(prompt);
    Tensor table({frames, 1, cfg.dtext});
    for (int f = 0; f < frames; ++f)
        std::memcpy(table.ptr() + static_cast<int64_t>(f) * cfg.dtext, e.ptr(),
                    static_cast<size_t>(cfg.dtext) * sizeof(double));
    return table;
}

Tensor GroundedUNet::null_prompt_table(int frames) const { return prompt_table("", frames); }

Tensor GroundedUNet::forward(const Tensor& z, int t, const Tensor& c, const GroundingTrack* track,
                             const ForwardOptions& opt, UNetCache* cache, ForwardInfo* info) {
    if (z.rank() != 4) fail("latent-shape", "latent must be (N,C,H,W)");
    const int64_t n = z.dim(0), ch = z.dim(1), h = z.dim(2), w = z.dim(3);
    if (ch != cfg.channels) fail("latent-shape", "channel count mismatch");
    if (h % 4 != 0 || w % 4 != 0 || h < 4 || w < 4)
        fail("latent-shape", "spatial dims must be multiples of 4");
    if (c.rank() != 3 || c.dim(0) != n || c.dim(2) != cfg.dtext)
        fail("latent-shape", "prompt table must be (N x tokens x dtext)");
    if (track && track->num_frames != static_cast<int>(n))
        fail("track-frames", "track frame count != latent frame count");

    UNetCache local;
    UNetCache& cc = cache ? *cache : local;
    cc.frames = n;
    cc.channels = ch;
    cc.height = h;
    cc.width = w;
    cc.opt = opt;
    cc.has_g = cc.has_bias = cc.gates_evaluated = cc.used_null_pool = false;
    for (auto& per_level : cc.bias_pregain) per_level.clear();
    const bool grounded = !opt.base_only;
    const bool train = opt.mode == RunMode::train;
    cc.has_track = grounded && track != nullptr;

    // grounded features, smoothed once per forward and shared by every block
    const Tensor* g_ptr = nullptr;
    if (cc.has_track) {
        Tensor g_raw =
            encode_grounded_features(params, g_enc, *track, *embedder_, &cc.enc_c);
        if (g_raw.dim(1) > 0) {
            cc.g = temporal_attend_fwd(params, g_temporal, g_raw, &cc.gtemp_c);
            cc.has_g = true;
            g_ptr = &cc.g;
        }
    }

    // gate decisions from pooled grounded features
    std::array<StglBlockMode, kGatedLayers> modes{};
    if (grounded) {
        if (cc.has_g) {
            const int64_t m = cc.g.dim(1), dg = cc.g.dim(2);
            cc.pooled = Tensor({m, dg});
            const double inv_n = 1.0 / static_cast<double>(n);
            for (int64_t f = 0; f < n; ++f)
                for (int64_t k = 0; k < m; ++k)
                    for (int64_t i = 0; i < dg; ++i)
                        cc.pooled.at2(k, i) += inv_n * cc.g.data[static_cast<size_t>((f * m + k) * dg + i)];
        } else {
            cc.pooled = null_grounded_feature(params, g_enc, &cc.null_c);
            cc.used_null_pool = true;
        }
        cc.gates_evaluated = true;
        for (int i = 0; i < kGatedLayers; ++i) {
            const double r = relevance_forward(params, gates[static_cast<size_t>(i)], cc.pooled,
                                               &cc.rel_c[static_cast<size_t>(i)]);
            GateDecision d;
            if (opt.gate_override) {
                d = gate_decision(r, train, 0.0, 0.0);
                d.value = (*opt.gate_override)[static_cast<size_t>(i)];
            } else if (train) {
                if (!opt.gate_eps || !opt.gate_uniform)
                    fail("gate-rng", "train mode requires gate noise streams");
                RngStream se = opt.gate_eps->substream(static_cast<uint64_t>(i));
                RngStream su = opt.gate_uniform->substream(static_cast<uint64_t>(i));
                d = sample_gate(r, true, se, su);
            } else {
                d = gate_decision(r, false, 0.0, 0.0);
            }
            d.layer = i;
            cc.decisions[static_cast<size_t>(i)] = d;
            if (info) info->gates.push_back(d);
        }
    }
    for (int i = 0; i < kGatedLayers; ++i) {
        StglBlockMode& m = modes[static_cast<size_t>(i)];
        m.grounding = grounded;
        m.temporal = grounded;
        m.beta = cfg.beta_stga;
        if (cc.gates_evaluated) {
            const GateDecision& d = cc.decisions[static_cast<size_t>(i)];
            m.gate = opt.gate_override ? d.value : (train ? d.value : d.hard);
            m.skip_stga = m.gate == 0.0;
        }
    }

    // grounding biases per level and frame; built when the injection can have
    // an effect now (gain != 0) or needs gradients (training)
    const double gain = params.value(bias_gain)[0];
    const int64_t h1 = h / 2, w1d = w / 2, h2 = h / 4, w2d = w / 4;
    const int64_t level_h[kGatedLayers] = {h, h1, h2, h1, h};
    const int64_t level_w[kGatedLayers] = {w, w1d, w2d, w1d, w};
    cc.has_bias = cc.has_track && !track->objects.empty() && (gain != 0.0 || train);
    if (cc.has_bias) {
        for (int64_t f = 0; f < n; ++f) {
            const GroundingMap map =
                frame_grounding_map(*track, static_cast<int>(f), static_cast<int>(w),
                                    static_cast<int>(h), cfg.keypoint_sigma, cfg.densify_sigma,
                                    cfg.densify_radius);
            for (int l = 0; l < kGatedLayers; ++l)
                cc.bias_pregain[static_cast<size_t>(l)].push_back(map_to_attention_bias(
                    map, static_cast<int>(level_w[l]), static_cast<int>(level_h[l]),
                    cfg.bias_lambda));
        }
    }
    std::array<std::vector<Tensor>, kGatedLayers> biases;
    if (cc.has_bias) {
        for (int l = 0; l < kGatedLayers; ++l) {
            biases[static_cast<size_t>(l)].reserve(static_cast<size_t>(n));
            for (int64_t f = 0; f < n; ++f)
                biases[static_cast<size_t>(l)].push_back(
                    scale(cc.bias_pregain[static_cast<size_t>(l)][static_cast<size_t>(f)], gain));
        }
    }
    auto level_bias = [&](int l) -> const std::vector<Tensor>* {
        return cc.has_bias ? &biases[static_cast<size_t>(l)] : nullptr;
    };

    // time embedding
    cc.t_sin = sinusoidal_time(t, cfg.time_dim);
    cc.temb = mlp_fwd(params, time_mlp, cc.t_sin, &cc.time_c);
    auto add_temb = [&](Tensor& x, int i) {
        const Tensor tv = linear_fwd(params, temb_proj[static_cast<size_t>(i)], cc.temb,
                                     &cc.temb_c[static_cast<size_t>(i)]);
        const int64_t d = x.dim(2);
        for (int64_t r = 0; r < x.dim(0) * x.dim(1); ++r)
            for (int64_t j = 0; j < d; ++j) x.data[static_cast<size_t>(r * d + j)] += tv[j];
    };

    Tensor x = linear3_fwd(params, in_proj, to_tokens(z), &cc.in_c);  // (N, T0, w0)
    add_temb(x, 0);
    x = stgl_block_forward(params, blocks[0], x, g_ptr, c, level_bias(0), modes[0], &cc.blk_c[0]);
    Tensor skip0 = x;
    x = linear3_fwd(params, widen0, pool2x2(x, h, w), &cc.widen0_c);
    add_temb(x, 1);
    x = stgl_block_forward(params, blocks[1], x, g_ptr, c, level_bias(1), modes[1], &cc.blk_c[1]);
    Tensor skip1 = x;
    x = linear3_fwd(params, widen1, pool2x2(x, h1, w1d), &cc.widen1_c);
    add_temb(x, 2);
    x = stgl_block_forward(params, blocks[2], x, g_ptr, c, level_bias(2), modes[2], &cc.blk_c[2]);
    x = linear3_fwd(params, merge1, concat_feat(upsample2x(x, h2, w2d), skip1), &cc.merge1_c);
    add_temb(x, 3);
    x = stgl_block_forward(params, blocks[3], x, g_ptr, c, level_bias(3), modes[3], &cc.blk_c[3]);
    x = linear3_fwd(params, merge0, concat_feat(upsample2x(x, h1, w1d), skip0), &cc.merge0_c);
    add_temb(x, 4);
    x = stgl_block_forward(params, blocks[4], x, g_ptr, c, level_bias(4), modes[4], &cc.blk_c[4]);
    x = linear3_fwd(params, out_proj, x, &cc.out_c);  // (N, T0, C)
    Tensor out = from_tokens(x, h, w);
    if (!out.all_finite()) fail("non-finite", "unet forward produced NaN/Inf");
    return out;
}

Tensor GroundedUNet::forward_base(const Tensor& z, int t, const Tensor& c) {
    ForwardOptions opt;
    opt.base_only = true;
    return forward(z, t, c, nullptr, opt);
}

void GroundedUNet::backward(const UNetCache& cc, const Tensor& d_out, double usage_penalty) {
    const int64_t n = cc.frames, h = cc.height, w = cc.width;
    const int64_t h1 = h / 2, w1d = w / 2, h2 = h / 4, w2d = w / 4;
    const int w0 = cfg.base_width, w1 = 2 * w0, w2 = 4 * w0;
    const bool train = cc.opt.mode == RunMode::train;

    Tensor dg_acc;
    Tensor* dg_ptr = nullptr;
    if (cc.has_g) {
        dg_acc = Tensor(cc.g.shape);
        dg_ptr = &dg_acc;
    }
    std::array<double, kGatedLayers> dgate{};
    std::array<Tensor, kGatedLayers> dbias;
    const int64_t level_h[kGatedLayers] = {h, h1, h2, h1, h};
    const int64_t level_w[kGatedLayers] = {w, w1d, w2d, w1d, w};
    auto dbias_ptr = [&](int l) -> Tensor* {
        if (!cc.has_bias) return nullptr;
        if (dbias[static_cast<size_t>(l)].numel() == 0)
            dbias[static_cast<size_t>(l)] = Tensor({n, level_h[l] * level_w[l]});
        return &dbias[static_cast<size_t>(l)];
    };

    Tensor dtemb({1, w0});
    auto take_temb = [&](Tensor& dx, int i) {
        const int64_t d = dx.dim(2);
        Tensor row({1, d});
        for (int64_t r = 0; r < dx.dim(0) * dx.dim(1); ++r)
            for (int64_t j = 0; j < d; ++j) row[j] += dx.data[static_cast<size_t>(r * d + j)];
        linear_bwd(params, temb_proj[static_cast<size_t>(i)], cc.temb_c[static_cast<size_t>(i)],
                   row, &dtemb);
    };

    // out projection
    Tensor dx({n, h * w, static_cast<int64_t>(w0)});
    linear3_bwd(params, out_proj, cc.out_c, to_tokens(d_out), &dx);

    // up0 block
    dx = stgl_block_backward(params, blocks[4], cc.blk_c[4], dx, dg_ptr, &dgate[4], dbias_ptr(4));
    take_temb(dx, 4);
    Tensor dup0({n, h * w, static_cast<int64_t>(w1)});
    Tensor dskip0({n, h * w, static_cast<int64_t>(w0)});
    {
        Tensor dcat({n, h * w, static_cast<int64_t>(w1 + w0)});
        linear3_bwd(params, merge0, cc.merge0_c, dx, &dcat);
        split_feat(dcat, dup0, dskip0);
    }
    dx = upsample2x_bwd(dup0, h1, w1d);

    // up1 block
    dx = stgl_block_backward(params, blocks[3], cc.blk_c[3], dx, dg_ptr, &dgate[3], dbias_ptr(3));
    take_temb(dx, 3);
    Tensor dup1({n, h1 * w1d, static_cast<int64_t>(w2)});
    Tensor dskip1({n, h1 * w1d, static_cast<int64_t>(w1)});
    {
        Tensor dcat({n, h1 * w1d, static_cast<int64_t>(w2 + w1)});
        linear3_bwd(params, merge1, cc.merge1_c, dx, &dcat);
        split_feat(dcat, dup1, dskip1);
    }
    dx = upsample2x_bwd(dup1, h2, w2d);

    // middle block
    dx = stgl_block_backward(params, blocks[2], cc.blk_c[2], dx, dg_ptr, &dgate[2], dbias_ptr(2));
    take_temb(dx, 2);
    {
        Tensor dpool({n, h2 * w2d, static_cast<int64_t>(w1)});
        linear3_bwd(params, widen1, cc.widen1_c, dx, &dpool);
        dx = pool2x2_bwd(dpool, h1, w1d);
    }
    axpy(1.0, dskip1, dx);

    // down1 block
    dx = stgl_block_backward(params, blocks[1], cc.blk_c[1], dx, dg_ptr, &dgate[1], dbias_ptr(1));
    take_temb(dx, 1);
    {
        Tensor dpool({n, h1 * w1d, static_cast<int64_t>(w0)});
        linear3_bwd(params, widen0, cc.widen0_c, dx, &dpool);
        dx = pool2x2_bwd(dpool, h, w);
    }
    axpy(1.0, dskip0, dx);

    // down0 block + input projection
    dx = stgl_block_backward(params, blocks[0], cc.blk_c[0], dx, dg_ptr, &dgate[0], dbias_ptr(0));
    take_temb(dx, 0);
    linear3_bwd(params, in_proj, cc.in_c, dx, nullptr);

    // time MLP
    mlp_bwd(params, time_mlp, cc.time_c, dtemb, nullptr);

    // injection gain: d(loss)/d(gain) = sum over levels/frames <dbias, pregain>
    if (cc.has_bias) {
        double dgain = 0.0;
        for (int l = 0; l < kGatedLayers; ++l) {
            if (dbias[static_cast<size_t>(l)].numel() == 0) continue;
            const int64_t len = level_h[l] * level_w[l];
            for (int64_t f = 0; f < n; ++f) {
                const Tensor& pre = cc.bias_pregain[static_cast<size_t>(l)][static_cast<size_t>(f)];
                const double* db = dbias[static_cast<size_t>(l)].ptr() + f * len;
                for (int64_t i = 0; i < len; ++i) dgain += db[i] * pre[i];
            }
        }
        params.grad(bias_gain)[0] += dgain;
    }

    // gates: gradient reaches the relevance parameters through the soft path
    if (cc.gates_evaluated && train) {
        Tensor dpooled(cc.pooled.shape);
        for (int i = 0; i < kGatedLayers; ++i) {
            const double dvalue = dgate[static_cast<size_t>(i)] + usage_penalty / kGatedLayers;
            const double dr = dvalue * gate_value_grad(cc.decisions[static_cast<size_t>(i)]);
            if (dr == 0.0) continue;
            relevance_backward(params, gates[static_cast<size_t>(i)],
                               cc.rel_c[static_cast<size_t>(i)], dr, &dpooled);
        }
        if (cc.used_null_pool) {
            Tensor dnull;
            dnull.shape = {1, 1, cfg.dg};
            dnull.data = dpooled.data;
            encode_grounded_backward(params, g_enc, cc.null_c, dnull);
        } else if (dg_ptr) {
            const int64_t m = cc.g.dim(1), dgw = cc.g.dim(2);
            const double inv_n = 1.0 / static_cast<double>(n);
            for (int64_t f = 0; f < n; ++f)
                for (int64_t k = 0; k < m; ++k)
                    for (int64_t i = 0; i < dgw; ++i)
                        dg_acc.data[static_cast<size_t>((f * m + k) * dgw + i)] +=
                            inv_n * dpooled.at2(k, i);
        }
    }

    // grounded features: temporal smoothing then the encoder
    if (cc.has_g) {
        Tensor dg_raw = temporal_attend_bwd(params, g_temporal, cc.gtemp_c, dg_acc);
        encode_grounded_backward(params, g_enc, cc.enc_c, dg_raw);
    }
}

// ---- training ---------------------------------------------------------------

Trainer::Trainer(NoiseSchedule sched, double lr_in, uint64_t seed)
    : schedule(std::move(sched)),
      lr(lr_in),
      noise_(seed, RngStream::kNoise),
      gate_eps_(seed, RngStream::kGateEpsilon),
      gate_uniform_(seed, RngStream::kGateUniform) {}

double Trainer::step(GroundedUNet& model, const std::vector<TrainItem>& batch, Stage stage,
                     const TrainHooks* hooks) {
    if (batch.empty()) fail("empty-batch", "training step needs at least one item");
    model.params.zero_grads();
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const double penalty =
        stage == Stage::dgn ? model.cfg.gate_usage_penalty : 0.0;
    double loss = 0.0;
    for (const TrainItem& item : batch) {
        const int t = hooks && hooks->fixed_t >= 0
                          ? hooks->fixed_t
                          : static_cast<int>(noise_.uniform_int(1, schedule.T));
        Tensor eps(item.video.shape);
        if (hooks && hooks->fixed_eps) eps = *hooks->fixed_eps;
        else
            for (double& v : eps.data) v = noise_.normal();
        const Tensor zt = add_noise(item.video, t, eps, schedule);

        ForwardOptions opt;
        opt.mode = RunMode::train;
        opt.base_only = stage == Stage::base;
        RngStream fwd_eps = gate_eps_.substream(forward_count_);
        RngStream fwd_uni = gate_uniform_.substream(forward_count_);
        ++forward_count_;
        opt.gate_eps = &fwd_eps;
        opt.gate_uniform = &fwd_uni;

        UNetCache cache;
        const Tensor pred = model.forward(zt, t, item.prompt, item.track, opt, &cache);
        loss += diffusion_loss(pred, eps) * inv_b;

        Tensor dpred = sub(pred, eps);
        const double s = 2.0 / (static_cast<double>(pred.numel()) * static_cast<double>(batch.size()));
        for (double& v : dpred.data) v *= s;
        model.backward(cache, dpred, penalty * inv_b);

        if (penalty > 0.0 && cache.gates_evaluated) {
            double mean_gate = 0.0;
            for (const GateDecision& d : cache.decisions) mean_gate += d.value / kGatedLayers;
            loss += penalty * mean_gate * inv_b;
        }
    }
    model.params.sgd_step(model.params.stage_mask(stage), lr);
    return loss;
}

// ---- sampling ---------------------------------------------------------------

Tensor cfg_predict(GroundedUNet& model, const Tensor& zt, int t, const Tensor& c,
                   const GroundingTrack* track, double guidance_scale,
                   std::vector<GateDecision>* trace) {
    ForwardOptions opt;  // inference defaults
    ForwardInfo info;
    ForwardInfo* info_ptr = trace ? &info : nullptr;

    GroundingTrack empty;
    empty.num_frames = static_cast<int>(zt.dim(0));
    const GroundingTrack* uncond_track = model.cfg.cfg_null_grounding ? &empty : track;
    const Tensor null_c = model.null_prompt_table(static_cast<int>(zt.dim(0)));

    Tensor out;
    if (guidance_scale == 0.0) {
        out = model.forward(zt, t, null_c, uncond_track, opt);
    } else if (guidance_scale == 1.0) {
        out = model.forward(zt, t, c, track, opt, nullptr, info_ptr);
    } else {
        Tensor cond = model.forward(zt, t, c, track, opt, nullptr, info_ptr);
        Tensor uncond = model.forward(zt, t, null_c, uncond_track, opt);
        out = uncond;
        for (size_t i = 0; i < out.data.size(); ++i)
            out.data[i] += guidance_scale * (cond.data[i] - uncond.data[i]);
    }
    if (trace) trace->insert(trace->end(), info.gates.begin(), info.gates.end());
    return out;
}

Tensor sample_video(GroundedUNet& model, const GroundingTrack& track, const Tensor& prompt_table,
                    const SampleOptions& opt, SampleTrace* trace,
                    const ReplacementContext* context) {
    const ModelConfig& cfg = model.cfg;
    const int n = track.num_frames;
    if (context && (context->count < 0 || context->count > n))
        fail("window-too-large", "context frame count exceeds the chunk");

    const NoiseSchedule sched = linear_beta_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end);
    RngStream noise = RngStream(opt.seed, RngStream::kNoise).substream(opt.chunk_index);

    Tensor z({n, cfg.channels, cfg.latent_h, cfg.latent_w});
    for (double& v : z.data) v = noise.normal();

    const int64_t frame_len =
        static_cast<int64_t>(cfg.channels) * cfg.latent_h * cfg.latent_w;
    auto replace_context = [&](int t) {
        if (!context || context->count == 0) return;
        const double ab = sched.alpha_bar[static_cast<size_t>(t)];
        const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
        for (int64_t i = 0; i < context->count * frame_len; ++i)
            z.data[static_cast<size_t>(i)] = a * context->frames.data[static_cast<size_t>(i)] +
                                             b * noise.normal();
    };

    std::vector<int> nodes = sampling_timesteps(cfg.timesteps, opt.steps);
    nodes.insert(nodes.begin(), sched.T);
    std::vector<GateDecision>* gate_sink =
        trace && opt.collect_gates ? &trace->gate_trace : nullptr;
    for (size_t k = 0; k + 1 < nodes.size(); ++k) {
        const int t = nodes[k], t_prev = nodes[k + 1];
        replace_context(t);
        const Tensor eps_hat =
            cfg_predict(model, z, t, prompt_table, &track, opt.guidance_scale, gate_sink);
        z = ddim_step(z, eps_hat, t, t_prev, sched);
    }
    if (context && context->count > 0)
        std::memcpy(z.ptr(), context->frames.ptr(),
                    static_cast<size_t>(context->count * frame_len) * sizeof(double));
    return z;
}

}  // namespace gvd
