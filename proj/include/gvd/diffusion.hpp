#pragma once

#include <array>
#include <memory>

#include "gvd/dgn.hpp"
#include "gvd/stgl.hpp"

namespace gvd {

struct ModelConfig {
    int channels = 4;  // latent channels
    int latent_h = 16, latent_w = 16;
    int base_width = 32;  // level-0 token width; levels double it twice
    int dg = 64;          // grounded feature width
    int dtext = 64;       // text embedding width
    int num_freqs = 8;    // fourier frequencies per coordinate
    int g_hidden = 128;   // grounded encoder hidden width
    int time_dim = 32;    // sinusoidal time embedding width (even)

    double beta_stga = 1.0;      // STGA controllability scalar
    double bias_lambda = 1.0;    // grounding map -> logit bias scale
    double keypoint_sigma = 0.05;
    double densify_sigma = 1.5;  // cells
    int densify_radius = 4;

    int timesteps = 1000;
    double beta_start = 1e-4, beta_end = 0.02;
    double guidance_scale = 7.5;
    int sample_steps = 25;

    bool cfg_null_grounding = true;  // drop grounding with the caption in CFG
    bool metrics_all_pairs = false;
    double gate_usage_penalty = 0.0;  // off by default
};

struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // beta[t], t = 1..T (beta[0] unused)
    std::vector<double> alpha_bar;  // alpha_bar[t], t = 0..T, alpha_bar[0] = 1
};

// Linear interpolation inclusive of both ends. Throws "schedule-bounds".
NoiseSchedule linear_beta_schedule(int T, double beta_start, double beta_end);

// Closed form z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps. Throws "timestep-range".
Tensor add_noise(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched);

// Deterministic DDIM update from t to t_prev. Throws "ddim-order".
Tensor ddim_step(const Tensor& zt, const Tensor& eps_hat, int t, int t_prev,
                 const NoiseSchedule& sched);

// steps evenly strided timesteps [T*(steps-1)/steps, ..., 0]; the sampler
// starts one stride above at T.
std::vector<int> sampling_timesteps(int T, int steps);

double diffusion_loss(const Tensor& pred, const Tensor& eps);  // mean squared error

enum class RunMode { train, infer };

struct ForwardOptions {
    RunMode mode = RunMode::infer;
    bool base_only = false;  // grounding-free base network path
    RngStream* gate_eps = nullptr;      // train-mode gate noise (per-layer substreams)
    RngStream* gate_uniform = nullptr;  // train-mode soft/hard selector
    const std::array<double, 5>* gate_override = nullptr;  // test hook
};

struct ForwardInfo {
    std::vector<GateDecision> gates;  // one per gated layer when evaluated
};

constexpr int kGatedLayers = 5;  // down0, down1, mid, up1, up0

// Everything backward needs from one forward pass.
struct UNetCache {
    int64_t frames = 0, channels = 0, height = 0, width = 0;
    ForwardOptions opt;
    bool has_track = false, has_g = false, has_bias = false;
    bool gates_evaluated = false, used_null_pool = false;

    Tensor t_sin;  // (1, time_dim)
    MlpCache time_c;
    Tensor temb;  // (1, base_width)
    std::array<LinearCache, kGatedLayers> temb_c;

    LinearCache in_c, out_c;
    EncodeCache enc_c;
    TemporalCache gtemp_c;
    Tensor g;  // smoothed grounded features (N x M x dg)
    EncodeCache null_c;
    Tensor pooled;  // (M x dg), or (1 x dg) from the null feature
    std::array<RelevanceCache, kGatedLayers> rel_c;
    std::array<GateDecision, kGatedLayers> decisions;

    std::array<StglBlockCache, kGatedLayers> blk_c;
    std::array<std::vector<Tensor>, kGatedLayers> bias_pregain;  // lambda * resized map
    LinearCache widen0_c, widen1_c, merge1_c, merge0_c;
};

// Toy denoiser: input projection, two down levels (STGL block + 2x2 area pool
// + width doubling), a middle STGL block, two up levels (nearest upsample +
// skip concat + affine merge + STGL block), output projection. Every STGL
// block is a gated layer.
class GroundedUNet {
public:
    GroundedUNet(const ModelConfig& config, uint64_t init_seed = 1);

    ModelConfig cfg;
    ParamStore params;

    const TextEmbedder& text_embedder() const { return *embedder_; }
    void set_text_embedder(std::unique_ptr<TextEmbedder> e) { embedder_ = std::move(e); }

    Tensor forward(const Tensor& z, int t, const Tensor& c, const GroundingTrack* track,
                   const ForwardOptions& opt, UNetCache* cache = nullptr,
                   ForwardInfo* info = nullptr);
    // Accumulates parameter gradients; usage_penalty adds d(penalty * mean
    // gate)/d(gate) on the soft path.
    void backward(const UNetCache& cache, const Tensor& d_out, double usage_penalty = 0.0);

    Tensor forward_base(const Tensor& z, int t, const Tensor& c);  // grounding-free

    // Per-frame prompt table (N x 1 x dtext) for one prompt string.
    Tensor prompt_table(const std::string& prompt, int frames) const;
    Tensor null_prompt_table(int frames) const;

    // layers
    LinearLayer in_proj, out_proj;
    MlpLayer time_mlp;
    std::array<LinearLayer, kGatedLayers> temb_proj;
    std::array<StglBlock, kGatedLayers> blocks;
    LinearLayer widen0, widen1;
    LinearLayer merge1, merge0;
    GroundedEncoder g_enc;
    TemporalAttend g_temporal;
    int bias_gain = -1;  // scalar, starts at 0 so a fresh model is injection-free
    std::array<GateLayer, kGatedLayers> gates;

private:
    std::unique_ptr<TextEmbedder> embedder_;
};

struct TrainItem {
    Tensor video;   // (N,C,H,W) clean latents
    Tensor prompt;  // (N x tc x dtext)
    const GroundingTrack* track = nullptr;
};

struct TrainHooks {
    int fixed_t = -1;
    const Tensor* fixed_eps = nullptr;
};

// Owns the training RNG streams; one step = full batch forward/backward and
// an SGD update restricted to the stage's parameters. Throws "empty-batch".
class Trainer {
public:
    Trainer(NoiseSchedule sched, double lr, uint64_t seed);
    double step(GroundedUNet& model, const std::vector<TrainItem>& batch, Stage stage,
                const TrainHooks* hooks = nullptr);

    NoiseSchedule schedule;
    double lr;

private:
    RngStream noise_, gate_eps_, gate_uniform_;
    uint64_t forward_count_ = 0;
};

struct SampleOptions {
    int steps = 25;
    double guidance_scale = 7.5;
    uint64_t seed = 0;
    uint64_t chunk_index = 0;  // substream selector for chunked generation
    bool collect_gates = false;
};

struct SampleTrace {
    std::vector<GateDecision> gate_trace;
};

// Fixes the first `count` frame latents to noised context frames before each
// model evaluation and to the context exactly at the end (replacement
// conditioning).
struct ReplacementContext {
    Tensor frames;  // (count, C, H, W)
    int count = 0;
};

Tensor cfg_predict(GroundedUNet& model, const Tensor& zt, int t, const Tensor& c,
                   const GroundingTrack* track, double guidance_scale,
                   std::vector<GateDecision>* trace = nullptr);

Tensor sample_video(GroundedUNet& model, const GroundingTrack& track, const Tensor& prompt_table,
                    const SampleOptions& opt, SampleTrace* trace = nullptr,
                    const ReplacementContext* context = nullptr);

}  // namespace gvd
