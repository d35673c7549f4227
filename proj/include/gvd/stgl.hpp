#pragma once

#include "gvd/embedder.hpp"
#include "gvd/grounding.hpp"
#include "gvd/layers.hpp"

namespace gvd {

// Two-layer MLP with GELU between, parameter-backed.
struct MlpLayer {
    LinearLayer l1, l2;
};
MlpLayer make_mlp(ParamStore& ps, const std::string& name, int din, int hidden, int dout,
                  Stage stage);

struct MlpCache {
    LinearCache c1, c2;
    Tensor pre;  // hidden pre-activation
};
Tensor mlp_fwd(const ParamStore& ps, const MlpLayer& l, const Tensor& x, MlpCache* cache);
void mlp_bwd(ParamStore& ps, const MlpLayer& l, const MlpCache& cache, const Tensor& dy,
             Tensor* dx_acc);

// Grounded feature encoder: g = MLP([text(phrase), Fourier(coords)]) per
// (object, frame); missing slots take the learnable null embeddings.
struct GroundedEncoder {
    MlpLayer mlp;
    int null_text = -1;   // (dtext)
    int null_coord = -1;  // (8 * num_freqs)
    int dtext = 0, dg = 0, num_freqs = 0;
};

GroundedEncoder make_grounded_encoder(ParamStore& ps, const std::string& name, int dtext,
                                      int hidden, int dg, int num_freqs);

struct EncodeCache {
    int frames = 0, objects = 0;
    Tensor inputs;                 // (N*M) x (dtext + 8F), frame-major rows
    std::vector<uint8_t> is_null;  // per row
    MlpCache mlp_c;
};

// Returns (N x M x dg). Throws "grounded-width" when the embedder width does
// not match the encoder text width.
Tensor encode_grounded_features(const ParamStore& ps, const GroundedEncoder& enc,
                                const GroundingTrack& track, const TextEmbedder& embedder,
                                EncodeCache* cache);
void encode_grounded_backward(ParamStore& ps, const GroundedEncoder& enc, const EncodeCache& cache,
                              const Tensor& dg);

// MLP image of the null embeddings; the pooled feature when no objects exist.
Tensor null_grounded_feature(const ParamStore& ps, const GroundedEncoder& enc, EncodeCache* cache);

// Residual pre-norm attention sub-layer.
struct ResidualAttn {
    LayerNormLayer ln;
    AttentionLayer attn;
};
ResidualAttn make_residual_attn(ParamStore& ps, const std::string& name, int d, int d_kv,
                                Stage stage, bool zero_out = false);

struct ResAttnCache {
    NormCache nc;
    AttnCache ac;
    bool add_skipped = false;  // output projection was exactly zero
};

// y = x + Attn(LN(x), LN(x), bias). Throws "bias-length" when the bias does
// not match the token count.
Tensor residual_self_attn_fwd(const ParamStore& ps, const ResidualAttn& l, const Tensor& x,
                              const Tensor* bias, ResAttnCache* cache);
Tensor residual_self_attn_bwd(ParamStore& ps, const ResidualAttn& l, const ResAttnCache& cache,
                              const Tensor& dy, Tensor* dbias_acc = nullptr);

// y = x + Attn(LN(x), kv). Gradients w.r.t. kv are accumulated when dkv_acc
// is given (prompt embeddings are data and pass nullptr).
Tensor residual_cross_attn_fwd(const ParamStore& ps, const ResidualAttn& l, const Tensor& x,
                               const Tensor& kv, ResAttnCache* cache);
Tensor residual_cross_attn_bwd(ParamStore& ps, const ResidualAttn& l, const ResAttnCache& cache,
                               const Tensor& dy, Tensor* dkv_acc);

// Residual attention across the frame axis, one sequence per trailing index
// (object for grounded features, spatial position for visual tokens).
// Zero-initialized output projection makes a fresh layer an exact identity.
struct TemporalAttend {
    LayerNormLayer ln;
    AttentionLayer attn;
};
TemporalAttend make_temporal_attend(ParamStore& ps, const std::string& name, int d, Stage stage);

struct TemporalCache {
    int frames = 0, seqs = 0;
    bool add_skipped = false;
    std::vector<ResAttnCache> seq_c;  // one per sequence
};

// x is (N x S x d); attention runs over the N axis independently per s.
Tensor temporal_attend_fwd(const ParamStore& ps, const TemporalAttend& l, const Tensor& x,
                           TemporalCache* cache);
Tensor temporal_attend_bwd(ParamStore& ps, const TemporalAttend& l, const TemporalCache& cache,
                           const Tensor& dy);

// Spatial-temporal grounding attention: z + gate * beta * tanh(gamma) *
// TS(SelfAttn([z, proj(g)])). TS keeps exactly the visual-token rows.
struct StgaLayer {
    LinearLayer g_proj;  // dg -> width
    LayerNormLayer ln;   // over the concatenated sequence
    AttentionLayer attn;
    int gamma = -1;  // learnable scalar, starts at 0
};
StgaLayer make_stga(ParamStore& ps, const std::string& name, int width, int dg, Stage stage);

struct StgaCache {
    bool computed = false;
    int n_vis = 0, m = 0;
    LinearCache gproj_c;
    NormCache norm_c;
    AttnCache attn_c;
    Tensor ts;         // (n_vis x width)
    double scale = 0;  // gate * beta * tanh(gamma)
    double gate = 1, beta = 1;
};

// skip_branch short-circuits the whole branch (inference hard gate); the
// branch is also skipped structurally when m == 0. A zero scale adds nothing,
// keeping gamma = 0 and gate = 0 bit-exact.
Tensor stga_forward(const ParamStore& ps, const StgaLayer& l, const Tensor& z,
                    const Tensor& g_frame, double beta, double gate, bool skip_branch,
                    StgaCache* cache);
Tensor stga_backward(ParamStore& ps, const StgaLayer& l, const StgaCache& cache, const Tensor& dy,
                     Tensor* dg_frame_acc, double* dgate_acc);

// One spatial-temporal grounding layer: grounding-biased self-attention,
// STGA, cross-attention, frame temporal attention, in that order, all
// pre-normalized residual sub-layers.
struct StglBlock {
    int width = 0;
    ResidualAttn self_attn;
    StgaLayer stga;
    ResidualAttn cross_attn;
    TemporalAttend temp_attn;
};
StglBlock make_stgl_block(ParamStore& ps, const std::string& name, int width, int dg, int dtext);

struct StglBlockMode {
    bool grounding = true;  // STGA path active (bias is the caller's concern)
    bool temporal = true;   // frame temporal attention runs
    double beta = 1.0;
    double gate = 1.0;
    bool skip_stga = false;  // inference hard skip of the STGA branch
};

struct StglBlockCache {
    int frames = 0, tokens = 0;
    StglBlockMode mode;
    std::vector<ResAttnCache> self_c, cross_c;
    std::vector<StgaCache> stga_c;
    TemporalCache temp_c;
    bool has_g = false;
};

// x (N x T x width), g (N x M x dg) or nullptr, c (N x tc x dtext),
// biases per frame (each per-key of length T) or nullptr.
Tensor stgl_block_forward(const ParamStore& ps, const StglBlock& blk, const Tensor& x,
                          const Tensor* g, const Tensor& c, const std::vector<Tensor>* biases,
                          const StglBlockMode& mode, StglBlockCache* cache);
// Returns dx; accumulates dg (when given), the gate sensitivity, and the
// per-frame bias gradients (dbias_acc is (N x T) when given).
Tensor stgl_block_backward(ParamStore& ps, const StglBlock& blk, const StglBlockCache& cache,
                           const Tensor& dy, Tensor* dg_acc, double* dgate_acc,
                           Tensor* dbias_acc = nullptr);

Tensor frame_slice(const Tensor& x, int64_t f);               // (A x B x C) -> (B x C)
void set_frame_slice(Tensor& x, int64_t f, const Tensor& v);  // inverse

}  // namespace gvd
