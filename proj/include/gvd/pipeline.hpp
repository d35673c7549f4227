#pragma once

#include "gvd/diffusion.hpp"

namespace gvd {

struct PromptKeyframe {
    int frame = 0;
    std::string prompt;
};

// Keyframed prompts resolved to one embedding row per frame by linear
// interpolation of adjacent keyframe embeddings.
struct PromptSchedule {
    std::vector<PromptKeyframe> keyframes;
    Tensor table;  // (N x 1 x width)
};

// Throws "schedule-order" (unsorted) and "schedule-start" (first keyframe
// must sit at frame 0; at least one keyframe).
PromptSchedule build_prompt_schedule(const std::vector<PromptKeyframe>& keyframes,
                                     const TextEmbedder& embedder, int num_frames);

// Chunked auto-regressive plan: chunk k covers [k*(chunk-window),
// k*(chunk-window)+chunk); consecutive chunks overlap by exactly window.
struct GenerationPlan {
    int total_frames = 0, chunk_size = 16, window = 0;
    struct Chunk {
        int start = 0, end = 0;
        int context = 0;  // leading frames fixed from the previous chunk
    };
    std::vector<Chunk> chunks;
};

// Throws "window-too-large" and "plan-cover".
GenerationPlan make_generation_plan(int total_frames, int chunk_size, int window);

// Auto-regressive long-range generation with replacement conditioning; the
// overlap frames of consecutive chunks are bit-identical by construction.
Tensor generate_long_range(GroundedUNet& model, const GroundingTrack& track,
                           const PromptSchedule& schedule, const GenerationPlan& plan,
                           const SampleOptions& opt, std::vector<Tensor>* chunk_outputs = nullptr,
                           SampleTrace* trace = nullptr);

// Per-frame binary mask at latent resolution, broadcast over channels.
struct ObjectMask {
    Tensor values;  // (N x H x W), entries exactly 0 or 1
};
ObjectMask mask_from_grid(const Grid& grid, int frames);  // GVDM with channels = frames

// out = mask * generated + (1 - mask) * background. Throws "composite-shape"
// and "mask-binary".
Tensor object_composite(const Tensor& background, const Tensor& generated, const ObjectMask& mask);

// 100 x mean cosine similarity of adjacent frame embeddings (all unordered
// pairs when all_pairs). Throws "tc-frames" for N < 2.
double temporal_consistency(const Tensor& video, const Embedder& embedder, bool all_pairs = false);

// 100 x mean cosine similarity between frame embeddings and the prompt.
double prompt_consistency(const Tensor& video, const std::string& prompt, const Embedder& embedder);

// 100 x mean cosine similarity between per-frame condition maps. Throws
// "cond-frames" on frame count mismatch.
double condition_similarity(const std::vector<GroundingMap>& source,
                            const std::vector<GroundingMap>& generated);

// Per-frame uncertainty maps of a track, the identity condition extractor.
std::vector<GroundingMap> track_condition_maps(const GroundingTrack& track, int width, int height,
                                               double keypoint_sigma, double dense_sigma,
                                               int dense_radius);

}  // namespace gvd
