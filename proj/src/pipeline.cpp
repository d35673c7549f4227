#include "gvd/pipeline.hpp"

#include <cmath>
#include <cstring>

namespace gvd {

PromptSchedule build_prompt_schedule(const std::vector<PromptKeyframe>& keyframes,
                                     const TextEmbedder& embedder, int num_frames) {
    if (keyframes.empty() || keyframes.front().frame != 0)
        fail("schedule-start", "first keyframe must sit at frame 0");
    for (size_t i = 1; i < keyframes.size(); ++i)
        if (keyframes[i].frame <= keyframes[i - 1].frame)
            fail("schedule-order", "keyframe frames must strictly increase");
    if (keyframes.back().frame >= num_frames)
        fail("schedule-order", "keyframe beyond the last frame");

    PromptSchedule sched;
    sched.keyframes = keyframes;
    const int width = embedder.width();
    std::vector<Tensor> embeds;
    embeds.reserve(keyframes.size());
    for (const PromptKeyframe& k : keyframes) embeds.push_back(embedder.embed(k.prompt));

    sched.table = Tensor({num_frames, 1, width});
    size_t seg = 0;
    for (int f = 0; f < num_frames; ++f) {
        while (seg + 1 < keyframes.size() && keyframes[seg + 1].frame <= f) ++seg;
        double* row = sched.table.ptr() + static_cast<int64_t>(f) * width;
        if (seg + 1 >= keyframes.size() || keyframes[seg].frame == f) {
            // on a keyframe or past the last one: copy bit-exactly
            std::memcpy(row, embeds[seg].ptr(), static_cast<size_t>(width) * sizeof(double));
        } else {
            const int a = keyframes[seg].frame, b = keyframes[seg + 1].frame;
            const double wgt = static_cast<double>(f - a) / static_cast<double>(b - a);
            for (int i = 0; i < width; ++i)
                row[i] = (1.0 - wgt) * embeds[seg][i] + wgt * embeds[seg + 1][i];
        }
    }
    return sched;
}

GenerationPlan make_generation_plan(int total_frames, int chunk_size, int window) {
    if (window < 0 || window >= chunk_size)
        fail("window-too-large", "context window must satisfy 0 <= W < chunk size");
    GenerationPlan plan;
    plan.total_frames = total_frames;
    plan.chunk_size = chunk_size;
    plan.window = window;
    if (total_frames < chunk_size) fail("plan-cover", "total frames below one chunk");
    const int stride = chunk_size - window;
    if ((total_frames - chunk_size) % stride != 0)
        fail("plan-cover", "chunks cannot cover the requested frame count exactly");
    for (int start = 0;; start += stride) {
        GenerationPlan::Chunk c;
        c.start = start;
        c.end = start + chunk_size;
        c.context = start == 0 ? 0 : window;
        plan.chunks.push_back(c);
        if (c.end == total_frames) break;
    }
    return plan;
}

Tensor generate_long_range(GroundedUNet& model, const GroundingTrack& track,
                           const PromptSchedule& schedule, const GenerationPlan& plan,
                           const SampleOptions& opt, std::vector<Tensor>* chunk_outputs,
                           SampleTrace* trace) {
    if (track.num_frames != plan.total_frames)
        fail("track-frames", "track must cover the full plan");
    if (schedule.table.dim(0) != plan.total_frames)
        fail("schedule-order", "prompt schedule must cover the full plan");

    const ModelConfig& cfg = model.cfg;
    const int64_t frame_len = static_cast<int64_t>(cfg.channels) * cfg.latent_h * cfg.latent_w;
    Tensor out({plan.total_frames, cfg.channels, cfg.latent_h, cfg.latent_w});

    Tensor prev_chunk;
    for (size_t k = 0; k < plan.chunks.size(); ++k) {
        const GenerationPlan::Chunk& c = plan.chunks[k];
        const GroundingTrack chunk_track = track.slice(c.start, c.end);
        Tensor chunk_prompts({c.end - c.start, schedule.table.dim(1), schedule.table.dim(2)});
        std::memcpy(chunk_prompts.ptr(),
                    schedule.table.ptr() + static_cast<int64_t>(c.start) * schedule.table.dim(1) *
                                               schedule.table.dim(2),
                    chunk_prompts.data.size() * sizeof(double));

        SampleOptions chunk_opt = opt;
        chunk_opt.chunk_index = k;

        ReplacementContext ctx;
        const ReplacementContext* ctx_ptr = nullptr;
        if (c.context > 0) {
            ctx.count = c.context;
            ctx.frames = Tensor({c.context, cfg.channels, cfg.latent_h, cfg.latent_w});
            // last W frames of the previous chunk
            std::memcpy(ctx.frames.ptr(),
                        prev_chunk.ptr() + (prev_chunk.dim(0) - c.context) * frame_len,
                        ctx.frames.data.size() * sizeof(double));
            ctx_ptr = &ctx;
        }

        Tensor chunk = sample_video(model, chunk_track, chunk_prompts, chunk_opt, trace, ctx_ptr);
        const int fresh_start = c.start + c.context;  // frames not already emitted
        std::memcpy(out.ptr() + static_cast<int64_t>(fresh_start) * frame_len,
                    chunk.ptr() + static_cast<int64_t>(c.context) * frame_len,
                    static_cast<size_t>((c.end - fresh_start) * frame_len) * sizeof(double));
        if (chunk_outputs) chunk_outputs->push_back(chunk);
        prev_chunk = std::move(chunk);
    }
    return out;
}

ObjectMask mask_from_grid(const Grid& grid, int frames) {
    if (grid.channels != frames) fail("composite-shape", "mask grid channels must equal frames");
    ObjectMask mask;
    mask.values = Tensor({frames, grid.height, grid.width});
    for (int f = 0; f < frames; ++f)
        for (int y = 0; y < grid.height; ++y)
            for (int x = 0; x < grid.width; ++x)
                mask.values.data[static_cast<size_t>((f * grid.height + y) * grid.width + x)] =
                    grid.values[static_cast<size_t>((y * grid.width + x) * grid.channels + f)];
    for (double v : mask.values.data)
        if (v != 0.0 && v != 1.0) fail("mask-binary", "mask entries must be exactly 0 or 1");
    return mask;
}

Tensor object_composite(const Tensor& background, const Tensor& generated, const ObjectMask& mask) {
    if (!background.same_shape(generated))
        fail("composite-shape", "background/generated shape mismatch");
    if (background.rank() != 4) fail("composite-shape", "videos must be (N,C,H,W)");
    const int64_t n = background.dim(0), c = background.dim(1), h = background.dim(2),
                  w = background.dim(3);
    if (mask.values.rank() != 3 || mask.values.dim(0) != n || mask.values.dim(1) != h ||
        mask.values.dim(2) != w)
        fail("composite-shape", "mask must be (N,H,W) at latent resolution");
    for (double v : mask.values.data)
        if (v != 0.0 && v != 1.0) fail("mask-binary", "mask entries must be exactly 0 or 1");

    Tensor out = background;
    for (int64_t f = 0; f < n; ++f)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t p = 0; p < h * w; ++p) {
                const double m = mask.values.data[static_cast<size_t>(f * h * w + p)];
                const size_t idx = static_cast<size_t>((f * c + ch) * h * w + p);
                out.data[idx] = m * generated.data[idx] + (1.0 - m) * background.data[idx];
            }
    return out;
}

static std::vector<Tensor> frame_embeddings(const Tensor& video, const Embedder& embedder) {
    const int64_t n = video.dim(0), c = video.dim(1), h = video.dim(2), w = video.dim(3);
    std::vector<Tensor> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t f = 0; f < n; ++f) {
        Tensor frame({c, h, w});
        std::memcpy(frame.ptr(), video.ptr() + f * c * h * w, frame.data.size() * sizeof(double));
        out.push_back(embedder.embed_frame(frame));
    }
    return out;
}

double temporal_consistency(const Tensor& video, const Embedder& embedder, bool all_pairs) {
    if (video.rank() != 4 || video.dim(0) < 2)
        fail("tc-frames", "temporal consistency needs at least 2 frames");
    const std::vector<Tensor> e = frame_embeddings(video, embedder);
    double acc = 0.0;
    int64_t count = 0;
    if (all_pairs) {
        for (size_t i = 0; i < e.size(); ++i)
            for (size_t j = i + 1; j < e.size(); ++j) {
                acc += cosine_similarity(e[i], e[j]);
                ++count;
            }
    } else {
        for (size_t i = 0; i + 1 < e.size(); ++i) {
            acc += cosine_similarity(e[i], e[i + 1]);
            ++count;
        }
    }
    return 100.0 * acc / static_cast<double>(count);
}

double prompt_consistency(const Tensor& video, const std::string& prompt,
                          const Embedder& embedder) {
    if (video.rank() != 4 || video.dim(0) < 1) fail("tc-frames", "video must have frames");
    const Tensor text = embedder.embed_text(prompt);
    const std::vector<Tensor> e = frame_embeddings(video, embedder);
    double acc = 0.0;
    for (const Tensor& fe : e) acc += cosine_similarity(fe, text);
    return 100.0 * acc / static_cast<double>(e.size());
}

double condition_similarity(const std::vector<GroundingMap>& source,
                            const std::vector<GroundingMap>& generated) {
    if (source.size() != generated.size() || source.empty())
        fail("cond-frames", "condition sequences must have equal nonzero length");
    double acc = 0.0;
    for (size_t f = 0; f < source.size(); ++f) {
        const GroundingMap& a = source[f];
        const GroundingMap& b = generated[f];
        if (a.width != b.width || a.height != b.height)
            fail("cond-frames", "condition map resolution mismatch");
        Tensor ta = Tensor::from({static_cast<int64_t>(a.values.size())}, a.values);
        Tensor tb = Tensor::from({static_cast<int64_t>(b.values.size())}, b.values);
        acc += cosine_similarity(ta, tb);
    }
    return 100.0 * acc / static_cast<double>(source.size());
}

std::vector<GroundingMap> track_condition_maps(const GroundingTrack& track, int width, int height,
                                               double keypoint_sigma, double dense_sigma,
                                               int dense_radius) {
    std::vector<GroundingMap> maps;
    maps.reserve(static_cast<size_t>(track.num_frames));
    for (int f = 0; f < track.num_frames; ++f)
        maps.push_back(frame_grounding_map(track, f, width, height, keypoint_sigma, dense_sigma,
                                           dense_radius));
    return maps;
}

}  // namespace gvd
