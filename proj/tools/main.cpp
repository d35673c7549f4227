// gvd: grounded text-to-video diffusion CLI.
//
// Subcommands: train, sample, long-range, metrics, gate-stats, composite.
// Exit codes: 0 success, 1 invalid input/config (message names the problem),
// 2 unknown subcommand.

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include "gvd/config.hpp"
#include "gvd/diffusion.hpp"
#include "gvd/io.hpp"
#include "gvd/pipeline.hpp"
#include "gvd/svg.hpp"
#include "gvd/synth.hpp"

using namespace gvd;

namespace {

int usage() {
    std::fprintf(stderr,
                 "usage: gvd <command> [flags]\n"
                 "\n"
                 "commands:\n"
                 "  train       train a stage on synthetic data and write a checkpoint\n"
                 "  sample      generate a latent video from a grounding track\n"
                 "  long-range  chunked auto-regressive generation\n"
                 "  metrics     consistency metrics for a generated video\n"
                 "  gate-stats  per-layer skip percentages over a sampling run\n"
                 "  composite   mask-composite two latent videos\n"
                 "\n"
                 "common flags: --config FILE --ckpt FILE --track FILE --prompt TEXT\n"
                 "  --prompt-at FRAME:TEXT --steps N --scale S --seed N --window W\n"
                 "  --total-frames N --chunk N --out FILE --mask FILE --stage NAME\n"
                 "  --video FILE --gen-track FILE --svg FILE --background FILE\n"
                 "  --generated FILE --init FILE\n"
                 "environment: GVD_SEED overrides --seed when set\n");
    return 2;
}

struct Args {
    std::string command;
    std::string config_path, ckpt_path, init_path, track_path, out_path, mask_path;
    std::string video_path, gen_track_path, svg_path, background_path, generated_path;
    std::string stage = "base";
    std::string prompt;
    std::vector<PromptKeyframe> prompt_keyframes;
    int steps = -1;
    double scale = -1.0;
    uint64_t seed = 0;
    int window = -1;
    int total_frames = -1;
    int chunk = 16;
};

uint64_t parse_u64(const std::string& v, const char* flag) {
    char* end = nullptr;
    const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0') fail("config-value", std::string(flag) + " expects a number");
    return static_cast<uint64_t>(x);
}

Args parse_args(int argc, char** argv) {
    Args args;
    args.command = argv[1];
    for (int i = 2; i < argc; ++i) {
        const std::string flag = argv[i];
        auto value = [&]() -> std::string {
            if (i + 1 >= argc) fail("config-value", "flag " + flag + " needs a value");
            return argv[++i];
        };
        if (flag == "--config") args.config_path = value();
        else if (flag == "--ckpt") args.ckpt_path = value();
        else if (flag == "--init") args.init_path = value();
        else if (flag == "--track") args.track_path = value();
        else if (flag == "--out") args.out_path = value();
        else if (flag == "--mask") args.mask_path = value();
        else if (flag == "--video") args.video_path = value();
        else if (flag == "--gen-track") args.gen_track_path = value();
        else if (flag == "--svg") args.svg_path = value();
        else if (flag == "--background") args.background_path = value();
        else if (flag == "--generated") args.generated_path = value();
        else if (flag == "--stage") args.stage = value();
        else if (flag == "--prompt") args.prompt = value();
        else if (flag == "--prompt-at") {
            const std::string v = value();
            const size_t colon = v.find(':');
            if (colon == std::string::npos)
                fail("config-value", "--prompt-at expects FRAME:TEXT");
            PromptKeyframe k;
            k.frame = std::atoi(v.substr(0, colon).c_str());
            k.prompt = v.substr(colon + 1);
            args.prompt_keyframes.push_back(std::move(k));
        } else if (flag == "--steps") args.steps = static_cast<int>(parse_u64(value(), "--steps"));
        else if (flag == "--scale") args.scale = std::atof(value().c_str());
        else if (flag == "--seed") args.seed = parse_u64(value(), "--seed");
        else if (flag == "--window") args.window = static_cast<int>(parse_u64(value(), "--window"));
        else if (flag == "--total-frames")
            args.total_frames = static_cast<int>(parse_u64(value(), "--total-frames"));
        else if (flag == "--chunk") args.chunk = static_cast<int>(parse_u64(value(), "--chunk"));
        else fail("config-value", "unknown flag " + flag);
    }
    if (const char* env = std::getenv("GVD_SEED")) args.seed = parse_u64(env, "GVD_SEED");
    return args;
}

RunConfig load_run_config(const Args& args) {
    RunConfig cfg;
    if (!args.config_path.empty()) cfg = load_config_file(args.config_path);
    return cfg;
}

GroundedUNet make_model(const RunConfig& cfg, const Args& args) {
    GroundedUNet model(cfg.model, cfg.init_seed);
    if (!args.ckpt_path.empty()) model.params.load_checkpoint(args.ckpt_path);
    if (cfg.bias_gain >= 0.0) model.params.at(model.bias_gain).value[0] = cfg.bias_gain;
    return model;
}

PromptSchedule resolve_prompts(const Args& args, const GroundedUNet& model, int frames) {
    std::vector<PromptKeyframe> keys = args.prompt_keyframes;
    if (keys.empty()) keys.push_back({0, args.prompt});
    return build_prompt_schedule(keys, model.text_embedder(), frames);
}

SampleOptions sample_options(const Args& args, const RunConfig& cfg) {
    SampleOptions opt;
    opt.steps = args.steps > 0 ? args.steps : cfg.model.sample_steps;
    opt.guidance_scale = args.scale >= 0.0 ? args.scale : cfg.model.guidance_scale;
    opt.seed = args.seed;
    return opt;
}

void require(bool ok, const std::string& what) {
    if (!ok) fail("config-value", what);
}

int cmd_train(const Args& args) {
    const RunConfig cfg = load_run_config(args);
    require(!args.out_path.empty(), "--out is required for train");
    const Stage stage = stage_from_name(args.stage);

    GroundedUNet model(cfg.model, cfg.init_seed);
    if (!args.init_path.empty()) model.params.load_checkpoint(args.init_path);

    const auto data = make_synthetic_videos(cfg.batch_size, cfg.train_frames, cfg.model.channels,
                                            cfg.model.latent_h, cfg.model.latent_w,
                                            args.seed ^ 0xDA7A);
    std::vector<TrainItem> batch;
    batch.reserve(data.size());
    for (const SynthSample& s : data) {
        TrainItem item;
        item.video = s.video;
        item.prompt = model.prompt_table(s.prompt, cfg.train_frames);
        item.track = stage == Stage::base ? nullptr : &s.track;
        batch.push_back(std::move(item));
    }

    const NoiseSchedule sched =
        linear_beta_schedule(cfg.model.timesteps, cfg.model.beta_start, cfg.model.beta_end);
    Trainer trainer(sched, cfg.learning_rate, args.seed + 1);
    for (int step = 1; step <= cfg.train_steps; ++step) {
        const double loss = trainer.step(model, batch, stage);
        if (step == 1 || step % 25 == 0 || step == cfg.train_steps)
            std::printf("step %d  stage %s  loss %.6f\n", step, stage_name(stage), loss);
    }
    model.params.save_checkpoint(args.out_path);
    std::printf("saved checkpoint to %s\n", args.out_path.c_str());
    return 0;
}

int cmd_sample(const Args& args) {
    const RunConfig cfg = load_run_config(args);
    require(!args.track_path.empty(), "--track is required for sample");
    require(!args.out_path.empty(), "--out is required for sample");

    GroundedUNet model = make_model(cfg, args);
    const GroundingTrack track = load_track_file(args.track_path);
    const PromptSchedule prompts = resolve_prompts(args, model, track.num_frames);
    const SampleOptions opt = sample_options(args, cfg);

    const Tensor video = sample_video(model, track, prompts.table, opt);
    write_latent_video(args.out_path, video);
    std::printf("wrote %d frames to %s\n", track.num_frames, args.out_path.c_str());
    return 0;
}

int cmd_long_range(const Args& args) {
    const RunConfig cfg = load_run_config(args);
    require(!args.track_path.empty(), "--track is required for long-range");
    require(!args.out_path.empty(), "--out is required for long-range");
    require(args.total_frames > 0, "--total-frames is required for long-range");
    require(args.window >= 0, "--window is required for long-range");

    GroundedUNet model = make_model(cfg, args);
    const GroundingTrack track = load_track_file(args.track_path);
    const PromptSchedule prompts = resolve_prompts(args, model, args.total_frames);
    const GenerationPlan plan = make_generation_plan(args.total_frames, args.chunk, args.window);
    const SampleOptions opt = sample_options(args, cfg);

    const Tensor video = generate_long_range(model, track, prompts, plan, opt);
    write_latent_video(args.out_path, video);
    std::printf("wrote %d frames (%zu chunks) to %s\n", args.total_frames, plan.chunks.size(),
                args.out_path.c_str());
    return 0;
}

int cmd_metrics(const Args& args) {
    const RunConfig cfg = load_run_config(args);
    require(!args.video_path.empty(), "--video is required for metrics");

    const Tensor video = read_latent_video(args.video_path);
    StubEmbedder embedder(static_cast<int>(video.dim(1)));

    std::string csv = "metric,value\n";
    char line[128];
    const double tc = temporal_consistency(video, embedder, cfg.model.metrics_all_pairs);
    std::snprintf(line, sizeof(line), "temporal_consistency,%.6f\n", tc);
    csv += line;
    const double pc = prompt_consistency(video, args.prompt, embedder);
    std::snprintf(line, sizeof(line), "prompt_consistency,%.6f\n", pc);
    csv += line;

    if (!args.track_path.empty() && !args.gen_track_path.empty()) {
        const GroundingTrack src = load_track_file(args.track_path);
        const GroundingTrack gen = load_track_file(args.gen_track_path);
        const auto maps_src =
            track_condition_maps(src, static_cast<int>(video.dim(3)), static_cast<int>(video.dim(2)),
                                 cfg.model.keypoint_sigma, cfg.model.densify_sigma,
                                 cfg.model.densify_radius);
        const auto maps_gen =
            track_condition_maps(gen, static_cast<int>(video.dim(3)), static_cast<int>(video.dim(2)),
                                 cfg.model.keypoint_sigma, cfg.model.densify_sigma,
                                 cfg.model.densify_radius);
        std::snprintf(line, sizeof(line), "condition_similarity,%.6f\n",
                      condition_similarity(maps_src, maps_gen));
        csv += line;
    }

    if (args.out_path.empty()) std::fputs(csv.c_str(), stdout);
    else write_file(args.out_path, csv);

    if (!args.svg_path.empty()) {
        // per-neighbor cosine curve
        std::vector<double> curve;
        for (int64_t f = 0; f + 1 < video.dim(0); ++f) {
            Tensor a({video.dim(1), video.dim(2), video.dim(3)});
            Tensor b = a;
            const int64_t len = a.numel();
            std::memcpy(a.ptr(), video.ptr() + f * len, static_cast<size_t>(len) * sizeof(double));
            std::memcpy(b.ptr(), video.ptr() + (f + 1) * len,
                        static_cast<size_t>(len) * sizeof(double));
            curve.push_back(100.0 *
                            cosine_similarity(embedder.embed_frame(a), embedder.embed_frame(b)));
        }
        write_file(args.svg_path, svg_line_chart("Neighbor-frame consistency", "frame pair",
                                                 "100 x cosine", curve));
    }
    return 0;
}

int cmd_gate_stats(const Args& args) {
    const RunConfig cfg = load_run_config(args);
    require(!args.track_path.empty(), "--track is required for gate-stats");

    GroundedUNet model = make_model(cfg, args);
    const GroundingTrack track = load_track_file(args.track_path);
    const PromptSchedule prompts = resolve_prompts(args, model, track.num_frames);
    SampleOptions opt = sample_options(args, cfg);
    opt.collect_gates = true;

    SampleTrace trace;
    sample_video(model, track, prompts.table, opt, &trace);
    const SkipReport report = collect_skip_stats(trace.gate_trace, kGatedLayers);
    const std::string csv = skip_report_csv(report);
    if (args.out_path.empty()) std::fputs(csv.c_str(), stdout);
    else write_file(args.out_path, csv);

    if (!args.svg_path.empty()) {
        std::vector<double> skips;
        for (const auto& row : report.rows) skips.push_back(row.skip_percent);
        write_file(args.svg_path,
                   svg_bar_chart("Skipping percentage of each layer", "layer", "skip %", skips));
    }
    return 0;
}

int cmd_composite(const Args& args) {
    require(!args.background_path.empty(), "--background is required for composite");
    require(!args.generated_path.empty(), "--generated is required for composite");
    require(!args.mask_path.empty(), "--mask is required for composite");
    require(!args.out_path.empty(), "--out is required for composite");

    const Tensor background = read_latent_video(args.background_path);
    const Tensor generated = read_latent_video(args.generated_path);
    const ObjectMask mask =
        mask_from_grid(read_gvdm(args.mask_path), static_cast<int>(background.dim(0)));
    write_latent_video(args.out_path, object_composite(background, generated, mask));
    std::printf("wrote composite to %s\n", args.out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) return usage();
    const std::string command = argv[1];
    try {
        const Args args = parse_args(argc, argv);
        if (command == "train") return cmd_train(args);
        if (command == "sample") return cmd_sample(args);
        if (command == "long-range") return cmd_long_range(args);
        if (command == "metrics") return cmd_metrics(args);
        if (command == "gate-stats") return cmd_gate_stats(args);
        if (command == "composite") return cmd_composite(args);
    } catch (const GvdError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return usage();
}
