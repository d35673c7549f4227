#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gvd/diffusion.hpp"
#include "test_util.hpp"

using namespace gvd;
using gvdtest::random_tensor;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.channels = 2;
    cfg.latent_h = cfg.latent_w = 8;
    cfg.base_width = 8;
    cfg.dg = 12;
    cfg.dtext = 10;
    cfg.num_freqs = 2;
    cfg.g_hidden = 16;
    cfg.time_dim = 8;
    cfg.timesteps = 50;
    cfg.sample_steps = 5;
    return cfg;
}

GroundingTrack simple_track(int frames, int objects) {
    GroundingTrack t;
    t.num_frames = frames;
    for (int k = 0; k < objects; ++k) {
        TrackObject obj;
        obj.phrase = "obj " + std::to_string(k);
        for (int f = 0; f < frames; ++f) {
            ConditionSlot s;
            s.kind = ConditionSlot::Kind::box;
            const double x0 = 0.15 + 0.1 * k, y0 = 0.1 + 0.04 * f;
            s.box = {x0, y0, x0 + 0.35, y0 + 0.4};
            obj.frames.push_back(s);
        }
        t.objects.push_back(obj);
    }
    return t;
}

}  // namespace

TEST_CASE("linear beta schedule") {
    const NoiseSchedule s = linear_beta_schedule(2, 0.1, 0.2);
    CHECK_EQ(s.beta[1], 0.1);
    CHECK_EQ(s.beta[2], 0.2);
    CHECK_EQ(s.alpha_bar[0], 1.0);
    CHECK_EQ(s.alpha_bar[1], doctest::Approx(0.9).epsilon(1e-15));
    CHECK_EQ(s.alpha_bar[2], doctest::Approx(0.72).epsilon(1e-15));

    const NoiseSchedule big = linear_beta_schedule(1000, 1e-4, 0.02);
    CHECK_EQ(big.beta[1], 1e-4);
    CHECK_EQ(big.beta[1000], 0.02);
    for (int t = 1; t <= 1000; ++t) CHECK_LT(big.alpha_bar[t], big.alpha_bar[t - 1]);

    CHECK_ERROR_CODE(linear_beta_schedule(10, 0.2, 0.1), "schedule-bounds");
    CHECK_ERROR_CODE(linear_beta_schedule(10, 0.0, 0.1), "schedule-bounds");
    CHECK_ERROR_CODE(linear_beta_schedule(10, 0.1, 1.0), "schedule-bounds");
}

TEST_CASE("add_noise closed form") {
    RngStream rng(60, 1);
    const NoiseSchedule s = linear_beta_schedule(100, 1e-3, 0.05);
    const Tensor z0 = random_tensor({2, 2, 4, 4}, rng);
    const Tensor eps = random_tensor({2, 2, 4, 4}, rng);

    CHECK(bit_equal(add_noise(z0, 0, Tensor(z0.shape), s), z0));

    const Tensor zt = add_noise(z0, 40, Tensor(z0.shape), s);
    const double a = std::sqrt(s.alpha_bar[40]);
    for (size_t i = 0; i < z0.data.size(); ++i)
        CHECK_EQ(zt.data[i], doctest::Approx(a * z0.data[i]).epsilon(1e-15));

    CHECK_ERROR_CODE(add_noise(z0, 101, eps, s), "timestep-range");
    CHECK_ERROR_CODE(add_noise(z0, -1, eps, s), "timestep-range");
}

TEST_CASE("closed form matches the iterated per-step mean map") {
    // oracle: z <- sqrt(1 - beta_t) z applied t times with zero noise
    RngStream rng(61, 1);
    const NoiseSchedule s = linear_beta_schedule(64, 2e-3, 0.04);
    const Tensor z0 = random_tensor({1, 1, 4, 4}, rng);
    for (int t : {1, 7, 33, 64}) {
        Tensor iterated = z0;
        for (int step = 1; step <= t; ++step)
            for (double& v : iterated.data) v *= std::sqrt(1.0 - s.beta[step]);
        const Tensor closed = add_noise(z0, t, Tensor(z0.shape), s);
        CHECK_LT(max_abs_diff(iterated, closed), 1e-10);
    }
}

TEST_CASE("ddim inversion oracle") {
    RngStream rng(62, 1);
    const NoiseSchedule s = linear_beta_schedule(200, 1e-3, 0.03);
    for (int it = 0; it < 100; ++it) {
        const Tensor z0 = random_tensor({1, 2, 4, 4}, rng);
        const Tensor eps = random_tensor({1, 2, 4, 4}, rng);
        const int t = static_cast<int>(rng.uniform_int(1, 200));
        const Tensor zt = add_noise(z0, t, eps, s);
        const Tensor back = ddim_step(zt, eps, t, 0, s);
        CHECK_LT(max_abs_diff(back, z0), 1e-8);
    }
}

TEST_CASE("ddim step ordering and determinism") {
    RngStream rng(63, 1);
    const NoiseSchedule s = linear_beta_schedule(50, 1e-3, 0.05);
    const Tensor z = random_tensor({1, 1, 4, 4}, rng);
    const Tensor e = random_tensor({1, 1, 4, 4}, rng);
    CHECK_ERROR_CODE(ddim_step(z, e, 10, 10, s), "ddim-order");
    CHECK_ERROR_CODE(ddim_step(z, e, 10, 12, s), "ddim-order");
    CHECK_ERROR_CODE(ddim_step(z, e, 0, 0, s), "ddim-order");
    CHECK(bit_equal(ddim_step(z, e, 10, 3, s), ddim_step(z, e, 10, 3, s)));
}

TEST_CASE("sampling timestep subsequence") {
    const std::vector<int> ts = sampling_timesteps(1000, 25);
    REQUIRE_EQ(ts.size(), 25);
    CHECK_EQ(ts.front(), 960);  // 1000 * 24 / 25
    CHECK_EQ(ts.back(), 0);
    for (size_t i = 1; i < ts.size(); ++i) CHECK_LT(ts[i], ts[i - 1]);
    CHECK_ERROR_CODE(sampling_timesteps(10, 11), "schedule-bounds");
}

TEST_CASE("diffusion loss anchors") {
    RngStream rng(64, 1);
    const Tensor eps = random_tensor({2, 1, 4, 4}, rng);
    CHECK_EQ(diffusion_loss(eps, eps), 0.0);  // predicting exactly the noise
    const Tensor pred = random_tensor({2, 1, 4, 4}, rng);
    CHECK_GE(diffusion_loss(pred, eps), 0.0);
}

TEST_CASE("fresh grounded unet equals the base network") {
    GroundedUNet model(tiny_config(), 7);
    RngStream rng(65, 1);
    for (int it = 0; it < 10; ++it) {
        const Tensor z = random_tensor({3, 2, 8, 8}, rng);
        const Tensor c = model.prompt_table("a scene", 3);
        const GroundingTrack track = simple_track(3, 2);
        ForwardOptions opt;
        const Tensor grounded = model.forward(z, 17, c, &track, opt);
        const Tensor base = model.forward_base(z, 17, c);
        CHECK_LT(max_abs_diff(grounded, base), 1e-12);
        CHECK_EQ(grounded.shape, z.shape);
    }
}

TEST_CASE("gates forced to zero make the output independent of grounded tokens") {
    ModelConfig cfg = tiny_config();
    GroundedUNet model(cfg, 8);
    // activate the grounded pathway so the test is meaningful
    for (const auto& blk : model.blocks) model.params.at(blk.stga.gamma).value[0] = 0.6;

    RngStream rng(66, 1);
    const Tensor z = random_tensor({2, 2, 8, 8}, rng);
    const Tensor c = model.prompt_table("scene", 2);

    // same geometry (same maps), different phrases (different grounded tokens)
    GroundingTrack t1 = simple_track(2, 2);
    GroundingTrack t2 = t1;
    t2.objects[0].phrase = "something else";
    t2.objects[1].phrase = "entirely different";

    ForwardOptions opt;
    const std::array<double, 5> zeros{0, 0, 0, 0, 0};
    opt.gate_override = &zeros;
    const Tensor o1 = model.forward(z, 9, c, &t1, opt);
    const Tensor o2 = model.forward(z, 9, c, &t2, opt);
    CHECK(bit_equal(o1, o2));

    const std::array<double, 5> ones{1, 1, 1, 1, 1};
    opt.gate_override = &ones;
    const Tensor o3 = model.forward(z, 9, c, &t1, opt);
    const Tensor o4 = model.forward(z, 9, c, &t2, opt);
    CHECK_GT(max_abs_diff(o3, o4), 1e-9);
    CHECK_GT(max_abs_diff(o3, o1), 1e-9);
}

TEST_CASE("stage masks cover every parameter exactly once") {
    GroundedUNet model(tiny_config(), 9);
    const auto base = model.params.stage_mask(Stage::base);
    const auto stga = model.params.stage_mask(Stage::stga);
    const auto temporal = model.params.stage_mask(Stage::temporal);
    const auto dgn = model.params.stage_mask(Stage::dgn);
    for (size_t i = 0; i < model.params.size(); ++i) {
        const int count = base[i] + stga[i] + temporal[i] + dgn[i];
        CHECK_EQ(count, 1);
    }
}

TEST_CASE("training respects stage freezing") {
    ModelConfig cfg = tiny_config();
    GroundedUNet model(cfg, 10);
    const NoiseSchedule sched = linear_beta_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end);
    Trainer trainer(sched, 0.01, 99);

    RngStream rng(67, 1);
    GroundingTrack track = simple_track(2, 1);
    std::vector<TrainItem> batch;
    TrainItem item;
    item.video = random_tensor({2, 2, 8, 8}, rng, 0.5);
    item.prompt = model.prompt_table("clip", 2);
    item.track = &track;
    batch.push_back(item);

    // snapshot everything, then train the stga stage
    std::vector<Tensor> before;
    for (size_t i = 0; i < model.params.size(); ++i)
        before.push_back(model.params.at(static_cast<int>(i)).value);

    for (int s = 0; s < 3; ++s) trainer.step(model, batch, Stage::stga);

    const auto mask = model.params.stage_mask(Stage::stga);
    int changed = 0;
    for (size_t i = 0; i < model.params.size(); ++i) {
        const bool same = bit_equal(before[i], model.params.at(static_cast<int>(i)).value);
        if (!mask[i]) CHECK(same);
        if (mask[i] && !same) ++changed;
    }
    CHECK_GT(changed, 0);

    CHECK_ERROR_CODE(trainer.step(model, {}, Stage::base), "empty-batch");
}

TEST_CASE("base-stage training reduces the loss on a fixed batch") {
    ModelConfig cfg = tiny_config();
    GroundedUNet model(cfg, 11);
    const NoiseSchedule sched = linear_beta_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end);
    Trainer trainer(sched, 0.01, 100);

    RngStream rng(68, 1);
    std::vector<TrainItem> batch;
    for (int i = 0; i < 2; ++i) {
        TrainItem item;
        item.video = random_tensor({2, 2, 8, 8}, rng, 0.7);
        item.prompt = model.prompt_table("clip " + std::to_string(i), 2);
        batch.push_back(item);
    }
    const double first = trainer.step(model, batch, Stage::base);
    double last = first;
    for (int s = 0; s < 40; ++s) last = trainer.step(model, batch, Stage::base);
    CHECK_LT(last, first);
}

TEST_CASE("end-to-end loss gradient matches central differences") {
    ModelConfig cfg = tiny_config();
    GroundedUNet model(cfg, 12);
    // light up every pathway
    for (const auto& blk : model.blocks) model.params.at(blk.stga.gamma).value[0] = 0.4;
    model.params.at(model.bias_gain).value[0] = 0.3;

    RngStream rng(69, 1);
    GroundingTrack track = simple_track(2, 2);
    const Tensor z0 = random_tensor({2, 2, 8, 8}, rng, 0.5);
    const Tensor eps = random_tensor({2, 2, 8, 8}, rng);
    const Tensor c = model.prompt_table("clip", 2);
    const NoiseSchedule sched = linear_beta_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end);
    const int t = 23;
    const Tensor zt = add_noise(z0, t, eps, sched);

    const std::array<double, 5> gates{0.7, 0.7, 0.7, 0.7, 0.7};
    auto loss_at = [&]() {
        ForwardOptions opt;
        opt.mode = RunMode::train;
        opt.gate_override = &gates;
        return diffusion_loss(model.forward(zt, t, c, &track, opt), eps);
    };

    // analytic gradients
    {
        model.params.zero_grads();
        ForwardOptions opt;
        opt.mode = RunMode::train;
        opt.gate_override = &gates;
        UNetCache cache;
        const Tensor pred = model.forward(zt, t, c, &track, opt, &cache);
        Tensor dpred = sub(pred, eps);
        for (double& v : dpred.data) v *= 2.0 / static_cast<double>(pred.numel());
        model.backward(cache, dpred);
    }

    // 32-entry slice across representative parameters
    const char* names[] = {"unet.down0.self.attn.q.w", "ground.encoder.mlp.l1.w",
                           "unet.mid.stga.attn.v.w",   "unet.up0.temporal.attn.v.w",
                           "unet.up1.merge.w",         "unet.time_mlp.l1.w",
                           "unet.mid.stga.gamma",      "ground.bias_gain"};
    const double h = 1e-5;
    int checked = 0;
    double max_rel = 0.0;
    for (const char* name : names) {
        const int id = model.params.find(name);
        REQUIRE_GE(id, 0);
        Parameter& p = model.params.at(id);
        const int64_t count = std::min<int64_t>(5, p.value.numel());
        for (int64_t j = 0; j < count && checked < 32; ++j, ++checked) {
            const double orig = p.value.data[static_cast<size_t>(j)];
            p.value.data[static_cast<size_t>(j)] = orig + h;
            const double fp = loss_at();
            p.value.data[static_cast<size_t>(j)] = orig - h;
            const double fm = loss_at();
            p.value.data[static_cast<size_t>(j)] = orig;
            const double numeric = (fp - fm) / (2 * h);
            const double analytic = p.grad.data[static_cast<size_t>(j)];
            max_rel = std::max(max_rel, std::fabs(analytic - numeric) /
                                            std::max({std::fabs(analytic), std::fabs(numeric), 1e-6}));
        }
    }
    CHECK_EQ(checked, 32);
    CHECK_LT(max_rel, 1e-3);
}

TEST_CASE("cfg prediction special cases") {
    ModelConfig cfg = tiny_config();
    GroundedUNet model(cfg, 13);
    RngStream rng(70, 1);
    const Tensor zt = random_tensor({2, 2, 8, 8}, rng);
    const Tensor c = model.prompt_table("prompt", 2);
    GroundingTrack track = simple_track(2, 1);

    ForwardOptions opt;
    const Tensor cond = model.forward(zt, 11, c, &track, opt);
    GroundingTrack empty;
    empty.num_frames = 2;
    const Tensor uncond = model.forward(zt, 11, model.null_prompt_table(2), &empty, opt);

    CHECK(bit_equal(cfg_predict(model, zt, 11, c, &track, 1.0), cond));
    CHECK(bit_equal(cfg_predict(model, zt, 11, c, &track, 0.0), uncond));

    const Tensor mid = cfg_predict(model, zt, 11, c, &track, 7.5);
    for (size_t i = 0; i < mid.data.size(); ++i)
        CHECK_EQ(mid.data[i],
                 doctest::Approx(uncond.data[i] + 7.5 * (cond.data[i] - uncond.data[i])).epsilon(1e-12));

    // equal branches collapse to the unconditioned prediction for any scale
    const Tensor same = cfg_predict(model, zt, 11, model.null_prompt_table(2), &empty, 3.7);
    CHECK(bit_equal(same, uncond));
}

TEST_CASE("sampling is deterministic and honors the track length") {
    ModelConfig cfg = tiny_config();
    GroundedUNet model(cfg, 14);
    GroundingTrack track = simple_track(3, 1);
    const Tensor prompts = model.prompt_table("a moving block", 3);

    SampleOptions opt;
    opt.steps = 5;
    opt.guidance_scale = 2.0;
    opt.seed = 4242;
    const Tensor v1 = sample_video(model, track, prompts, opt);
    const Tensor v2 = sample_video(model, track, prompts, opt);
    CHECK(bit_equal(v1, v2));
    CHECK_EQ(v1.dim(0), 3);
    CHECK_EQ(v1.dim(1), cfg.channels);

    opt.seed = 4243;
    const Tensor v3 = sample_video(model, track, prompts, opt);
    CHECK_GT(max_abs_diff(v1, v3), 1e-6);
}

TEST_CASE("inference gate decisions are identical across repeated runs") {
    ModelConfig cfg = tiny_config();
    GroundedUNet model(cfg, 15);
    GroundingTrack track = simple_track(2, 2);
    const Tensor prompts = model.prompt_table("block", 2);

    SampleOptions opt;
    opt.steps = 3;
    opt.seed = 1;
    opt.collect_gates = true;
    SampleTrace a, b;
    sample_video(model, track, prompts, opt, &a);
    sample_video(model, track, prompts, opt, &b);
    REQUIRE_EQ(a.gate_trace.size(), b.gate_trace.size());
    REQUIRE_GT(a.gate_trace.size(), 0);
    for (size_t i = 0; i < a.gate_trace.size(); ++i) {
        CHECK_EQ(a.gate_trace[i].hard, b.gate_trace[i].hard);
        CHECK_EQ(a.gate_trace[i].relevance, b.gate_trace[i].relevance);
    }
}

TEST_CASE("gate usage penalty changes dgn-stage updates") {
    ModelConfig cfg = tiny_config();
    GroundingTrack track = simple_track(2, 2);
    RngStream rng(71, 1);
    const Tensor video = random_tensor({2, 2, 8, 8}, rng, 0.5);

    auto run_steps = [&](double penalty) {
        ModelConfig c2 = cfg;
        c2.gate_usage_penalty = penalty;
        GroundedUNet model(c2, 55);
        std::vector<TrainItem> batch(1);
        batch[0].video = video;
        batch[0].prompt = model.prompt_table("clip", 2);
        batch[0].track = &track;
        const NoiseSchedule sched = linear_beta_schedule(c2.timesteps, c2.beta_start, c2.beta_end);
        Trainer trainer(sched, 0.05, 321);
        for (int s = 0; s < 6; ++s) trainer.step(model, batch, Stage::dgn);
        Tensor v = model.params.value(model.gates[0].v);
        for (int i = 1; i < kGatedLayers; ++i) {
            const Tensor& vi = model.params.value(model.gates[static_cast<size_t>(i)].v);
            for (double x : vi.data) v.data.push_back(x);
        }
        return v;
    };
    const Tensor off = run_steps(0.0);
    const Tensor off2 = run_steps(0.0);
    const Tensor on = run_steps(0.5);
    CHECK_EQ(off.data, off2.data);      // deterministic
    CHECK_NE(off.data, on.data);        // the penalty reaches the gate parameters
}

TEST_CASE("unet preserves the (8, 4, 16, 16) latent shape") {
    ModelConfig cfg;  // production defaults: 4 channels, 16x16
    cfg.base_width = 16;
    cfg.dg = 16;
    cfg.dtext = 16;
    cfg.num_freqs = 2;
    cfg.g_hidden = 32;
    cfg.time_dim = 16;
    GroundedUNet model(cfg, 44);
    RngStream rng(72, 1);
    const Tensor z = random_tensor({8, 4, 16, 16}, rng);
    const Tensor out = model.forward(z, 500, model.prompt_table("wide", 8), nullptr,
                                     ForwardOptions{});
    CHECK_EQ(out.shape, z.shape);
    CHECK(out.all_finite());

    // spatial dims must divide by 4
    CHECK_ERROR_CODE(model.forward(random_tensor({2, 4, 10, 16}, rng), 1,
                                    model.prompt_table("x", 2), nullptr, ForwardOptions{}),
                     "latent-shape");
}
