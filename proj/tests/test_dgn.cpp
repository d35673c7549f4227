#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gvd/dgn.hpp"
#include "gvd/grad_check.hpp"
#include "test_util.hpp"

using namespace gvd;
using gvdtest::random_tensor;

TEST_CASE("relevance attention pools object features") {
    ParamStore ps;
    GateLayer gate = make_gate_layer(ps, "g", 16);
    RngStream rng(50, 1);

    // M = 1: alpha = [1], the MLP sees p_0 exactly
    const Tensor p1 = random_tensor({1, 16}, rng);
    RelevanceCache c1;
    relevance_forward(ps, gate, p1, &c1);
    CHECK_EQ(c1.alpha.numel(), 1);
    CHECK_EQ(c1.alpha[0], 1.0);
    for (int64_t i = 0; i < 16; ++i) CHECK_EQ(c1.weighted.at2(0, i), p1.at2(0, i));

    // all objects identical -> uniform attention
    Tensor same({3, 16});
    for (int64_t k = 0; k < 3; ++k)
        for (int64_t i = 0; i < 16; ++i) same.at2(k, i) = p1.at2(0, i);
    RelevanceCache c2;
    relevance_forward(ps, gate, same, &c2);
    for (int64_t k = 0; k < 3; ++k) CHECK_EQ(c2.alpha[k], doctest::Approx(1.0 / 3).epsilon(1e-12));

    // v = 0 -> uniform attention for any features
    for (double& v : ps.at(gate.v).value.data) v = 0.0;
    const Tensor mixed = random_tensor({4, 16}, rng);
    RelevanceCache c3;
    relevance_forward(ps, gate, mixed, &c3);
    for (int64_t k = 0; k < 4; ++k) CHECK_EQ(c3.alpha[k], doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("gate hidden width follows the low-rank rule") {
    CHECK_EQ(gate_hidden_width(64), 8);
    CHECK_EQ(gate_hidden_width(128), 16);
    CHECK_EQ(gate_hidden_width(16), 4);  // floor at 4
    CHECK_EQ(gate_hidden_width(8), 4);
}

TEST_CASE("dual gate anchors") {
    // inference, r = 0: the boundary uses >= so the gate opens
    const GateDecision d0 = gate_decision(0.0, false, 0.0, 0.0);
    CHECK_EQ(d0.hard, 1.0);
    CHECK_EQ(d0.value, 1.0);

    // train with the eps = 0 hook: d_s = sigmoid(r)
    const GateDecision d1 = gate_decision(0.0, true, 0.0, 0.9);
    CHECK_EQ(d1.soft, 0.5);
    CHECK_EQ(d1.value, 0.5);  // n >= 0.5 selects the soft gate
    const GateDecision d2 = gate_decision(1.3, true, 0.0, 0.9);
    CHECK_EQ(d2.soft, doctest::Approx(1.0 / (1.0 + std::exp(-1.3))).epsilon(1e-12));

    // n < 0.5 selects the hard gate
    const GateDecision d3 = gate_decision(-0.2, true, 0.0, 0.1);
    CHECK_EQ(d3.value, 0.0);
    CHECK_EQ(d3.hard, 0.0);
}

TEST_CASE("soft gate lies strictly inside (0,1) and is monotone") {
    for (double r : {-30.0, -2.0, 0.0, 0.7, 25.0}) {
        const GateDecision d = gate_decision(r, true, 0.0, 1.0);
        CHECK_GT(d.soft, 0.0);
        CHECK_LT(d.soft, 1.0);
    }
    double prev_soft = -1.0, prev_hard = -1.0;
    for (double r = -6.0; r <= 6.0; r += 0.25) {
        const GateDecision d = gate_decision(r, true, 0.0, 1.0);
        CHECK_GT(d.soft, prev_soft);
        CHECK_GE(d.hard, prev_hard);
        prev_soft = d.soft;
        prev_hard = d.hard;
    }
}

TEST_CASE("monte carlo hard-gate mean follows the logistic CDF") {
    // P(r + eps >= 0) = sigmoid(r) for eps ~ Logistic(0,1)
    const int draws = 100000;
    RngStream eps_stream(123, RngStream::kGateEpsilon);
    RngStream uni_stream(123, RngStream::kGateUniform);
    for (double r : {-2.0, -0.5, 0.0, 0.5, 2.0}) {
        double mean = 0.0;
        for (int i = 0; i < draws; ++i) {
            const GateDecision d = sample_gate(r, true, eps_stream, uni_stream);
            mean += d.hard;
        }
        mean /= draws;
        const double p = sigmoid(r);
        const double se = std::sqrt(p * (1.0 - p) / draws);
        CHECK_LT(std::fabs(mean - p), 3.0 * se + 1e-12);
    }
}

TEST_CASE("train-mode mixing matches the uniform selector statistics") {
    const int draws = 100000;
    RngStream eps_stream(77, RngStream::kGateEpsilon);
    RngStream uni_stream(77, RngStream::kGateUniform);
    int soft_selected = 0;
    for (int i = 0; i < draws; ++i) {
        const GateDecision d = sample_gate(0.4, true, eps_stream, uni_stream);
        if (d.mix >= 0.5) {
            ++soft_selected;
            CHECK_EQ(d.value, d.soft);
        } else {
            CHECK_EQ(d.value, d.hard);
        }
    }
    CHECK_EQ(static_cast<double>(soft_selected) / draws, doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("inference is deterministic and noise-free") {
    RngStream e(1, 1), u(1, 2);
    for (int i = 0; i < 10; ++i) {
        const GateDecision d = sample_gate(0.3, false, e, u);
        CHECK_EQ(d.noised, 0.3);
        CHECK_EQ(d.value, 1.0);
    }
    CHECK_EQ(e.counter(), 0);  // no draws consumed
    CHECK_EQ(u.counter(), 0);
}

TEST_CASE("soft gate gradient passes grad_check; hard path propagates zero") {
    RngStream rng(51, 1);
    for (int it = 0; it < 20; ++it)
        CHECK_LT(grad_check("soft-gate", {random_tensor({1}, rng)}), 1e-4);

    const GateDecision soft = gate_decision(0.3, true, 0.1, 0.8);
    CHECK_EQ(gate_value_grad(soft), doctest::Approx(soft.soft * (1 - soft.soft)).epsilon(1e-12));
    const GateDecision hard = gate_decision(0.3, true, 0.1, 0.2);
    CHECK_EQ(gate_value_grad(hard), 0.0);
    const GateDecision infer = gate_decision(0.3, false, 0.0, 0.0);
    CHECK_EQ(gate_value_grad(infer), 0.0);
}

TEST_CASE("skip statistics") {
    std::vector<GateDecision> trace;
    for (int step = 0; step < 100; ++step)
        for (int layer = 0; layer < 3; ++layer) {
            GateDecision d;
            d.layer = layer;
            d.hard = layer == 0 ? 1.0 : (layer == 1 ? (step % 2 ? 1.0 : 0.0) : 0.0);
            trace.push_back(d);
        }
    const SkipReport report = collect_skip_stats(trace, 3);
    REQUIRE_EQ(report.rows.size(), 3);
    CHECK_EQ(report.rows[0].skip_percent, 0.0);
    CHECK_EQ(report.rows[1].skip_percent, 50.0);
    CHECK_EQ(report.rows[2].skip_percent, 100.0);
    CHECK_EQ(report.rows[0].samples, 100);

    CHECK_ERROR_CODE(collect_skip_stats({}, 3), "empty-trace");

    const std::string csv = skip_report_csv(report);
    CHECK(csv.find("layer_index,skip_percent,samples") == 0);
    CHECK(csv.find("1,50.000000,100") != std::string::npos);
}

TEST_CASE("relevance gradients flow into v, the MLP, and the pooled features") {
    ParamStore ps;
    GateLayer gate = make_gate_layer(ps, "g", 12);
    RngStream rng(52, 1);
    const Tensor pooled = random_tensor({3, 12}, rng);

    // finite-difference check of d r / d pooled
    RelevanceCache cache;
    relevance_forward(ps, gate, pooled, &cache);
    Tensor dpooled({3, 12});
    relevance_backward(ps, gate, cache, 1.0, &dpooled);

    const double h = 1e-5;
    Tensor pert = pooled;
    double max_rel = 0.0;
    for (int64_t i = 0; i < pooled.numel(); ++i) {
        pert.data[static_cast<size_t>(i)] += h;
        const double fp = relevance_forward(ps, gate, pert, nullptr);
        pert.data[static_cast<size_t>(i)] -= 2 * h;
        const double fm = relevance_forward(ps, gate, pert, nullptr);
        pert.data[static_cast<size_t>(i)] = pooled.data[static_cast<size_t>(i)];
        const double numeric = (fp - fm) / (2 * h);
        const double a = dpooled.data[static_cast<size_t>(i)];
        max_rel = std::max(max_rel,
                           std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-6}));
    }
    CHECK_LT(max_rel, 1e-4);

    // parameter gradients are populated
    double v_norm = 0.0;
    for (double v : ps.grad(gate.v).data) v_norm += std::fabs(v);
    CHECK_GT(v_norm, 0.0);
}
