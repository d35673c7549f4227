#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gvd/grad_check.hpp"
#include "gvd/ops.hpp"
#include "gvd/rng.hpp"
#include "test_util.hpp"

using namespace gvd;
using gvdtest::random_tensor;

TEST_CASE("softmax matches direct exp/sum evaluation") {
    // independent oracle: exp and sum in 64-bit
    const Tensor x = Tensor::from({3}, {1.0, 2.0, 3.0});
    double denom = 0.0;
    for (double v : x.data) denom += std::exp(v);
    const Tensor y = softmax(x);
    for (int i = 0; i < 3; ++i) CHECK_EQ(y[i], doctest::Approx(std::exp(x[i]) / denom).epsilon(1e-12));
    CHECK_EQ(y[0], doctest::Approx(0.09003).epsilon(1e-4));
    CHECK_EQ(y[1], doctest::Approx(0.24473).epsilon(1e-4));
    CHECK_EQ(y[2], doctest::Approx(0.66524).epsilon(1e-4));
}

TEST_CASE("softmax symmetry and shift invariance") {
    const Tensor y = softmax(Tensor::from({2}, {0.0, 0.0}));
    CHECK_EQ(y[0], 0.5);
    CHECK_EQ(y[1], 0.5);

    RngStream rng(11, 1);
    for (int it = 0; it < 20; ++it) {
        Tensor x = random_tensor({7}, rng, 3.0);
        Tensor shifted = x;
        const double c = rng.normal() * 10.0;
        for (double& v : shifted.data) v += c;
        CHECK_LT(max_abs_diff(softmax(x), softmax(shifted)), 1e-12);
    }
}

TEST_CASE("softmax rows sum to 1 for large-magnitude inputs") {
    RngStream rng(12, 1);
    for (int it = 0; it < 50; ++it) {
        Tensor x = random_tensor({9}, rng, 1e4);
        const Tensor y = softmax(x);
        double sum = 0.0;
        for (double v : y.data) {
            CHECK_GE(v, 0.0);
            sum += v;
        }
        CHECK_EQ(sum, doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("softmax rejects empty input") {
    CHECK_ERROR_CODE(softmax(Tensor({0})), "empty-softmax");
}

TEST_CASE("attention with a single key returns that value row") {
    RngStream rng(13, 1);
    for (int it = 0; it < 10; ++it) {
        const Tensor q = random_tensor({3, 4}, rng);
        const Tensor k = random_tensor({1, 4}, rng);
        const Tensor v = random_tensor({1, 5}, rng);
        const Tensor out = scaled_dot_attention(q, k, v);
        for (int64_t i = 0; i < 3; ++i)
            for (int64_t j = 0; j < 5; ++j) CHECK_EQ(out.at2(i, j), doctest::Approx(v.at2(0, j)).epsilon(1e-12));
    }
}

TEST_CASE("attention masking limit and constant-bias invariance") {
    RngStream rng(14, 1);
    const Tensor q = random_tensor({4, 6}, rng);
    const Tensor k = random_tensor({5, 6}, rng);
    const Tensor v = random_tensor({5, 3}, rng);

    Tensor bias({5});
    bias[2] = -1e9;
    Tensor attn;
    scaled_dot_attention(q, k, v, &bias, &attn);
    for (int64_t i = 0; i < 4; ++i) CHECK_LT(attn.at2(i, 2), 1e-6);

    Tensor constant({5});
    for (double& b : constant.data) b = 3.25;
    const Tensor plain = scaled_dot_attention(q, k, v);
    const Tensor biased = scaled_dot_attention(q, k, v, &constant);
    CHECK_LT(max_abs_diff(plain, biased), 1e-10);
}

TEST_CASE("attention rows sum to one") {
    RngStream rng(15, 1);
    const Tensor q = random_tensor({6, 8}, rng);
    const Tensor k = random_tensor({7, 8}, rng);
    const Tensor v = random_tensor({7, 8}, rng);
    Tensor attn;
    scaled_dot_attention(q, k, v, nullptr, &attn);
    for (int64_t i = 0; i < attn.rows(); ++i) {
        double sum = 0.0;
        for (int64_t j = 0; j < attn.cols(); ++j) sum += attn.at2(i, j);
        CHECK_EQ(sum, doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("attention shape errors") {
    RngStream rng(16, 1);
    const Tensor q = random_tensor({3, 4}, rng);
    const Tensor k = random_tensor({5, 6}, rng);
    const Tensor v = random_tensor({5, 4}, rng);
    CHECK_ERROR_CODE(scaled_dot_attention(q, k, v), "attention-shape");

    const Tensor k2 = random_tensor({5, 4}, rng);
    const Tensor v2 = random_tensor({4, 4}, rng);
    CHECK_ERROR_CODE(scaled_dot_attention(q, k2, v2), "attention-shape");

    Tensor bad_bias({3});
    CHECK_ERROR_CODE(scaled_dot_attention(q, k2, random_tensor({5, 4}, rng), &bad_bias),
                     "attention-shape");
}

TEST_CASE("mlp matches a hand-rolled matmul oracle") {
    RngStream rng(17, 1);
    MlpWeights w{random_tensor({4, 8}, rng), random_tensor({8}, rng), random_tensor({8, 3}, rng),
                 random_tensor({3}, rng)};
    const Tensor x = random_tensor({5, 4}, rng);
    const Tensor y = mlp_forward(x, w);

    // oracle: explicit loops, no shared code with linear_forward
    for (int64_t r = 0; r < 5; ++r) {
        double hidden[8];
        for (int64_t j = 0; j < 8; ++j) {
            double acc = w.b1[j];
            for (int64_t i = 0; i < 4; ++i) acc += x.at2(r, i) * w.w1.at2(i, j);
            hidden[j] = 0.5 * acc * (1.0 + std::erf(acc / std::sqrt(2.0)));
        }
        for (int64_t j = 0; j < 3; ++j) {
            double acc = w.b2[j];
            for (int64_t i = 0; i < 8; ++i) acc += hidden[i] * w.w2.at2(i, j);
            CHECK_EQ(y.at2(r, j), doctest::Approx(acc).epsilon(1e-10));
        }
    }
}

TEST_CASE("mlp zero weights give the bias; identity hook reproduces input") {
    RngStream rng(18, 1);
    MlpWeights w{Tensor({4, 6}), Tensor({6}), Tensor({6, 2}), Tensor({2})};
    w.b2[0] = 1.5;
    w.b2[1] = -2.0;
    const Tensor x = random_tensor({3, 4}, rng);
    const Tensor y = mlp_forward(x, w);
    for (int64_t r = 0; r < 3; ++r) {
        CHECK_EQ(y.at2(r, 0), 1.5);
        CHECK_EQ(y.at2(r, 1), -2.0);
    }

    MlpWeights id{Tensor({4, 4}), Tensor({4}), Tensor({4, 4}), Tensor({4})};
    for (int i = 0; i < 4; ++i) {
        id.w1.at2(i, i) = 1.0;
        id.w2.at2(i, i) = 1.0;
    }
    const Tensor y2 = mlp_forward(x, id, MlpActivation::identity);
    CHECK(bit_equal(y2, x));
}

TEST_CASE("mlp shape error") {
    RngStream rng(19, 1);
    MlpWeights w{random_tensor({4, 8}, rng), random_tensor({8}, rng), random_tensor({8, 3}, rng),
                 random_tensor({3}, rng)};
    CHECK_ERROR_CODE(mlp_forward(random_tensor({5, 3}, rng), w), "mlp-shape");
}

TEST_CASE("fourier embedding anchors") {
    const Tensor zero = fourier_embed(Tensor::from({1}, {0.0}), 5);
    for (int k = 0; k < 5; ++k) {
        CHECK_EQ(zero[k], 0.0);                                       // sin block
        CHECK_EQ(zero[5 + k], doctest::Approx(1.0).epsilon(1e-15));  // cos block
    }

    const Tensor half = fourier_embed(Tensor::from({1}, {0.5}), 3);
    CHECK_EQ(half[0], doctest::Approx(1.0).epsilon(1e-12));  // sin(pi/2)
    CHECK_EQ(half[3], doctest::Approx(0.0).epsilon(1e-12));  // cos(pi/2)

    CHECK_EQ(fourier_embed(Tensor({4}), 8).numel(), 64);
}

TEST_CASE("gaussian blur preserves constants, impulses, and mass") {
    // constant map unchanged
    std::vector<double> cmap(12 * 10, 0.7);
    std::vector<double> out(cmap.size());
    gaussian_blur_grid(cmap.data(), out.data(), 12, 10, 1.3, 3);
    for (double v : out) CHECK_EQ(v, doctest::Approx(0.7).epsilon(1e-10));

    // impulse at the center of a large map equals the normalized kernel
    const int n = 33, r = 2;
    const double sigma = 1.1;
    std::vector<double> imp(n * n, 0.0);
    imp[(n / 2) * n + n / 2] = 1.0;
    std::vector<double> blurred(imp.size());
    gaussian_blur_grid(imp.data(), blurred.data(), n, n, sigma, r);
    double k1d[2 * r + 1], ksum = 0.0;
    for (int o = -r; o <= r; ++o) {
        k1d[o + r] = std::exp(-0.5 * o * o / (sigma * sigma));
        ksum += k1d[o + r];
    }
    for (int o = 0; o < 2 * r + 1; ++o) k1d[o] /= ksum;
    double total = 0.0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const int dy = y - n / 2, dx = x - n / 2;
            const double expect =
                std::abs(dy) <= r && std::abs(dx) <= r ? k1d[dy + r] * k1d[dx + r] : 0.0;
            CHECK_EQ(blurred[y * n + x], doctest::Approx(expect).epsilon(1e-10));
            total += blurred[y * n + x];
        }
    CHECK_EQ(total, doctest::Approx(1.0).epsilon(1e-9));

    // random map: summation oracle for mass preservation
    RngStream rng(20, 1);
    std::vector<double> rnd(16 * 16);
    double mass_in = 0.0;
    for (double& v : rnd) {
        v = rng.uniform01();
        mass_in += v;
    }
    std::vector<double> rout(rnd.size());
    gaussian_blur_grid(rnd.data(), rout.data(), 16, 16, 2.0, 4);
    double mass_out = 0.0;
    for (double v : rout) mass_out += v;
    CHECK_EQ(mass_out, doctest::Approx(mass_in).epsilon(1e-6));
}

TEST_CASE("gaussian blur rejects bad sigma") {
    std::vector<double> m(4, 0.0), out(4);
    CHECK_ERROR_CODE(gaussian_blur_grid(m.data(), out.data(), 2, 2, 0.0, 1), "blur-sigma");
    CHECK_ERROR_CODE(gaussian_blur_grid(m.data(), out.data(), 2, 2, -1.0, 1), "blur-sigma");
}

TEST_CASE("layer norm anchors") {
    Tensor scale({6}), shift({6});
    for (double& v : scale.data) v = 1.0;

    // constant token -> all zeros
    Tensor x({1, 6}, 3.7);
    const Tensor y = layer_norm(x, scale, shift);
    for (double v : y.data) CHECK_EQ(v, doctest::Approx(0.0).epsilon(1e-9));

    // random token: mean 0, variance 1 pre-affine
    RngStream rng(21, 1);
    const Tensor xr = random_tensor({1, 64}, rng, 2.0);
    const Tensor yr = layer_norm(xr, Tensor({64}, 1.0), Tensor({64}));
    double mean = 0.0, var = 0.0;
    for (double v : yr.data) mean += v;
    mean /= 64.0;
    for (double v : yr.data) var += (v - mean) * (v - mean);
    var /= 64.0;
    CHECK_EQ(mean, doctest::Approx(0.0).epsilon(1e-6));
    CHECK_EQ(var, doctest::Approx(1.0).epsilon(1e-3));

    // zero scale -> shift everywhere
    Tensor sh({6});
    for (int i = 0; i < 6; ++i) sh[i] = i * 0.5;
    const Tensor ys = layer_norm(random_tensor({3, 6}, rng), Tensor({6}), sh);
    for (int64_t r = 0; r < 3; ++r)
        for (int64_t j = 0; j < 6; ++j) CHECK_EQ(ys.at2(r, j), sh[j]);
}

TEST_CASE("layer norm rejects zero feature width") {
    CHECK_ERROR_CODE(layer_norm(Tensor({3, 0}), Tensor({0}), Tensor({0})), "norm-shape");
}

TEST_CASE("grad_check: softmax") {
    RngStream rng(22, 1);
    for (int it = 0; it < 20; ++it)
        CHECK_LT(grad_check("softmax", {random_tensor({6}, rng)}), 1e-4);
}

TEST_CASE("grad_check: attention with and without bias") {
    RngStream rng(23, 1);
    for (int it = 0; it < 10; ++it) {
        const Tensor q = random_tensor({3, 4}, rng);
        const Tensor k = random_tensor({3, 4}, rng);
        const Tensor v = random_tensor({3, 4}, rng);
        CHECK_LT(grad_check("attention", {q, k, v}), 1e-4);
        CHECK_LT(grad_check("attention-bias", {q, k, v, random_tensor({3}, rng)}), 1e-4);
    }
}

TEST_CASE("grad_check: mlp and layer norm") {
    RngStream rng(24, 1);
    for (int it = 0; it < 10; ++it) {
        CHECK_LT(grad_check("mlp", {random_tensor({3, 4}, rng), random_tensor({4, 6}, rng),
                                    random_tensor({6}, rng), random_tensor({6, 2}, rng),
                                    random_tensor({2}, rng)}),
                 1e-4);
        CHECK_LT(grad_check("layer-norm", {random_tensor({3, 5}, rng), random_tensor({5}, rng),
                                           random_tensor({5}, rng)}),
                 1e-4);
    }
}

TEST_CASE("grad_check: linear is exact up to roundoff") {
    RngStream rng(25, 1);
    for (int it = 0; it < 10; ++it)
        CHECK_LT(grad_check("linear", {random_tensor({4, 5}, rng), random_tensor({5, 3}, rng),
                                       random_tensor({3}, rng)}),
                 1e-8);
}

TEST_CASE("grad_check: unknown or forward-only ops raise no-backward") {
    CHECK_ERROR_CODE(grad_check("hard-gate", {Tensor({3})}), "no-backward");
    CHECK_ERROR_CODE(grad_check("does-not-exist", {Tensor({3})}), "no-backward");
}

TEST_CASE("exported ops are deterministic") {
    RngStream rng(26, 1);
    const Tensor q = random_tensor({4, 4}, rng);
    const Tensor k = random_tensor({5, 4}, rng);
    const Tensor v = random_tensor({5, 4}, rng);
    CHECK(bit_equal(scaled_dot_attention(q, k, v), scaled_dot_attention(q, k, v)));
    const Tensor x = random_tensor({9}, rng);
    CHECK(bit_equal(softmax(x), softmax(x)));
}

TEST_CASE("rng streams reproduce bit-exactly and separate by id") {
    RngStream a(42, RngStream::kNoise), b(42, RngStream::kNoise);
    for (int i = 0; i < 100; ++i) CHECK_EQ(a.next_u64(), b.next_u64());
    RngStream c(42, RngStream::kGateEpsilon);
    CHECK_NE(RngStream(42, RngStream::kNoise).next_u64(), c.next_u64());
    RngStream s1 = RngStream(7, 1).substream(3), s2 = RngStream(7, 1).substream(4);
    CHECK_NE(s1.next_u64(), s2.next_u64());
}

TEST_CASE("full-matrix bias agrees with a replicated per-key bias") {
    RngStream rng(27, 1);
    const Tensor q = random_tensor({4, 5}, rng);
    const Tensor k = random_tensor({6, 5}, rng);
    const Tensor v = random_tensor({6, 3}, rng);
    const Tensor per_key = random_tensor({6}, rng);
    Tensor full({4, 6});
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 6; ++j) full.at2(i, j) = per_key[j];
    CHECK(bit_equal(scaled_dot_attention(q, k, v, &per_key),
                    scaled_dot_attention(q, k, v, &full)));

    // a row-dependent full bias reweights queries independently
    full.at2(2, 1) += 9.0;
    Tensor attn;
    scaled_dot_attention(q, k, v, &full, &attn);
    CHECK_GT(attn.at2(2, 1), 0.9);
}
