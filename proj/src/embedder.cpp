#include "gvd/embedder.hpp"

#include <cmath>

#include "gvd/grounding.hpp"
#include "gvd/rng.hpp"

namespace gvd {

HashTextEmbedder::HashTextEmbedder(int width, uint64_t seed) : width_(width), seed_(seed) {}

Tensor HashTextEmbedder::embed(const std::string& phrase) const {
    RngStream rng(seed_, RngStream::hash_string(phrase));
    Tensor v({width_});
    for (double& x : v.data) x = rng.normal();
    return unit_normalize(v);
}

StubEmbedder::StubEmbedder(int channels, uint64_t seed)
    : channels_(channels), text_(channels * 16, seed) {}

Tensor StubEmbedder::embed_frame(const Tensor& frame) const {
    if (frame.rank() != 3 || frame.dim(0) != channels_)
        fail("embed-shape", "frame must be (C,H,W) with configured channel count");
    const int64_t h = frame.dim(1), w = frame.dim(2);
    Tensor v({static_cast<int64_t>(channels_) * 16});
    for (int c = 0; c < channels_; ++c)
        area_resize(frame.ptr() + static_cast<int64_t>(c) * h * w, static_cast<int>(w),
                    static_cast<int>(h), v.ptr() + static_cast<int64_t>(c) * 16, 4, 4);
    return unit_normalize(v);
}

Tensor StubEmbedder::embed_text(const std::string& text) const { return text_.embed(text); }

Tensor unit_normalize(const Tensor& v) {
    double norm = 0.0;
    for (double x : v.data) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) {
        // degenerate content maps to a fixed basis vector
        Tensor e(v.shape);
        if (e.numel() > 0) e[0] = 1.0;
        return e;
    }
    return scale(v, 1.0 / norm);
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
    double na = 0.0, nb = 0.0, ab = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        na += a.data[i] * a.data[i];
        nb += b.data[i] * b.data[i];
        ab += a.data[i] * b.data[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return ab / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace gvd
