#pragma once

#include "gvd/grounding.hpp"
#include "gvd/tensor.hpp"

namespace gvd {

// Self-contained training data: a bright square drifting over a smooth
// background, with the matching box track and a phrase.
struct SynthSample {
    Tensor video;  // (N,C,H,W)
    GroundingTrack track;
    std::string prompt;
};

std::vector<SynthSample> make_synthetic_videos(int count, int frames, int channels, int height,
                                               int width, uint64_t seed);

}  // namespace gvd
