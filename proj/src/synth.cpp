#include "gvd/synth.hpp"

#include <algorithm>
#include <cmath>

#include "gvd/rng.hpp"

namespace gvd {

std::vector<SynthSample> make_synthetic_videos(int count, int frames, int channels, int height,
                                               int width, uint64_t seed) {
    static const char* kPhrases[] = {"a red block", "a blue block", "a green block",
                                     "a yellow block"};
    std::vector<SynthSample> out;
    out.reserve(static_cast<size_t>(count));
    for (int s = 0; s < count; ++s) {
        RngStream rng = RngStream(seed, 0x53594e).substream(static_cast<uint64_t>(s));
        SynthSample sample;
        sample.prompt = kPhrases[s % 4];
        sample.video = Tensor({frames, channels, height, width});
        sample.track.num_frames = frames;

        // linear trajectory of a square covering ~1/4 of the frame
        const double size = 0.25 + 0.1 * rng.uniform01();
        const double x0 = 0.1 + 0.3 * rng.uniform01();
        const double y0 = 0.1 + 0.3 * rng.uniform01();
        const double dx = (0.5 - x0) * 2.0 / std::max(frames - 1, 1);
        const double dy = (0.5 - y0) * 2.0 / std::max(frames - 1, 1);
        const double tone = -0.5 + rng.uniform01();

        TrackObject obj;
        obj.phrase = sample.prompt;
        obj.frames.resize(static_cast<size_t>(frames));
        for (int f = 0; f < frames; ++f) {
            const double cx = std::clamp(x0 + dx * f, size / 2, 1.0 - size / 2);
            const double cy = std::clamp(y0 + dy * f, size / 2, 1.0 - size / 2);
            ConditionSlot slot;
            slot.kind = ConditionSlot::Kind::box;
            slot.box = {cx - size / 2, cy - size / 2, cx + size / 2, cy + size / 2};
            obj.frames[static_cast<size_t>(f)] = slot;
            for (int c = 0; c < channels; ++c) {
                double* plane = sample.video.ptr() +
                                (static_cast<int64_t>(f) * channels + c) * height * width;
                for (int y = 0; y < height; ++y)
                    for (int x = 0; x < width; ++x) {
                        const double u = (x + 0.5) / width, v = (y + 0.5) / height;
                        double val = 0.3 * std::sin(2.0 * M_PI * (u + 0.25 * c)) * std::cos(2.0 * M_PI * v);
                        const bool inside = u >= slot.box.x_min && u < slot.box.x_max &&
                                            v >= slot.box.y_min && v < slot.box.y_max;
                        if (inside) val += 0.8 + tone * (c % 2 ? 1.0 : -1.0);
                        plane[y * width + x] = val;
                    }
            }
        }
        sample.track.objects.push_back(std::move(obj));
        out.push_back(std::move(sample));
    }
    return out;
}

}  // namespace gvd
