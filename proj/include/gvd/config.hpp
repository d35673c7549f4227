#pragma once

#include <string>

#include "gvd/diffusion.hpp"

namespace gvd {

// Line-based "key = value" run configuration. Unknown keys are a hard error
// ("config-key"); bad values raise "config-value".
struct RunConfig {
    ModelConfig model;
    int train_steps = 200;
    double learning_rate = 0.02;
    int batch_size = 4;
    int train_frames = 8;
    uint64_t init_seed = 1;
    double bias_gain = -1.0;  // >= 0 overrides the stored injection gain
};

RunConfig parse_config(const std::string& text);
RunConfig load_config_file(const std::string& path);

}  // namespace gvd
