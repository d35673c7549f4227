#include "gvd/config.hpp"

#include <cstdlib>

#include "gvd/io.hpp"

namespace gvd {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

double num(const std::string& key, const std::string& value) {
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (end == value.c_str() || *end != '\0')
        fail("config-value", "key '" + key + "' has a non-numeric value '" + value + "'");
    return v;
}

bool boolean(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    fail("config-value", "key '" + key + "' must be true/false");
}

}  // namespace

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        std::string line = trim(text.substr(pos, nl - pos));
        pos = nl + 1;
        if (line.empty() || line[0] == '#') continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) fail("config-value", "expected 'key = value': " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));

        ModelConfig& m = cfg.model;
        if (key == "channels") m.channels = static_cast<int>(num(key, value));
        else if (key == "latent_h") m.latent_h = static_cast<int>(num(key, value));
        else if (key == "latent_w") m.latent_w = static_cast<int>(num(key, value));
        else if (key == "base_width") m.base_width = static_cast<int>(num(key, value));
        else if (key == "dg") m.dg = static_cast<int>(num(key, value));
        else if (key == "dtext") m.dtext = static_cast<int>(num(key, value));
        else if (key == "num_freqs") m.num_freqs = static_cast<int>(num(key, value));
        else if (key == "g_hidden") m.g_hidden = static_cast<int>(num(key, value));
        else if (key == "time_dim") m.time_dim = static_cast<int>(num(key, value));
        else if (key == "beta_stga") m.beta_stga = num(key, value);
        else if (key == "bias_lambda") m.bias_lambda = num(key, value);
        else if (key == "keypoint_sigma") m.keypoint_sigma = num(key, value);
        else if (key == "densify_sigma") m.densify_sigma = num(key, value);
        else if (key == "densify_radius") m.densify_radius = static_cast<int>(num(key, value));
        else if (key == "timesteps") m.timesteps = static_cast<int>(num(key, value));
        else if (key == "beta_start") m.beta_start = num(key, value);
        else if (key == "beta_end") m.beta_end = num(key, value);
        else if (key == "guidance_scale") m.guidance_scale = num(key, value);
        else if (key == "sample_steps") m.sample_steps = static_cast<int>(num(key, value));
        else if (key == "cfg_null_grounding") m.cfg_null_grounding = boolean(key, value);
        else if (key == "metrics_all_pairs") m.metrics_all_pairs = boolean(key, value);
        else if (key == "gate_usage_penalty") m.gate_usage_penalty = num(key, value);
        else if (key == "train_steps") cfg.train_steps = static_cast<int>(num(key, value));
        else if (key == "learning_rate") cfg.learning_rate = num(key, value);
        else if (key == "batch_size") cfg.batch_size = static_cast<int>(num(key, value));
        else if (key == "train_frames") cfg.train_frames = static_cast<int>(num(key, value));
        else if (key == "init_seed") cfg.init_seed = static_cast<uint64_t>(num(key, value));
        else if (key == "bias_gain") cfg.bias_gain = num(key, value);
        else fail("config-key", "unknown key '" + key + "'");
    }
    return cfg;
}

RunConfig load_config_file(const std::string& path) { return parse_config(read_text_file(path)); }

}  // namespace gvd
