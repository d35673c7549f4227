#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "gvd/rng.hpp"
#include "gvd/tensor.hpp"

namespace gvd {

// Training stages: base denoiser first, then the grounding attention, the
// temporal layers, and finally the gate network. Each parameter belongs to
// exactly one stage.
enum class Stage { base, stga, temporal, dgn };

const char* stage_name(Stage s);
Stage stage_from_name(const std::string& name);

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;  // same shape as value
    bool trainable = true;
    Stage stage = Stage::base;
};

enum class Init { zeros, normal_scaled };

class ParamStore {
public:
    // Unique names enforced; init draws come from a per-name substream of the
    // init stream so registration order never changes the values.
    int add(const std::string& name, std::vector<int64_t> shape, Stage stage,
            Init init = Init::normal_scaled);

    Parameter& at(int id) { return params_[static_cast<size_t>(id)]; }
    const Parameter& at(int id) const { return params_[static_cast<size_t>(id)]; }
    const Tensor& value(int id) const { return params_[static_cast<size_t>(id)].value; }
    Tensor& grad(int id) { return params_[static_cast<size_t>(id)].grad; }

    int find(const std::string& name) const;  // -1 if absent
    size_t size() const { return params_.size(); }
    void zero_grads();

    void set_init_seed(uint64_t seed) { init_seed_ = seed; }

    // Trainable flags for one stage; covers every parameter exactly once.
    std::vector<uint8_t> stage_mask(Stage stage) const;
    void sgd_step(const std::vector<uint8_t>& mask, double lr);

    std::vector<int> ids_by_name() const;  // lexicographic

    // Checkpoint container: "GVCK", u32 version, u32 count, then per parameter
    // u16 name length + name + u8 rank + u32 dims + f32 LE data, parameters
    // ordered lexicographically by name.
    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

private:
    std::vector<Parameter> params_;
    std::unordered_map<std::string, int> index_;
    uint64_t init_seed_ = 1;
};

}  // namespace gvd
