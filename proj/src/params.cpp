#include "gvd/params.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>

namespace gvd {

const char* stage_name(Stage s) {
    switch (s) {
        case Stage::base: return "base";
        case Stage::stga: return "stga";
        case Stage::temporal: return "temporal";
        case Stage::dgn: return "dgn";
    }
    return "?";
}

Stage stage_from_name(const std::string& name) {
    if (name == "base") return Stage::base;
    if (name == "stga") return Stage::stga;
    if (name == "temporal") return Stage::temporal;
    if (name == "dgn") return Stage::dgn;
    fail("stage-name", "unknown stage '" + name + "'");
}

int ParamStore::add(const std::string& name, std::vector<int64_t> shape, Stage stage, Init init) {
    if (index_.count(name)) fail("param-name", "duplicate parameter '" + name + "'");
    Parameter p;
    p.name = name;
    p.value = Tensor(shape);
    p.grad = Tensor(shape);
    p.stage = stage;
    if (init == Init::normal_scaled) {
        // fan-based scale; attention/linear weights are (fan_in x fan_out)
        const int64_t fan_in = shape.empty() ? 1 : shape[0];
        const double std = 1.0 / std::sqrt(static_cast<double>(std::max<int64_t>(fan_in, 1)));
        RngStream rng = RngStream::for_name(init_seed_, "init").substream(RngStream::hash_string(name));
        for (double& v : p.value.data) v = std * rng.normal();
    }
    const int id = static_cast<int>(params_.size());
    params_.push_back(std::move(p));
    index_.emplace(name, id);
    return id;
}

int ParamStore::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
}

void ParamStore::zero_grads() {
    for (Parameter& p : params_) p.grad.zero();
}

std::vector<uint8_t> ParamStore::stage_mask(Stage stage) const {
    std::vector<uint8_t> mask(params_.size());
    for (size_t i = 0; i < params_.size(); ++i)
        mask[i] = params_[i].stage == stage && params_[i].trainable ? 1 : 0;
    return mask;
}

void ParamStore::sgd_step(const std::vector<uint8_t>& mask, double lr) {
    for (size_t i = 0; i < params_.size(); ++i) {
        if (!mask[i]) continue;
        Parameter& p = params_[i];
        for (size_t j = 0; j < p.value.data.size(); ++j) p.value.data[j] -= lr * p.grad.data[j];
    }
}

std::vector<int> ParamStore::ids_by_name() const {
    std::vector<int> ids(params_.size());
    for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    std::sort(ids.begin(), ids.end(),
              [this](int a, int b) { return params_[static_cast<size_t>(a)].name < params_[static_cast<size_t>(b)].name; });
    return ids;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_bytes(std::FILE* f, const void* p, size_t n) {
    if (std::fwrite(p, 1, n, f) != n) fail("gvck-io", "short write");
}
void read_bytes(std::FILE* f, void* p, size_t n) {
    if (std::fread(p, 1, n, f) != n) fail("gvck-truncated", "unexpected end of checkpoint");
}
void write_u32(std::FILE* f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    write_bytes(f, b, 4);
}
uint32_t read_u32(std::FILE* f) {
    unsigned char b[4];
    read_bytes(f, b, 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}
void write_u16(std::FILE* f, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    write_bytes(f, b, 2);
}
uint16_t read_u16(std::FILE* f) {
    unsigned char b[2];
    read_bytes(f, b, 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}
void write_f32(std::FILE* f, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    write_u32(f, u);
}
float read_f32(std::FILE* f) {
    const uint32_t u = read_u32(f);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

constexpr uint32_t kCheckpointVersion = 1;

}  // namespace

void ParamStore::save_checkpoint(const std::string& path) const {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) fail("gvck-io", "cannot open '" + path + "' for writing");
    write_bytes(f.get(), "GVCK", 4);
    write_u32(f.get(), kCheckpointVersion);
    write_u32(f.get(), static_cast<uint32_t>(params_.size()));
    for (int id : ids_by_name()) {
        const Parameter& p = params_[static_cast<size_t>(id)];
        if (p.name.size() > 0xffff) fail("gvck-io", "parameter name too long");
        write_u16(f.get(), static_cast<uint16_t>(p.name.size()));
        write_bytes(f.get(), p.name.data(), p.name.size());
        const unsigned char rank = static_cast<unsigned char>(p.value.rank());
        write_bytes(f.get(), &rank, 1);
        for (int64_t d : p.value.shape) write_u32(f.get(), static_cast<uint32_t>(d));
        for (double v : p.value.data) write_f32(f.get(), static_cast<float>(v));
    }
}

void ParamStore::load_checkpoint(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) fail("gvck-io", "cannot open '" + path + "'");
    char magic[4];
    read_bytes(f.get(), magic, 4);
    if (std::memcmp(magic, "GVCK", 4) != 0) fail("gvck-magic", "bad checkpoint magic");
    const uint32_t version = read_u32(f.get());
    if (version != kCheckpointVersion) fail("gvck-version", "unsupported checkpoint version");
    const uint32_t count = read_u32(f.get());
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = read_u16(f.get());
        std::string name(name_len, '\0');
        read_bytes(f.get(), name.data(), name_len);
        unsigned char rank;
        read_bytes(f.get(), &rank, 1);
        std::vector<int64_t> shape(rank);
        for (int r = 0; r < rank; ++r) shape[static_cast<size_t>(r)] = read_u32(f.get());
        const int id = find(name);
        if (id < 0) fail("gvck-param", "checkpoint parameter '" + name + "' not in model");
        Parameter& p = params_[static_cast<size_t>(id)];
        if (p.value.shape != shape) fail("gvck-shape", "shape mismatch for '" + name + "'");
        for (double& v : p.value.data) v = static_cast<double>(read_f32(f.get()));
    }
}

}  // namespace gvd
