#include "gvd/io.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>

namespace gvd {

namespace {

void put_u32(std::vector<unsigned char>& out, uint32_t v) {
    out.push_back(static_cast<unsigned char>(v));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 24));
}

uint32_t get_u32(const std::vector<unsigned char>& b, size_t at) {
    return static_cast<uint32_t>(b[at]) | (static_cast<uint32_t>(b[at + 1]) << 8) |
           (static_cast<uint32_t>(b[at + 2]) << 16) | (static_cast<uint32_t>(b[at + 3]) << 24);
}

}  // namespace

std::vector<unsigned char> encode_gvdm(const Grid& g) {
    const size_t count = static_cast<size_t>(g.width) * g.height * g.channels;
    if (g.values.size() != count) fail("gvdm-shape", "value count does not match dims");
    std::vector<unsigned char> out;
    out.reserve(16 + 4 * count);
    out.push_back('G');
    out.push_back('V');
    out.push_back('D');
    out.push_back('M');
    put_u32(out, static_cast<uint32_t>(g.width));
    put_u32(out, static_cast<uint32_t>(g.height));
    put_u32(out, static_cast<uint32_t>(g.channels));
    for (double v : g.values) {
        const float fv = static_cast<float>(v);
        uint32_t u;
        std::memcpy(&u, &fv, 4);
        put_u32(out, u);
    }
    return out;
}

Grid decode_gvdm(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "GVDM", 4) != 0)
        fail("gvdm-magic", "not a GVDM grid");
    Grid g;
    g.width = static_cast<int>(get_u32(bytes, 4));
    g.height = static_cast<int>(get_u32(bytes, 8));
    g.channels = static_cast<int>(get_u32(bytes, 12));
    if (g.width < 1 || g.height < 1 || g.channels < 1) fail("gvdm-shape", "bad GVDM dims");
    const size_t count = static_cast<size_t>(g.width) * g.height * g.channels;
    if (bytes.size() != 16 + 4 * count) fail("gvdm-truncated", "GVDM payload size mismatch");
    g.values.resize(count);
    for (size_t i = 0; i < count; ++i) {
        const uint32_t u = get_u32(bytes, 16 + 4 * i);
        float fv;
        std::memcpy(&fv, &u, 4);
        g.values[i] = static_cast<double>(fv);
    }
    return g;
}

void write_gvdm(const std::string& path, const Grid& g) {
    const std::vector<unsigned char> bytes = encode_gvdm(g);
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) fail("gvdm-io", "cannot open '" + path + "' for writing");
    const size_t written = std::fwrite(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    if (written != bytes.size()) fail("gvdm-io", "short write to '" + path + "'");
}

Grid read_gvdm(const std::string& path) { return decode_gvdm(read_file(path)); }

void write_latent_video(const std::string& path, const Tensor& video) {
    if (video.rank() != 4) fail("gvdm-shape", "latent video must be (N,C,H,W)");
    const int64_t n = video.dim(0), c = video.dim(1), h = video.dim(2), w = video.dim(3);
    Grid g;
    g.width = static_cast<int>(w);
    g.height = static_cast<int>(h);
    g.channels = static_cast<int>(c * n);
    g.values.resize(video.data.size());
    // tensor (N,C,H,W) -> grid channel-minor with channel index f*C + c
    for (int64_t f = 0; f < n; ++f)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x)
                    g.values[static_cast<size_t>(((y * w + x) * (c * n)) + f * c + ch)] =
                        video.data[static_cast<size_t>(((f * c + ch) * h + y) * w + x)];
    write_gvdm(path, g);
    write_file(path + ".meta", "frames = " + std::to_string(n) + "\nchannels = " + std::to_string(c) +
                                   "\nheight = " + std::to_string(h) + "\nwidth = " + std::to_string(w) + "\n");
}

Tensor read_latent_video(const std::string& path) {
    const Grid g = read_gvdm(path);
    const std::string meta = read_text_file(path + ".meta");
    int64_t n = 0, c = 0, h = 0, w = 0;
    for (const char* key : {"frames", "channels", "height", "width"}) {
        const size_t at = meta.find(key);
        if (at == std::string::npos) fail("gvdm-meta", std::string("missing '") + key + "' in sidecar");
        const size_t eq = meta.find('=', at);
        const int64_t v = std::strtoll(meta.c_str() + eq + 1, nullptr, 10);
        if (std::strcmp(key, "frames") == 0) n = v;
        else if (std::strcmp(key, "channels") == 0) c = v;
        else if (std::strcmp(key, "height") == 0) h = v;
        else w = v;
    }
    if (g.width != w || g.height != h || g.channels != n * c)
        fail("gvdm-meta", "sidecar dims disagree with grid");
    Tensor video({n, c, h, w});
    for (int64_t f = 0; f < n; ++f)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x)
                    video.data[static_cast<size_t>(((f * c + ch) * h + y) * w + x)] =
                        g.values[static_cast<size_t>(((y * w + x) * (c * n)) + f * c + ch)];
    return video;
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) fail("file-missing", "cannot open '" + path + "'");
    std::fseek(f, 0, SEEK_END);
    const long size = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<unsigned char> bytes(static_cast<size_t>(size));
    const size_t got = std::fread(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    if (got != bytes.size()) fail("file-missing", "short read from '" + path + "'");
    return bytes;
}

void write_file(const std::string& path, const std::string& text) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) fail("file-missing", "cannot open '" + path + "' for writing");
    const size_t written = std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
    if (written != text.size()) fail("file-missing", "short write to '" + path + "'");
}

std::string read_text_file(const std::string& path) {
    const std::vector<unsigned char> bytes = read_file(path);
    return std::string(bytes.begin(), bytes.end());
}

}  // namespace gvd
