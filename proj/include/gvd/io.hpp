#pragma once

#include <string>
#include <vector>

#include "gvd/tensor.hpp"

namespace gvd {

// GVDM grid container: magic "GVDM", three u32 LE (width, height, channels),
// then width*height*channels f32 LE, row-major, channel-minor.
struct Grid {
    int width = 0, height = 0, channels = 0;
    std::vector<double> values;  // index = (y*width + x)*channels + c
};

std::vector<unsigned char> encode_gvdm(const Grid& g);
Grid decode_gvdm(const std::vector<unsigned char>& bytes);
void write_gvdm(const std::string& path, const Grid& g);
Grid read_gvdm(const std::string& path);

// Latent videos (N x C x H x W) reuse the GVDM container with channels = C*N
// plus a sidecar text header "<path>.meta" carrying (frames, channels,
// height, width).
void write_latent_video(const std::string& path, const Tensor& video);
Tensor read_latent_video(const std::string& path);

std::vector<unsigned char> read_file(const std::string& path);
void write_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace gvd
