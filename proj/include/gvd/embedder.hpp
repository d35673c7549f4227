#pragma once

#include <memory>
#include <string>

#include "gvd/tensor.hpp"

namespace gvd {

// Pluggable phrase/prompt encoder. The production system would wire a real
// text model here; the deterministic stub hashes the string into a seeded
// unit-norm vector so runs reproduce bit-exactly.
class TextEmbedder {
public:
    virtual ~TextEmbedder() = default;
    virtual int width() const = 0;
    virtual Tensor embed(const std::string& phrase) const = 0;  // (width)
};

class HashTextEmbedder : public TextEmbedder {
public:
    HashTextEmbedder(int width, uint64_t seed = 0x7457);
    int width() const override { return width_; }
    Tensor embed(const std::string& phrase) const override;

private:
    int width_;
    uint64_t seed_;
};

// Frame/text encoder used by the consistency metrics. embed_frame takes one
// (C x H x W) frame; outputs are unit-normalized.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual int width() const = 0;
    virtual Tensor embed_frame(const Tensor& frame) const = 0;
    virtual Tensor embed_text(const std::string& text) const = 0;
};

// Deterministic stub: per-channel 4x4 area pooling of the frame, unit norm;
// text goes through the hash embedder at matching width.
class StubEmbedder : public Embedder {
public:
    explicit StubEmbedder(int channels, uint64_t seed = 0x7457);
    int width() const override { return channels_ * 16; }
    Tensor embed_frame(const Tensor& frame) const override;
    Tensor embed_text(const std::string& text) const override;

private:
    int channels_;
    HashTextEmbedder text_;
};

Tensor unit_normalize(const Tensor& v);
double cosine_similarity(const Tensor& a, const Tensor& b);

}  // namespace gvd
