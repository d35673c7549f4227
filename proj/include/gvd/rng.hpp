#pragma once

#include <cstdint>
#include <string>

namespace gvd {

// Counter-based generator: draw i of stream s under seed k is
//   mix64(key + i * GOLDEN),  key = mix64(k ^ mix64(s))
// where mix64 is the SplitMix64 finalizer. Identical (seed, stream, counter)
// reproduce the same sequence on every platform; streams never share state,
// so concurrent consumers cannot reorder each other's draws.
class RngStream {
public:
    static constexpr uint64_t kNoise = 0x6e6f697365;        // "noise"
    static constexpr uint64_t kGateEpsilon = 0x674570;      // gate-epsilon
    static constexpr uint64_t kGateUniform = 0x67556e;      // gate-uniform
    static constexpr uint64_t kInit = 0x696e6974;           // "init"

    RngStream() = default;
    RngStream(uint64_t seed, uint64_t stream_id);

    // Independent stream derived from this one (per-layer substreams etc.).
    RngStream substream(uint64_t index) const;
    static RngStream for_name(uint64_t seed, const std::string& name);

    uint64_t next_u64();
    double uniform01();                  // strictly inside (0, 1)
    double normal();                     // Box-Muller, two uniforms per draw
    double logistic();                   // inverse CDF: ln u - ln(1-u)
    int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive bounds

    uint64_t counter() const { return counter_; }

    static uint64_t mix64(uint64_t x);
    static uint64_t hash_string(const std::string& s);  // FNV-1a

private:
    uint64_t key_ = 0;
    uint64_t counter_ = 0;
};

}  // namespace gvd
