#include "gvd/rng.hpp"

#include <cmath>

namespace gvd {

static constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ull;

uint64_t RngStream::mix64(uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

uint64_t RngStream::hash_string(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

RngStream::RngStream(uint64_t seed, uint64_t stream_id) : key_(mix64(seed ^ mix64(stream_id))) {}

RngStream RngStream::substream(uint64_t index) const {
    RngStream s;
    s.key_ = mix64(key_ ^ mix64(index + 0x517cc1b727220a95ull));
    return s;
}

RngStream RngStream::for_name(uint64_t seed, const std::string& name) {
    return RngStream(seed, hash_string(name));
}

uint64_t RngStream::next_u64() { return mix64(key_ + kGolden * ++counter_); }

double RngStream::uniform01() {
    // 53 random bits, offset half a ULP so 0 and 1 are unreachable
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double RngStream::logistic() {
    const double u = uniform01();
    return std::log(u) - std::log1p(-u);
}

int64_t RngStream::uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo + 1);
    return lo + static_cast<int64_t>(next_u64() % span);
}

}  // namespace gvd
