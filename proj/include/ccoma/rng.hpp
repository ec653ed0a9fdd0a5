#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "ccoma/tensor.hpp"

namespace ccoma {

using Rng = std::mt19937_64;

// splitmix64 finalizer; decorrelates per-stream seeds derived from one master seed
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return mix_seed(master * 0x100000001b3ull + stream);
}

inline std::string engine_state(const Rng& e) {
    std::ostringstream ss;
    ss << e;
    return ss.str();
}

inline void restore_engine(Rng& e, const std::string& s) {
    std::istringstream ss(s);
    ss >> e;
    if (ss.fail()) throw std::runtime_error("restore_engine: malformed engine state");
}

inline void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    for (auto& v : t.data) v = d(rng);
}

// fan-in scaled uniform init for a parameter with leading dim = fan_in
inline void init_linear(Tensor& t, Rng& rng, int fan_in) {
    const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
    fill_uniform(t, rng, -b, b);
}

}  // namespace ccoma
