// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

namespace dreamreader {

// Deterministic RNG used everywhere seeds appear. The mt19937_64 engine is
// pinned by the standard; the uniform/normal transforms are implemented here
// instead of <random> distributions, whose output is implementation-defined.
class SeededRng {
  public:
    explicit SeededRng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n must be > 0.
    uint64_t uniform_int(uint64_t n) { return engine_() % n; }

    // Standard normal via Box-Muller; two uniforms per draw, no cached spare.
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

  private:
    std::mt19937_64 engine_;
};

// FNV-1a over bytes, used for sub-seed derivation and the toy tokenizer.
inline uint64_t fnv1a(std::string_view bytes, uint64_t seed = 0xcbf29ce484222325ull) {
    uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t mix_seed(uint64_t seed, std::string_view tag) {
    uint64_t h = fnv1a(tag, seed ^ 0xcbf29ce484222325ull);
    // splitmix64 finalizer
    h += 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
}

inline uint64_t mix_seed(uint64_t seed, std::string_view tag, int64_t index) {
    char buf[16];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((index >> (8 * i)) & 0xff);
    return mix_seed(mix_seed(seed, tag), std::string_view(buf, 8));
}

// Matrix of iid N(0, stddev^2) entries, filled in row-major order.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> normal_matrix(SeededRng& rng,
                                                                    Eigen::Index rows,
                                                                    Eigen::Index cols,
                                                                    Scalar stddev = Scalar(1)) {
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = static_cast<Scalar>(rng.normal()) * stddev;
    return m;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> normal_vector(SeededRng& rng, Eigen::Index n,
                                                       Scalar stddev = Scalar(1)) {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = static_cast<Scalar>(rng.normal()) * stddev;
    return v;
}

// Fisher-Yates permutation of 0..n-1.
inline std::vector<int64_t> random_permutation(SeededRng& rng, int64_t n) {
    std::vector<int64_t> perm(n);
    for (int64_t i = 0; i < n; ++i) perm[i] = i;
    for (int64_t i = n - 1; i > 0; --i) {
        int64_t j = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(i + 1)));
        std::swap(perm[i], perm[j]);
    }
    return perm;
}

}  // namespace dreamreader
