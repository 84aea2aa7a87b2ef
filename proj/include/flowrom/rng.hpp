#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "flowrom/matrix.hpp"

namespace flowrom {

// All randomness in the library goes through this wrapper. Draws are built
// from raw mt19937_64 output so results are identical across standard library
// implementations (distributions from <random> are not portable).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Box-Muller; the pair's second sample is cached.
    double normal(double mean = 0.0, double stddev = 1.0);

    std::size_t uniform_index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);

// Fisher-Yates with pinned index draws.
void shuffle_indices(std::vector<std::size_t>& indices, Rng& rng);

// Gaussian tensor init, seeded independently per tensor name so layouts can
// change without reshuffling every other tensor.
Matrix seeded_gaussian(std::uint64_t seed, std::string_view name, std::size_t rows,
                       std::size_t cols, double stddev);

}  // namespace flowrom
