#include "flowrom/rng.hpp"

#include <cmath>

namespace flowrom {

double Rng::normal(double mean, double stddev) {
    if (has_spare_) {
        has_spare_ = false;
        return mean + stddev * spare_;
    }
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return mean + stddev * radius * std::cos(angle);
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void shuffle_indices(std::vector<std::size_t>& indices, Rng& rng) {
    if (indices.size() < 2) return;
    for (std::size_t i = indices.size() - 1; i > 0; --i) {
        const std::size_t j = rng.uniform_index(i + 1);
        std::swap(indices[i], indices[j]);
    }
}

Matrix seeded_gaussian(std::uint64_t seed, std::string_view name, std::size_t rows,
                       std::size_t cols, double stddev) {
    Rng rng(splitmix64(seed ^ fnv1a64(name)));
    Matrix m(rows, cols);
    for (double& v : m.data) v = rng.normal(0.0, stddev);
    return m;
}

}  // namespace flowrom
