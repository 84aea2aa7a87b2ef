#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "flowrom/matrix.hpp"

namespace flowrom::series {

constexpr double kNormEps = 1e-5;

// A lookback slice of one reduced-coordinate channel.
struct Window {
    std::size_t channel = 0;
    std::vector<double> values;
    std::size_t origin_step = 0;

    std::size_t length() const { return values.size(); }
};

// Per-window normalization statistics; kept so predictions can be mapped
// back to the original scale exactly.
struct NormStats {
    double mean = 0.0;
    double std_dev = 0.0;
    double eps = kNormEps;

    double scale() const { return std_dev > eps ? std_dev : eps; }
};

std::pair<Window, NormStats> instance_norm(const Window& w, double eps = kNormEps);
std::vector<double> instance_denorm(const std::vector<double>& values, const NormStats& stats);

std::size_t patch_count(std::size_t window_len, std::size_t patch_len, std::size_t stride);

// Overlapping slices of a window, one patch per row.
struct PatchBatch {
    Matrix patches;  // D x L
    std::size_t patch_len = 0;
    std::size_t stride = 0;

    std::size_t count() const { return patches.rows; }
};

PatchBatch make_patches(const Window& w, std::size_t patch_len, std::size_t stride);

Matrix embed_patches(const PatchBatch& batch, const Matrix& w_embed,
                     const std::vector<double>& bias);

}  // namespace flowrom::series
