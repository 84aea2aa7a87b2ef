#include "flowrom/series.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace flowrom::series {

std::pair<Window, NormStats> instance_norm(const Window& w, double eps) {
    if (w.values.empty()) throw std::invalid_argument("instance_norm: empty window");
    if (eps <= 0.0) throw std::invalid_argument("instance_norm: eps must be positive");

    const std::size_t n = w.values.size();
    double mean = 0.0;
    for (double v : w.values) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : w.values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);

    NormStats stats;
    stats.mean = mean;
    stats.std_dev = std::sqrt(var);
    stats.eps = eps;

    Window out = w;
    const double scale = stats.scale();
    for (double& v : out.values) v = (v - mean) / scale;
    return {std::move(out), stats};
}

std::vector<double> instance_denorm(const std::vector<double>& values, const NormStats& stats) {
    std::vector<double> out(values.size());
    const double scale = stats.scale();
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] * scale + stats.mean;
    return out;
}

std::size_t patch_count(std::size_t window_len, std::size_t patch_len, std::size_t stride) {
    if (patch_len < 1 || patch_len > window_len) {
        std::ostringstream msg;
        msg << "patch_count: patch length " << patch_len << " out of range [1, " << window_len
            << "]";
        throw std::invalid_argument(msg.str());
    }
    if (stride < 1) throw std::invalid_argument("patch_count: stride must be at least 1");
    return (window_len - patch_len) / stride + 1;
}

PatchBatch make_patches(const Window& w, std::size_t patch_len, std::size_t stride) {
    const std::size_t d = patch_count(w.length(), patch_len, stride);
    PatchBatch batch;
    batch.patch_len = patch_len;
    batch.stride = stride;
    batch.patches = Matrix(d, patch_len);
    for (std::size_t p = 0; p < d; ++p) {
        for (std::size_t i = 0; i < patch_len; ++i) {
            batch.patches(p, i) = w.values[p * stride + i];
        }
    }
    return batch;
}

Matrix embed_patches(const PatchBatch& batch, const Matrix& w_embed,
                     const std::vector<double>& bias) {
    if (w_embed.rows != batch.patch_len) {
        throw std::invalid_argument("embed_patches: weight rows " + std::to_string(w_embed.rows) +
                                    " do not match patch length " +
                                    std::to_string(batch.patch_len));
    }
    if (bias.size() != w_embed.cols) {
        throw std::invalid_argument("embed_patches: bias length " + std::to_string(bias.size()) +
                                    " does not match embedding dim " +
                                    std::to_string(w_embed.cols));
    }
    Matrix out = num::matmul(batch.patches, w_embed);
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += bias[j];
    return out;
}

}  // namespace flowrom::series
