#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "flowrom/matrix.hpp"
#include "flowrom/weights.hpp"

namespace flowrom::backbone {

constexpr double kLayerNormEps = 1e-5;

struct EncoderDims {
    std::size_t depth = 2;
    std::size_t heads = 4;
    std::size_t d_m = 32;
    std::size_t d_ff = 128;
};

// One pre-norm encoder layer. No biases anywhere; the layer norms carry the
// only affine parameters.
struct LayerParams {
    Matrix wq, wk, wv, wo;  // d_m x d_m
    Matrix w1;              // d_m x d_ff
    Matrix w2;              // d_ff x d_m
    std::vector<double> ln1_gamma, ln1_beta;
    std::vector<double> ln2_gamma, ln2_beta;
};

struct EncoderParams {
    EncoderDims dims;
    std::vector<LayerParams> layers;
};

Matrix self_attention(const Matrix& seq, const LayerParams& layer, std::size_t heads);
Matrix encoder_forward(const Matrix& seq, const EncoderParams& params);

// Runs the encoder on [prompt ; patches] and returns only the patch rows.
Matrix forward_with_prefix(const Matrix& prompt_emb, const Matrix& patches,
                           const EncoderParams& params);

struct ProjectionHead {
    Matrix w_out;              // (D * d_m) x H
    std::vector<double> b_out; // H
};

std::vector<double> project_output(const Matrix& reps, const ProjectionHead& head);

EncoderParams seed_encoder(std::uint64_t seed, const EncoderDims& dims);
Matrix seed_vocab_embedding(std::uint64_t seed, std::size_t vocab_size, std::size_t d_m);

void store_encoder(weights::Container& c, const EncoderParams& params);
EncoderParams load_encoder(const weights::Container& c);

}  // namespace flowrom::backbone
