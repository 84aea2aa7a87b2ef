#pragma once

#include <cstddef>
#include <vector>

#include "flowrom/matrix.hpp"

namespace flowrom::reprog {

// Trainable linear probe over the frozen vocabulary embedding. The product
// probe * E is the prototype matrix and is cached until the probe changes.
struct PrototypeProbe {
    Matrix probe;               // V' x V
    Matrix cached_prototypes;   // V' x d_m, valid after derive_prototypes
};

Matrix derive_prototypes(const Matrix& probe, const Matrix& vocab_embedding);
void refresh_prototypes(PrototypeProbe& probe, const Matrix& vocab_embedding);

struct HeadParams {
    Matrix wq;  // d_m x d_k
    Matrix wk;
    Matrix wv;
};

struct CrossAttnParams {
    std::vector<HeadParams> heads;
    Matrix wo;                 // (h * d_k) x d_m
    std::vector<double> bo;    // d_m, the only bias in the block

    std::size_t head_count() const { return heads.size(); }
};

// softmax(Q K^T / sqrt(d_k)) V with patch embeddings as queries and the text
// prototypes as keys and values.
Matrix cross_attention_head(const Matrix& patches, const Matrix& prototypes,
                            const HeadParams& head);

Matrix multi_head_reprogram(const Matrix& patches, const Matrix& prototypes,
                            const CrossAttnParams& params);

void check_head_split(std::size_t d_m, std::size_t heads);

}  // namespace flowrom::reprog
