#include "flowrom/reprogram.hpp"

#include <cmath>
#include <stdexcept>

namespace flowrom::reprog {

Matrix derive_prototypes(const Matrix& probe, const Matrix& vocab_embedding) {
    if (probe.cols != vocab_embedding.rows) {
        throw std::invalid_argument("derive_prototypes: probe " + probe.shape_str() +
                                    " does not match embedding " + vocab_embedding.shape_str());
    }
    if (probe.rows >= vocab_embedding.rows) {
        throw std::invalid_argument("derive_prototypes: prototype count " +
                                    std::to_string(probe.rows) +
                                    " must be smaller than vocabulary size " +
                                    std::to_string(vocab_embedding.rows));
    }
    return num::matmul(probe, vocab_embedding);
}

void refresh_prototypes(PrototypeProbe& probe, const Matrix& vocab_embedding) {
    probe.cached_prototypes = derive_prototypes(probe.probe, vocab_embedding);
}

Matrix cross_attention_head(const Matrix& patches, const Matrix& prototypes,
                            const HeadParams& head) {
    if (patches.cols != head.wq.rows || prototypes.cols != head.wk.rows ||
        prototypes.cols != head.wv.rows) {
        throw std::invalid_argument("cross_attention_head: input dim " +
                                    std::to_string(patches.cols) + " does not match weights " +
                                    head.wq.shape_str());
    }
    const std::size_t d_k = head.wq.cols;
    Matrix q = num::matmul(patches, head.wq);       // D x d_k
    Matrix k = num::matmul(prototypes, head.wk);    // V' x d_k
    Matrix v = num::matmul(prototypes, head.wv);    // V' x d_k
    Matrix scores = num::scale(num::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d_k)));
    for (std::size_t i = 0; i < scores.rows; ++i) {
        const std::vector<double> row = num::softmax(scores.row(i));
        for (std::size_t j = 0; j < scores.cols; ++j) scores(i, j) = row[j];
    }
    return num::matmul(scores, v);  // D x d_k
}

Matrix multi_head_reprogram(const Matrix& patches, const Matrix& prototypes,
                            const CrossAttnParams& params) {
    if (params.heads.empty()) throw std::invalid_argument("multi_head_reprogram: no heads");
    const std::size_t d_k = params.heads[0].wq.cols;
    Matrix concat(patches.rows, params.heads.size() * d_k);
    for (std::size_t h = 0; h < params.heads.size(); ++h) {
        const Matrix head_out = cross_attention_head(patches, prototypes, params.heads[h]);
        for (std::size_t i = 0; i < head_out.rows; ++i)
            for (std::size_t j = 0; j < d_k; ++j) concat(i, h * d_k + j) = head_out(i, j);
    }
    if (concat.cols != params.wo.rows) {
        throw std::invalid_argument("multi_head_reprogram: concat width " +
                                    std::to_string(concat.cols) + " does not match output weights " +
                                    params.wo.shape_str());
    }
    Matrix out = num::matmul(concat, params.wo);
    if (params.bo.size() != out.cols)
        throw std::invalid_argument("multi_head_reprogram: output bias length mismatch");
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += params.bo[j];
    return out;
}

void check_head_split(std::size_t d_m, std::size_t heads) {
    if (heads < 1 || d_m % heads != 0) {
        throw std::invalid_argument("attention: " + std::to_string(heads) +
                                    " heads do not divide embedding dim " + std::to_string(d_m));
    }
}

}  // namespace flowrom::reprog
