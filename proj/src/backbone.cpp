#include "flowrom/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "flowrom/reprogram.hpp"
#include "flowrom/rng.hpp"

namespace flowrom::backbone {

namespace {

Matrix softmax_rows(Matrix m) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        const std::vector<double> row = num::softmax(m.row(i));
        for (std::size_t j = 0; j < m.cols; ++j) m(i, j) = row[j];
    }
    return m;
}

Matrix layer_norm_rows(const Matrix& m, const std::vector<double>& gamma,
                       const std::vector<double>& beta) {
    Matrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const std::vector<double> row = num::layer_norm(m.row(i), gamma, beta, kLayerNormEps);
        for (std::size_t j = 0; j < m.cols; ++j) out(i, j) = row[j];
    }
    return out;
}

Matrix slice_cols(const Matrix& m, std::size_t j0, std::size_t j1) {
    Matrix out(m.rows, j1 - j0);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = j0; j < j1; ++j) out(i, j - j0) = m(i, j);
    return out;
}

std::string name_of(std::size_t layer, const char* suffix) {
    return "backbone.l" + std::to_string(layer) + "." + suffix;
}

}  // namespace

Matrix self_attention(const Matrix& seq, const LayerParams& layer, std::size_t heads) {
    reprog::check_head_split(seq.cols, heads);
    const std::size_t d_m = seq.cols;
    const std::size_t d_k = d_m / heads;
    if (layer.wq.rows != d_m || layer.wq.cols != d_m) {
        throw std::invalid_argument("self_attention: weight shape " + layer.wq.shape_str() +
                                    " does not match input " + seq.shape_str());
    }
    const Matrix q = num::matmul(seq, layer.wq);
    const Matrix k = num::matmul(seq, layer.wk);
    const Matrix v = num::matmul(seq, layer.wv);
    Matrix concat(seq.rows, d_m);
    for (std::size_t h = 0; h < heads; ++h) {
        const Matrix qh = slice_cols(q, h * d_k, (h + 1) * d_k);
        const Matrix kh = slice_cols(k, h * d_k, (h + 1) * d_k);
        const Matrix vh = slice_cols(v, h * d_k, (h + 1) * d_k);
        const Matrix attn = softmax_rows(
            num::scale(num::matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(d_k))));
        const Matrix out = num::matmul(attn, vh);
        for (std::size_t i = 0; i < out.rows; ++i)
            for (std::size_t j = 0; j < d_k; ++j) concat(i, h * d_k + j) = out(i, j);
    }
    return num::matmul(concat, layer.wo);
}

Matrix encoder_forward(const Matrix& seq, const EncoderParams& params) {
    if (seq.rows < 1) throw std::invalid_argument("encoder_forward: empty sequence");
    if (seq.cols != params.dims.d_m) {
        throw std::invalid_argument("encoder_forward: input width " + std::to_string(seq.cols) +
                                    " does not match d_m " + std::to_string(params.dims.d_m));
    }
    Matrix x = seq;
    for (const LayerParams& layer : params.layers) {
        const Matrix normed1 = layer_norm_rows(x, layer.ln1_gamma, layer.ln1_beta);
        x = num::add(x, self_attention(normed1, layer, params.dims.heads));
        const Matrix normed2 = layer_norm_rows(x, layer.ln2_gamma, layer.ln2_beta);
        Matrix hidden = num::matmul(normed2, layer.w1);
        for (double& v : hidden.data) v = num::gelu(v);
        x = num::add(x, num::matmul(hidden, layer.w2));
    }
    return x;
}

Matrix forward_with_prefix(const Matrix& prompt_emb, const Matrix& patches,
                           const EncoderParams& params) {
    if (patches.rows == 0) throw std::invalid_argument("forward_with_prefix: no patches");
    if (prompt_emb.rows > 0 && prompt_emb.cols != patches.cols) {
        throw std::invalid_argument("forward_with_prefix: prompt width " +
                                    std::to_string(prompt_emb.cols) + " does not match patches " +
                                    std::to_string(patches.cols));
    }
    Matrix seq(prompt_emb.rows + patches.rows, patches.cols);
    for (std::size_t i = 0; i < prompt_emb.rows; ++i)
        for (std::size_t j = 0; j < prompt_emb.cols; ++j) seq(i, j) = prompt_emb(i, j);
    for (std::size_t i = 0; i < patches.rows; ++i)
        for (std::size_t j = 0; j < patches.cols; ++j) seq(prompt_emb.rows + i, j) = patches(i, j);

    const Matrix encoded = encoder_forward(seq, params);
    Matrix out(patches.rows, patches.cols);
    for (std::size_t i = 0; i < patches.rows; ++i)
        for (std::size_t j = 0; j < patches.cols; ++j)
            out(i, j) = encoded(prompt_emb.rows + i, j);
    return out;
}

std::vector<double> project_output(const Matrix& reps, const ProjectionHead& head) {
    if (reps.size() != head.w_out.rows) {
        throw std::invalid_argument("project_output: " + std::to_string(reps.size()) +
                                    " representation values do not match head " +
                                    head.w_out.shape_str());
    }
    std::vector<double> out = head.b_out;
    if (out.size() != head.w_out.cols)
        throw std::invalid_argument("project_output: bias length mismatch");
    // Row-major flatten of reps, then the affine map.
    for (std::size_t k = 0; k < reps.data.size(); ++k) {
        const double v = reps.data[k];
        if (v == 0.0) continue;
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += v * head.w_out(k, j);
    }
    return out;
}

EncoderParams seed_encoder(std::uint64_t seed, const EncoderDims& dims) {
    reprog::check_head_split(dims.d_m, dims.heads);
    EncoderParams params;
    params.dims = dims;
    for (std::size_t l = 0; l < dims.depth; ++l) {
        LayerParams layer;
        layer.wq = seeded_gaussian(seed, name_of(l, "attn.wq"), dims.d_m, dims.d_m, 0.02);
        layer.wk = seeded_gaussian(seed, name_of(l, "attn.wk"), dims.d_m, dims.d_m, 0.02);
        layer.wv = seeded_gaussian(seed, name_of(l, "attn.wv"), dims.d_m, dims.d_m, 0.02);
        layer.wo = seeded_gaussian(seed, name_of(l, "attn.wo"), dims.d_m, dims.d_m, 0.02);
        layer.w1 = seeded_gaussian(seed, name_of(l, "ffn.w1"), dims.d_m, dims.d_ff, 0.02);
        layer.w2 = seeded_gaussian(seed, name_of(l, "ffn.w2"), dims.d_ff, dims.d_m, 0.02);
        layer.ln1_gamma.assign(dims.d_m, 1.0);
        layer.ln1_beta.assign(dims.d_m, 0.0);
        layer.ln2_gamma.assign(dims.d_m, 1.0);
        layer.ln2_beta.assign(dims.d_m, 0.0);
        params.layers.push_back(std::move(layer));
    }
    return params;
}

Matrix seed_vocab_embedding(std::uint64_t seed, std::size_t vocab_size, std::size_t d_m) {
    return seeded_gaussian(seed, "vocab.embedding", vocab_size, d_m, 0.02);
}

void store_encoder(weights::Container& c, const EncoderParams& params) {
    c.set_scalar("backbone.depth", static_cast<double>(params.dims.depth));
    c.set_scalar("backbone.heads", static_cast<double>(params.dims.heads));
    c.set_scalar("backbone.d_m", static_cast<double>(params.dims.d_m));
    c.set_scalar("backbone.d_ff", static_cast<double>(params.dims.d_ff));
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const LayerParams& layer = params.layers[l];
        c.set_matrix(name_of(l, "attn.wq"), layer.wq);
        c.set_matrix(name_of(l, "attn.wk"), layer.wk);
        c.set_matrix(name_of(l, "attn.wv"), layer.wv);
        c.set_matrix(name_of(l, "attn.wo"), layer.wo);
        c.set_matrix(name_of(l, "ffn.w1"), layer.w1);
        c.set_matrix(name_of(l, "ffn.w2"), layer.w2);
        c.set_vector(name_of(l, "ln1.gamma"), layer.ln1_gamma);
        c.set_vector(name_of(l, "ln1.beta"), layer.ln1_beta);
        c.set_vector(name_of(l, "ln2.gamma"), layer.ln2_gamma);
        c.set_vector(name_of(l, "ln2.beta"), layer.ln2_beta);
    }
}

EncoderParams load_encoder(const weights::Container& c) {
    EncoderParams params;
    params.dims.depth = static_cast<std::size_t>(c.get_scalar("backbone.depth"));
    params.dims.heads = static_cast<std::size_t>(c.get_scalar("backbone.heads"));
    params.dims.d_m = static_cast<std::size_t>(c.get_scalar("backbone.d_m"));
    params.dims.d_ff = static_cast<std::size_t>(c.get_scalar("backbone.d_ff"));
    reprog::check_head_split(params.dims.d_m, params.dims.heads);
    for (std::size_t l = 0; l < params.dims.depth; ++l) {
        LayerParams layer;
        layer.wq = c.get_matrix(name_of(l, "attn.wq"));
        layer.wk = c.get_matrix(name_of(l, "attn.wk"));
        layer.wv = c.get_matrix(name_of(l, "attn.wv"));
        layer.wo = c.get_matrix(name_of(l, "attn.wo"));
        layer.w1 = c.get_matrix(name_of(l, "ffn.w1"));
        layer.w2 = c.get_matrix(name_of(l, "ffn.w2"));
        layer.ln1_gamma = c.get_vector(name_of(l, "ln1.gamma"));
        layer.ln1_beta = c.get_vector(name_of(l, "ln1.beta"));
        layer.ln2_gamma = c.get_vector(name_of(l, "ln2.gamma"));
        layer.ln2_beta = c.get_vector(name_of(l, "ln2.beta"));
        const std::size_t d_m = params.dims.d_m;
        if (layer.wq.rows != d_m || layer.w1.rows != d_m || layer.w1.cols != params.dims.d_ff ||
            layer.ln1_gamma.size() != d_m) {
            throw std::runtime_error("load_encoder: tensor \"" + name_of(l, "attn.wq") +
                                     "\" family has inconsistent shapes for d_m " +
                                     std::to_string(d_m));
        }
        params.layers.push_back(std::move(layer));
    }
    return params;
}

}  // namespace flowrom::backbone
