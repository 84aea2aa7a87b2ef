#include "flowrom/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "flowrom/reprogram.hpp"
#include "flowrom/rng.hpp"

namespace flowrom::model {

std::size_t ForecasterDims::patches() const {
    return series::patch_count(lookback, patch_len, stride);
}

void ForecasterDims::validate() const {
    if (horizon < 1) throw std::invalid_argument("ForecasterDims: horizon must be >= 1");
    if (d_m != encoder.d_m) {
        throw std::invalid_argument("ForecasterDims: reprogramming dim " + std::to_string(d_m) +
                                    " must equal encoder d_m " + std::to_string(encoder.d_m));
    }
    reprog::check_head_split(d_m, reprog_heads);
    reprog::check_head_split(encoder.d_m, encoder.heads);
    if (prototypes < 1) throw std::invalid_argument("ForecasterDims: need at least one prototype");
    if (vocab_size > 0 && prototypes >= vocab_size) {
        throw std::invalid_argument("ForecasterDims: prototype count " +
                                    std::to_string(prototypes) +
                                    " must be smaller than vocabulary size " +
                                    std::to_string(vocab_size));
    }
    patches();  // validates lookback/patch_len/stride
}

namespace {

std::size_t worker_count() {
    const char* env = std::getenv("FLOWROM_THREADS");
    if (env == nullptr) return 1;
    const long parsed = std::strtol(env, nullptr, 10);
    if (parsed <= 1) return 1;
    return static_cast<std::size_t>(parsed);
}

std::string layer_name(std::size_t layer, const char* suffix) {
    return "backbone.l" + std::to_string(layer) + "." + suffix;
}

}  // namespace

Forecaster init_forecaster(const ForecasterDims& dims_in, train::Variant variant,
                           std::uint64_t seed, const prompt::Vocab& vocab,
                           const prompt::Template& tmpl, bool tune_layer_norms) {
    Forecaster f;
    f.dims = dims_in;
    f.dims.vocab_size = vocab.size();
    f.dims.validate();
    f.variant = variant;
    f.seed = seed;
    f.vocab = vocab;
    f.tmpl = tmpl;

    const std::size_t d_m = f.dims.d_m;
    const std::size_t d_k = d_m / f.dims.reprog_heads;
    const std::size_t d_flat = f.dims.patches() * d_m;

    auto gauss = [&](const std::string& name, std::size_t r, std::size_t c, double stddev) {
        return seeded_gaussian(seed, name, r, c, stddev);
    };

    f.params.add("embed.w", gauss("embed.w", f.dims.patch_len, d_m, 0.02), true);
    f.params.add("embed.b", Matrix(1, d_m), true);
    if (variant == train::Variant::linear_reprogram) {
        f.params.add("reprog.linear", gauss("reprog.linear", d_m, d_m, 0.02), true);
    } else {
        // Probe scaled so prototypes come out at the embedding's magnitude.
        f.params.add("reprog.probe",
                     gauss("reprog.probe", f.dims.prototypes, vocab.size(),
                           1.0 / std::sqrt(static_cast<double>(vocab.size()))),
                     true);
        for (std::size_t h = 0; h < f.dims.reprog_heads; ++h) {
            const std::string base = "reprog.h" + std::to_string(h) + ".";
            f.params.add(base + "wq", gauss(base + "wq", d_m, d_k, 0.02), true);
            f.params.add(base + "wk", gauss(base + "wk", d_m, d_k, 0.02), true);
            f.params.add(base + "wv", gauss(base + "wv", d_m, d_k, 0.02), true);
        }
        f.params.add("reprog.wo", gauss("reprog.wo", d_m, d_m, 0.02), true);
        f.params.add("reprog.bo", Matrix(1, d_m), true);
    }
    f.params.add("head.w", gauss("head.w", d_flat, f.dims.horizon, 0.02), true);
    f.params.add("head.b", Matrix(1, f.dims.horizon), true);

    f.params.add("vocab.embedding", backbone::seed_vocab_embedding(seed, vocab.size(), d_m),
                 false);
    const backbone::EncoderParams enc = backbone::seed_encoder(seed, f.dims.encoder);
    for (std::size_t l = 0; l < enc.layers.size(); ++l) {
        const backbone::LayerParams& layer = enc.layers[l];
        f.params.add(layer_name(l, "attn.wq"), layer.wq, false);
        f.params.add(layer_name(l, "attn.wk"), layer.wk, false);
        f.params.add(layer_name(l, "attn.wv"), layer.wv, false);
        f.params.add(layer_name(l, "attn.wo"), layer.wo, false);
        f.params.add(layer_name(l, "ffn.w1"), layer.w1, false);
        f.params.add(layer_name(l, "ffn.w2"), layer.w2, false);
        f.params.add(layer_name(l, "ln1.gamma"), Matrix(1, d_m, 1.0), tune_layer_norms);
        f.params.add(layer_name(l, "ln1.beta"), Matrix(1, d_m), tune_layer_norms);
        f.params.add(layer_name(l, "ln2.gamma"), Matrix(1, d_m, 1.0), tune_layer_norms);
        f.params.add(layer_name(l, "ln2.beta"), Matrix(1, d_m), tune_layer_norms);
    }
    return f;
}

std::vector<int> prompt_ids_for_window(const Forecaster& f, const prompt::DatasetContext& ctx,
                                       const series::Window& raw_window) {
    if (f.variant == train::Variant::no_prompt) return {};
    prompt::TaskSpec task;
    task.lookback = f.dims.lookback;
    task.horizon = f.dims.horizon;
    const std::size_t lag_count = std::min<std::size_t>(5, raw_window.length() - 1);
    const prompt::InputStats stats = prompt::compute_stats(raw_window, lag_count);
    const std::string text = prompt::render_prompt(ctx, task, stats, f.tmpl);
    std::vector<int> ids = prompt::tokenize(text, f.vocab);
    if (f.variant == train::Variant::shuffled_prompt && ids.size() > 1) {
        // Same token multiset, seeded permutation.
        Rng rng(splitmix64(f.seed ^ 0x444e414dULL));
        for (std::size_t i = ids.size() - 1; i > 0; --i) {
            const std::size_t j = rng.uniform_index(i + 1);
            std::swap(ids[i], ids[j]);
        }
    }
    return ids;
}

TapeParams make_tape_params(const train::ParamStore& params, LeafMode mode,
                            const Matrix* cached_prototypes) {
    TapeParams tp;
    for (const std::string& name : params.names()) {
        const bool track = mode == LeafMode::all_grads ||
                           (mode == LeafMode::trainable_grads && params.trainable(name));
        tp.leaves.emplace(name, track ? ad::leaf(params.value(name))
                                      : ad::constant(params.value(name)));
    }
    if (params.has("reprog.probe")) {
        tp.cached_prototypes =
            cached_prototypes != nullptr
                ? *cached_prototypes
                : num::matmul(params.value("reprog.probe"), params.value("vocab.embedding"));
        tp.has_prototypes = true;
    }
    return tp;
}

ad::Var tape_predict(const TapeParams& tp, const ForecasterDims& dims, train::Variant variant,
                     const std::vector<double>& norm_window, const std::vector<int>& prompt_ids) {
    if (norm_window.size() != dims.lookback) {
        throw std::invalid_argument("tape_predict: window length " +
                                    std::to_string(norm_window.size()) +
                                    " does not match lookback " + std::to_string(dims.lookback));
    }
    series::Window w;
    w.values = norm_window;
    const series::PatchBatch batch = series::make_patches(w, dims.patch_len, dims.stride);

    ad::Var x = ad::add_row_broadcast(
        ad::matmul(ad::constant(batch.patches), tp.leaves.at("embed.w")), tp.leaves.at("embed.b"));

    if (variant == train::Variant::linear_reprogram) {
        x = ad::matmul(x, tp.leaves.at("reprog.linear"));
    } else {
        if (!tp.has_prototypes) throw std::logic_error("tape_predict: missing prototype cache");
        const ad::Var proto = ad::matmul_cached(tp.cached_prototypes, tp.leaves.at("reprog.probe"),
                                                tp.leaves.at("vocab.embedding"));
        const std::size_t d_k = dims.d_m / dims.reprog_heads;
        std::vector<ad::Var> heads;
        for (std::size_t h = 0; h < dims.reprog_heads; ++h) {
            const std::string base = "reprog.h" + std::to_string(h) + ".";
            const ad::Var q = ad::matmul(x, tp.leaves.at(base + "wq"));
            const ad::Var k = ad::matmul(proto, tp.leaves.at(base + "wk"));
            const ad::Var v = ad::matmul(proto, tp.leaves.at(base + "wv"));
            const ad::Var attn = ad::softmax_rows(
                ad::scale(ad::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d_k))));
            heads.push_back(ad::matmul(attn, v));
        }
        x = ad::add_row_broadcast(ad::matmul(ad::concat_cols(heads), tp.leaves.at("reprog.wo")),
                                  tp.leaves.at("reprog.bo"));
    }

    const std::size_t prefix = prompt_ids.size();
    ad::Var seq = x;
    if (prefix > 0) {
        const ad::Var prompt_emb = ad::gather_rows(tp.leaves.at("vocab.embedding"), prompt_ids);
        seq = ad::concat_rows(prompt_emb, x);
    }

    const std::size_t enc_dk = dims.encoder.d_m / dims.encoder.heads;
    for (std::size_t l = 0; l < dims.encoder.depth; ++l) {
        const ad::Var n1 = ad::layer_norm_rows(seq, tp.leaves.at(layer_name(l, "ln1.gamma")),
                                               tp.leaves.at(layer_name(l, "ln1.beta")),
                                               backbone::kLayerNormEps);
        const ad::Var q = ad::matmul(n1, tp.leaves.at(layer_name(l, "attn.wq")));
        const ad::Var k = ad::matmul(n1, tp.leaves.at(layer_name(l, "attn.wk")));
        const ad::Var v = ad::matmul(n1, tp.leaves.at(layer_name(l, "attn.wv")));
        std::vector<ad::Var> heads;
        for (std::size_t h = 0; h < dims.encoder.heads; ++h) {
            const ad::Var qh = ad::slice_cols(q, h * enc_dk, (h + 1) * enc_dk);
            const ad::Var kh = ad::slice_cols(k, h * enc_dk, (h + 1) * enc_dk);
            const ad::Var vh = ad::slice_cols(v, h * enc_dk, (h + 1) * enc_dk);
            const ad::Var attn = ad::softmax_rows(
                ad::scale(ad::matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(enc_dk))));
            heads.push_back(ad::matmul(attn, vh));
        }
        seq = ad::add(seq, ad::matmul(ad::concat_cols(heads),
                                      tp.leaves.at(layer_name(l, "attn.wo"))));
        const ad::Var n2 = ad::layer_norm_rows(seq, tp.leaves.at(layer_name(l, "ln2.gamma")),
                                               tp.leaves.at(layer_name(l, "ln2.beta")),
                                               backbone::kLayerNormEps);
        const ad::Var hidden = ad::gelu(ad::matmul(n2, tp.leaves.at(layer_name(l, "ffn.w1"))));
        seq = ad::add(seq, ad::matmul(hidden, tp.leaves.at(layer_name(l, "ffn.w2"))));
    }

    const ad::Var reps =
        prefix > 0 ? ad::slice_rows(seq, prefix, prefix + dims.patches()) : seq;
    const ad::Var flat = ad::flatten_rows(reps);
    return ad::add_row_broadcast(ad::matmul(flat, tp.leaves.at("head.w")),
                                 tp.leaves.at("head.b"));
}

std::vector<double> forward_normalized(const Forecaster& f,
                                       const std::vector<double>& norm_window,
                                       const std::vector<int>& prompt_ids) {
    const TapeParams tp = make_tape_params(f.params, LeafMode::no_grads);
    return tape_predict(tp, f.dims, f.variant, norm_window, prompt_ids).value().row(0);
}

std::vector<double> forecast_channel(const Forecaster& f, const prompt::DatasetContext& ctx,
                                     const series::Window& raw_window) {
    if (raw_window.length() != f.dims.lookback) {
        throw std::invalid_argument("forecast_channel: window length " +
                                    std::to_string(raw_window.length()) +
                                    " does not match lookback " +
                                    std::to_string(f.dims.lookback));
    }
    const std::vector<int> ids = prompt_ids_for_window(f, ctx, raw_window);
    const auto [norm_w, stats] = series::instance_norm(raw_window);
    const std::vector<double> pred = forward_normalized(f, norm_w.values, ids);
    return series::instance_denorm(pred, stats);
}

void append_windows(TrainDataset& dataset, const pod::ReducedSeries& series,
                    const prompt::DatasetContext& ctx, std::size_t lookback,
                    std::size_t horizon) {
    if (series.steps() < lookback + horizon) {
        throw std::invalid_argument("append_windows: series has " +
                                    std::to_string(series.steps()) + " steps, needs at least " +
                                    std::to_string(lookback + horizon));
    }
    dataset.contexts.push_back(ctx);
    const std::size_t case_index = dataset.contexts.size() - 1;
    for (std::size_t ch = 0; ch < series.channels(); ++ch) {
        for (std::size_t start = 0; start + lookback + horizon <= series.steps(); ++start) {
            TrainSample sample;
            sample.case_index = case_index;
            sample.window.channel = ch;
            sample.window.origin_step = start;
            sample.window.values.resize(lookback);
            for (std::size_t i = 0; i < lookback; ++i)
                sample.window.values[i] = series.coeffs(ch, start + i);
            sample.target.resize(horizon);
            for (std::size_t i = 0; i < horizon; ++i)
                sample.target[i] = series.coeffs(ch, start + lookback + i);
            dataset.samples.push_back(std::move(sample));
        }
    }
}

namespace {

struct PreparedSample {
    std::vector<double> norm_window;
    std::vector<int> prompt_ids;
    Matrix norm_target;  // 1 x H
};

PreparedSample prepare_sample(const Forecaster& f, const TrainDataset& dataset,
                              const TrainSample& sample) {
    PreparedSample out;
    out.prompt_ids = prompt_ids_for_window(f, dataset.contexts.at(sample.case_index),
                                           sample.window);
    const auto [norm_w, stats] = series::instance_norm(sample.window);
    out.norm_window = norm_w.values;
    out.norm_target = Matrix(1, sample.target.size());
    const double scale = stats.scale();
    for (std::size_t i = 0; i < sample.target.size(); ++i) {
        out.norm_target(0, i) = (sample.target[i] - stats.mean) / scale;
    }
    return out;
}

struct ItemResult {
    double loss = 0.0;
    std::map<std::string, Matrix> grads;
};

ItemResult run_item(const Forecaster& f, const PreparedSample& sample,
                    const std::vector<std::string>& trainable, const Matrix* proto_cache) {
    const TapeParams tp = make_tape_params(f.params, LeafMode::trainable_grads, proto_cache);
    const ad::Var loss = ad::mse(tape_predict(tp, f.dims, f.variant, sample.norm_window,
                                              sample.prompt_ids),
                                 ad::constant(sample.norm_target));
    ItemResult result;
    result.loss = loss.value()(0, 0);
    if (!std::isfinite(result.loss)) return result;  // caller reports the position
    ad::backward(loss);
    for (const std::string& name : trainable) {
        const ad::Var& leaf = tp.leaves.at(name);
        result.grads.emplace(name, leaf.node()->grad.size() > 0
                                       ? leaf.node()->grad
                                       : Matrix(leaf.value().rows, leaf.value().cols));
    }
    return result;
}

}  // namespace

std::vector<double> train_model(Forecaster& f, const TrainDataset& dataset,
                                const train::TrainConfig& config, std::ostream* progress) {
    config.validate();
    if (dataset.samples.empty()) throw std::invalid_argument("train_model: empty dataset");

    std::vector<PreparedSample> prepared;
    prepared.reserve(dataset.samples.size());
    for (const TrainSample& sample : dataset.samples)
        prepared.push_back(prepare_sample(f, dataset, sample));

    const std::vector<std::string> trainable = f.params.trainable_names();
    const std::size_t workers = worker_count();

    Rng shuffle_rng(splitmix64(config.seed ^ 0x7368756646ULL));
    std::vector<std::size_t> order(prepared.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<double> history;
    history.reserve(config.epochs);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_indices(order, shuffle_rng);
        double loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(start + config.batch_size, order.size());
            const std::size_t count = end - start;
            std::vector<ItemResult> results(count);

            Matrix proto_cache;
            const Matrix* proto = nullptr;
            if (f.params.has("reprog.probe")) {
                proto_cache = num::matmul(f.params.value("reprog.probe"),
                                          f.params.value("vocab.embedding"));
                proto = &proto_cache;
            }

            if (workers <= 1 || count <= 1) {
                for (std::size_t k = 0; k < count; ++k)
                    results[k] = run_item(f, prepared[order[start + k]], trainable, proto);
            } else {
                // Items are independent; the reduction below stays in index
                // order so the thread count never changes the result.
                const std::size_t used = std::min(workers, count);
                std::vector<std::thread> pool;
                for (std::size_t t = 0; t < used; ++t) {
                    pool.emplace_back([&, t]() {
                        for (std::size_t k = t; k < count; k += used)
                            results[k] = run_item(f, prepared[order[start + k]], trainable, proto);
                    });
                }
                for (std::thread& th : pool) th.join();
            }

            std::map<std::string, Matrix> grads;
            for (const std::string& name : trainable) {
                const Matrix& v = f.params.value(name);
                grads.emplace(name, Matrix(v.rows, v.cols));
            }
            for (std::size_t k = 0; k < count; ++k) {
                if (!std::isfinite(results[k].loss)) {
                    throw std::runtime_error("train_model: non-finite loss at epoch " +
                                             std::to_string(epoch + 1) + ", batch " +
                                             std::to_string(batch_index + 1));
                }
                loss_sum += results[k].loss;
                for (const std::string& name : trainable) {
                    Matrix& total = grads.at(name);
                    const Matrix& g = results[k].grads.at(name);
                    for (std::size_t i = 0; i < total.data.size(); ++i)
                        total.data[i] += g.data[i];
                }
            }
            const double inv = 1.0 / static_cast<double>(count);
            for (auto& [name, g] : grads)
                for (double& v : g.data) v *= inv;
            f.params.adam_step(grads, config.adam);
            ++batch_index;
        }
        history.push_back(loss_sum / static_cast<double>(order.size()));
        if (progress != nullptr) {
            *progress << "epoch=" << epoch + 1 << " mean_loss=" << history.back() << "\n";
        }
    }
    return history;
}

}  // namespace flowrom::model
