#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "flowrom/autodiff.hpp"
#include "flowrom/backbone.hpp"
#include "flowrom/pod.hpp"
#include "flowrom/prompt.hpp"
#include "flowrom/series.hpp"
#include "flowrom/train.hpp"

namespace flowrom::model {

struct ForecasterDims {
    std::size_t lookback = 10;   // T
    std::size_t horizon = 1;     // H
    std::size_t patch_len = 4;   // L
    std::size_t stride = 2;      // S
    std::size_t d_m = 32;
    std::size_t reprog_heads = 4;
    std::size_t prototypes = 32;  // V'
    backbone::EncoderDims encoder;
    std::size_t vocab_size = 0;  // V, filled in from the vocabulary

    std::size_t patches() const;  // D
    void validate() const;
};

// The trained forecaster: patch embedding, prototype reprogramming, frozen
// encoder, projection head, plus the prompt machinery it was built with.
struct Forecaster {
    ForecasterDims dims;
    train::Variant variant = train::Variant::full;
    std::uint64_t seed = 0;
    prompt::Vocab vocab;
    prompt::Template tmpl;
    train::ParamStore params;
};

Forecaster init_forecaster(const ForecasterDims& dims, train::Variant variant,
                           std::uint64_t seed, const prompt::Vocab& vocab,
                           const prompt::Template& tmpl, bool tune_layer_norms = false);

std::vector<int> prompt_ids_for_window(const Forecaster& f, const prompt::DatasetContext& ctx,
                                       const series::Window& raw_window);

// Which parameters become gradient-tracked tape leaves. Training tracks only
// the trainable partition; gradient checks may track everything.
enum class LeafMode { all_grads, trainable_grads, no_grads };

struct TapeParams {
    std::map<std::string, ad::Var> leaves;
    Matrix cached_prototypes;  // probe * E, computed once per batch
    bool has_prototypes = false;
};

// cached_prototypes, when given, skips recomputing probe * E; it must match
// the store's current probe and embedding.
TapeParams make_tape_params(const train::ParamStore& params, LeafMode mode,
                            const Matrix* cached_prototypes = nullptr);

// Records the whole per-channel pipeline on the tape and returns the 1 x H
// prediction in normalized scale.
ad::Var tape_predict(const TapeParams& tp, const ForecasterDims& dims, train::Variant variant,
                     const std::vector<double>& norm_window, const std::vector<int>& prompt_ids);

// Forward in normalized scale; used by training directly and by inference
// through forecast_channel.
std::vector<double> forward_normalized(const Forecaster& f,
                                       const std::vector<double>& norm_window,
                                       const std::vector<int>& prompt_ids);

// Full per-channel pipeline: normalize, patch, reprogram, prefix, encode,
// project, denormalize.
std::vector<double> forecast_channel(const Forecaster& f, const prompt::DatasetContext& ctx,
                                     const series::Window& raw_window);

struct TrainSample {
    series::Window window;        // raw lookback values
    std::vector<double> target;   // raw next-H values
    std::size_t case_index = 0;
};

struct TrainDataset {
    std::vector<TrainSample> samples;
    std::vector<prompt::DatasetContext> contexts;
};

// Sliding windows with stride 1 over every channel of the reduced series.
void append_windows(TrainDataset& dataset, const pod::ReducedSeries& series,
                    const prompt::DatasetContext& ctx, std::size_t lookback,
                    std::size_t horizon);

// Runs the seeded epoch/batch loop and returns the per-epoch mean loss.
std::vector<double> train_model(Forecaster& f, const TrainDataset& dataset,
                                const train::TrainConfig& config,
                                std::ostream* progress = nullptr);

}  // namespace flowrom::model
