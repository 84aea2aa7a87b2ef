#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "flowrom/dataio.hpp"
#include "flowrom/model.hpp"
#include "flowrom/pod.hpp"

namespace flowrom::rom {

// POD basis plus the trained forecaster over its reduced coordinates.
struct RomModel {
    pod::PodBasis basis;
    model::Forecaster forecaster;
};

struct CaseData {
    pod::SnapshotMatrix snapshots;
    prompt::DatasetContext context;
};

struct BuildResult {
    RomModel model;
    std::vector<double> loss_history;     // per-epoch mean training loss
    std::size_t window_count = 0;
    std::vector<std::size_t> train_steps;  // per case
    double validation_rmse = -1.0;         // reconstructed-field RMSE; -1 when no validation set
};

// Fits the basis on the training columns of every case, trains the
// forecaster on the concatenated window sets, and scores the validation
// range in full-field space. init_hook, when set, runs on the freshly
// initialized forecaster before training (weight imports live there).
BuildResult build_rom(const std::vector<CaseData>& cases, std::size_t rank,
                      double train_fraction, const train::TrainConfig& config,
                      const model::ForecasterDims& dims, const prompt::Vocab& vocab,
                      const prompt::Template& tmpl, std::ostream* progress = nullptr,
                      const std::function<void(model::Forecaster&)>& init_hook = {});

BuildResult build_rom(const pod::SnapshotMatrix& snapshots, const prompt::DatasetContext& ctx,
                      std::size_t rank, double train_fraction, const train::TrainConfig& config,
                      const model::ForecasterDims& dims, std::ostream* progress = nullptr);

// One forecast step: a length-T window per channel in, H values per channel out.
std::vector<std::vector<double>> forecast_window(const RomModel& rom,
                                                 const std::vector<series::Window>& windows,
                                                 const prompt::DatasetContext& ctx);

// Autoregressive rollout from a seed prefix until total_steps columns exist.
pod::ReducedSeries extrapolate(const RomModel& rom, const pod::ReducedSeries& seed,
                               std::size_t total_steps, const prompt::DatasetContext& ctx);

std::pair<std::vector<double>, double> evaluate_rmse(const pod::SnapshotMatrix& pred,
                                                     const pod::SnapshotMatrix& truth);

struct ForecastResult {
    pod::ReducedSeries reduced_pred;
    pod::SnapshotMatrix fields_pred;
    std::vector<double> rmse_per_step;
    double rmse_mean = 0.0;
};

// Model persistence: one FLOWWGT container plus "<path>.manifest" recording
// the template version, vocabulary hash, architecture and task dimensions.
void save_model(const RomModel& rom, const std::string& path);
RomModel load_model(const std::string& path, const prompt::Vocab& vocab,
                    const prompt::Template& tmpl);

}  // namespace flowrom::rom
