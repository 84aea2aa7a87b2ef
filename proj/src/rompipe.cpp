#include "flowrom/rompipe.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "flowrom/rng.hpp"
#include "flowrom/weights.hpp"

namespace flowrom::rom {

namespace {

std::size_t train_step_count(std::size_t steps, double train_fraction) {
    if (!(train_fraction > 0.0) || train_fraction > 1.0) {
        throw std::invalid_argument("build_rom: train_fraction must be in (0, 1]");
    }
    return static_cast<std::size_t>(
        std::llround(train_fraction * static_cast<double>(steps)));
}

pod::SnapshotMatrix training_columns(const std::vector<CaseData>& cases,
                                     const std::vector<std::size_t>& train_steps) {
    const std::size_t nodes = cases[0].snapshots.nodes();
    std::size_t total = 0;
    for (std::size_t c = 0; c < cases.size(); ++c) {
        if (cases[c].snapshots.nodes() != nodes) {
            throw std::invalid_argument("build_rom: case " + std::to_string(c) + " has " +
                                        std::to_string(cases[c].snapshots.nodes()) +
                                        " nodes, expected " + std::to_string(nodes));
        }
        total += train_steps[c];
    }
    pod::SnapshotMatrix joined;
    joined.data = Matrix(nodes, total);
    std::size_t col = 0;
    for (std::size_t c = 0; c < cases.size(); ++c) {
        for (std::size_t j = 0; j < train_steps[c]; ++j, ++col) {
            for (std::size_t i = 0; i < nodes; ++i)
                joined.data(i, col) = cases[c].snapshots.data(i, j);
        }
    }
    joined.validate();
    return joined;
}

pod::ReducedSeries head_columns(const pod::ReducedSeries& series, std::size_t count) {
    pod::ReducedSeries out;
    out.coeffs = Matrix(series.channels(), count);
    for (std::size_t i = 0; i < series.channels(); ++i)
        for (std::size_t j = 0; j < count; ++j) out.coeffs(i, j) = series.coeffs(i, j);
    return out;
}

}  // namespace

BuildResult build_rom(const std::vector<CaseData>& cases, std::size_t rank,
                      double train_fraction, const train::TrainConfig& config,
                      const model::ForecasterDims& dims, const prompt::Vocab& vocab,
                      const prompt::Template& tmpl, std::ostream* progress,
                      const std::function<void(model::Forecaster&)>& init_hook) {
    if (cases.empty()) throw std::invalid_argument("build_rom: no cases");
    config.validate();

    std::vector<std::size_t> train_steps;
    for (const CaseData& c : cases) {
        c.snapshots.validate();
        c.context.validate();
        const std::size_t steps = train_step_count(c.snapshots.steps(), train_fraction);
        const std::size_t needed = dims.lookback + dims.horizon;
        if (steps < needed) {
            throw std::invalid_argument("build_rom: " + std::to_string(steps) +
                                        " training steps for case \"" + c.context.case_name +
                                        "\", need at least " + std::to_string(needed) +
                                        " (lookback + horizon)");
        }
        train_steps.push_back(steps);
    }

    BuildResult result;
    result.train_steps = train_steps;

    const pod::SnapshotMatrix joined = training_columns(cases, train_steps);
    result.model.basis = pod::fit_basis(joined, rank, /*centering=*/true);

    model::TrainDataset dataset;
    for (std::size_t c = 0; c < cases.size(); ++c) {
        pod::SnapshotMatrix train_part;
        train_part.data = Matrix(cases[c].snapshots.nodes(), train_steps[c]);
        for (std::size_t j = 0; j < train_steps[c]; ++j)
            train_part.data.set_col(j, cases[c].snapshots.data.col(j));
        const pod::ReducedSeries reduced = pod::reduce_series(result.model.basis, train_part);
        model::append_windows(dataset, reduced, cases[c].context, dims.lookback, dims.horizon);
    }
    result.window_count = dataset.samples.size();

    result.model.forecaster =
        model::init_forecaster(dims, config.variant, config.seed, vocab, tmpl,
                               config.tune_layer_norms);
    if (init_hook) init_hook(result.model.forecaster);
    result.loss_history = model::train_model(result.model.forecaster, dataset, config, progress);

    // Validation: continue each case from its training prefix and score the
    // reconstruction against the held-out steps.
    bool any_validation = false;
    double rmse_acc = 0.0;
    std::size_t rmse_count = 0;
    for (std::size_t c = 0; c < cases.size(); ++c) {
        const std::size_t total = cases[c].snapshots.steps();
        if (train_steps[c] >= total) continue;
        any_validation = true;
        const pod::ReducedSeries full = pod::reduce_series(result.model.basis, cases[c].snapshots);
        const pod::ReducedSeries seed = head_columns(full, train_steps[c]);
        const pod::ReducedSeries rollout =
            extrapolate(result.model, seed, total, cases[c].context);
        const pod::SnapshotMatrix rebuilt = pod::reconstruct_series(
            result.model.basis, rollout, cases[c].snapshots.grid_nx, cases[c].snapshots.grid_ny);
        for (std::size_t j = train_steps[c]; j < total; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < rebuilt.nodes(); ++i) {
                const double d = rebuilt.data(i, j) - cases[c].snapshots.data(i, j);
                acc += d * d;
            }
            rmse_acc += std::sqrt(acc / static_cast<double>(rebuilt.nodes()));
            ++rmse_count;
        }
    }
    if (any_validation) {
        result.validation_rmse = rmse_acc / static_cast<double>(rmse_count);
    } else if (progress != nullptr) {
        *progress << "warning: train_fraction leaves no validation steps\n";
    }
    return result;
}

BuildResult build_rom(const pod::SnapshotMatrix& snapshots, const prompt::DatasetContext& ctx,
                      std::size_t rank, double train_fraction, const train::TrainConfig& config,
                      const model::ForecasterDims& dims, std::ostream* progress) {
    std::vector<CaseData> cases;
    cases.push_back(CaseData{snapshots, ctx});
    return build_rom(cases, rank, train_fraction, config, dims, prompt::default_vocab(),
                     prompt::default_template(), progress);
}

std::vector<std::vector<double>> forecast_window(const RomModel& rom,
                                                 const std::vector<series::Window>& windows,
                                                 const prompt::DatasetContext& ctx) {
    if (windows.size() != rom.basis.rank) {
        throw std::invalid_argument("forecast_window: " + std::to_string(windows.size()) +
                                    " windows for " + std::to_string(rom.basis.rank) +
                                    " channels");
    }
    std::vector<std::vector<double>> out(windows.size());
    for (std::size_t ch = 0; ch < windows.size(); ++ch) {
        out[ch] = model::forecast_channel(rom.forecaster, ctx, windows[ch]);
    }
    return out;
}

pod::ReducedSeries extrapolate(const RomModel& rom, const pod::ReducedSeries& seed,
                               std::size_t total_steps, const prompt::DatasetContext& ctx) {
    const std::size_t lookback = rom.forecaster.dims.lookback;
    if (seed.channels() != rom.basis.rank) {
        throw std::invalid_argument("extrapolate: seed has " + std::to_string(seed.channels()) +
                                    " channels, basis rank is " +
                                    std::to_string(rom.basis.rank));
    }
    if (seed.steps() < lookback) {
        throw std::invalid_argument("extrapolate: seed length " + std::to_string(seed.steps()) +
                                    " is shorter than lookback " + std::to_string(lookback));
    }

    std::vector<std::vector<double>> channels(seed.channels());
    for (std::size_t ch = 0; ch < seed.channels(); ++ch) channels[ch] = seed.coeffs.row(ch);

    while (channels[0].size() < total_steps) {
        const std::size_t have = channels[0].size();
        std::vector<series::Window> windows(seed.channels());
        for (std::size_t ch = 0; ch < seed.channels(); ++ch) {
            windows[ch].channel = ch;
            windows[ch].origin_step = have - lookback;
            windows[ch].values.assign(channels[ch].end() - static_cast<std::ptrdiff_t>(lookback),
                                      channels[ch].end());
        }
        const std::vector<std::vector<double>> next = forecast_window(rom, windows, ctx);
        const std::size_t take = std::min(next[0].size(), total_steps - have);
        for (std::size_t ch = 0; ch < seed.channels(); ++ch) {
            for (std::size_t i = 0; i < take; ++i) {
                const double v = next[ch][i];
                if (!std::isfinite(v)) {
                    throw std::runtime_error("extrapolate: non-finite prediction at step " +
                                             std::to_string(have + i + 1) + ", channel " +
                                             std::to_string(ch));
                }
                channels[ch].push_back(v);
            }
        }
    }

    pod::ReducedSeries out;
    out.coeffs = Matrix(seed.channels(), total_steps);
    for (std::size_t ch = 0; ch < seed.channels(); ++ch)
        for (std::size_t j = 0; j < total_steps; ++j) out.coeffs(ch, j) = channels[ch][j];
    return out;
}

std::pair<std::vector<double>, double> evaluate_rmse(const pod::SnapshotMatrix& pred,
                                                     const pod::SnapshotMatrix& truth) {
    if (pred.nodes() != truth.nodes() || pred.steps() != truth.steps()) {
        throw std::invalid_argument("evaluate_rmse: shape mismatch (" + pred.data.shape_str() +
                                    " vs " + truth.data.shape_str() + ")");
    }
    std::vector<double> per_step(pred.steps());
    double mean = 0.0;
    for (std::size_t j = 0; j < pred.steps(); ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < pred.nodes(); ++i) {
            const double d = pred.data(i, j) - truth.data(i, j);
            acc += d * d;
        }
        per_step[j] = std::sqrt(acc / static_cast<double>(pred.nodes()));
        mean += per_step[j];
    }
    mean /= static_cast<double>(pred.steps());
    return {per_step, mean};
}

namespace {

std::string manifest_path(const std::string& path) { return path + ".manifest"; }

std::string hex64(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

void save_model(const RomModel& rom, const std::string& path) {
    weights::Container c = rom.forecaster.params.to_container();
    c.set_matrix("pod.basis", rom.basis.basis);
    c.set_vector("pod.sigma", rom.basis.singular_values);
    c.set_vector("pod.mean", rom.basis.mean_field);
    c.set_scalar("pod.centering", rom.basis.centering ? 1.0 : 0.0);
    c.save(path);

    const model::ForecasterDims& d = rom.forecaster.dims;
    std::ofstream m(manifest_path(path), std::ios::binary | std::ios::trunc);
    if (!m) throw std::runtime_error("save_model: cannot open " + manifest_path(path));
    m << "format=flowrom-manifest-v1\n";
    m << "template_version=" << rom.forecaster.tmpl.version << "\n";
    m << "vocab_hash=" << hex64(prompt::vocab_hash(rom.forecaster.vocab)) << "\n";
    m << "variant=" << train::variant_name(rom.forecaster.variant) << "\n";
    m << "seed=" << rom.forecaster.seed << "\n";
    m << "lookback=" << d.lookback << "\n";
    m << "horizon=" << d.horizon << "\n";
    m << "patch_len=" << d.patch_len << "\n";
    m << "stride=" << d.stride << "\n";
    m << "d_m=" << d.d_m << "\n";
    m << "reprog_heads=" << d.reprog_heads << "\n";
    m << "prototypes=" << d.prototypes << "\n";
    m << "encoder_depth=" << d.encoder.depth << "\n";
    m << "encoder_heads=" << d.encoder.heads << "\n";
    m << "encoder_d_ff=" << d.encoder.d_ff << "\n";
    m << "rank=" << rom.basis.rank << "\n";
    m << "centering=" << (rom.basis.centering ? 1 : 0) << "\n";
    if (!m) throw std::runtime_error("save_model: write failed for " + manifest_path(path));
}

RomModel load_model(const std::string& path, const prompt::Vocab& vocab,
                    const prompt::Template& tmpl) {
    std::ifstream in(manifest_path(path));
    if (!in) throw std::runtime_error("load_model: cannot open " + manifest_path(path));
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(manifest_path(path) + ": expected key=value, got \"" + line +
                                     "\"");
        }
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto need = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) {
            throw std::runtime_error(manifest_path(path) + ": missing key \"" + key + "\"");
        }
        return it->second;
    };
    if (need("format") != "flowrom-manifest-v1") {
        throw std::runtime_error(manifest_path(path) + ": unsupported format \"" + kv["format"] +
                                 "\"");
    }
    if (need("template_version") != tmpl.version) {
        throw std::runtime_error("load_model: model was trained with template \"" +
                                 kv["template_version"] + "\", active template is \"" +
                                 tmpl.version + "\"");
    }
    if (need("vocab_hash") != hex64(prompt::vocab_hash(vocab))) {
        throw std::runtime_error("load_model: vocabulary hash mismatch (model " +
                                 kv["vocab_hash"] + ", active " +
                                 hex64(prompt::vocab_hash(vocab)) + ")");
    }

    RomModel rom;
    rom.forecaster.vocab = vocab;
    rom.forecaster.tmpl = tmpl;
    rom.forecaster.variant = train::parse_variant(need("variant"));
    rom.forecaster.seed = std::stoull(need("seed"));

    model::ForecasterDims dims;
    dims.lookback = std::stoul(need("lookback"));
    dims.horizon = std::stoul(need("horizon"));
    dims.patch_len = std::stoul(need("patch_len"));
    dims.stride = std::stoul(need("stride"));
    dims.d_m = std::stoul(need("d_m"));
    dims.reprog_heads = std::stoul(need("reprog_heads"));
    dims.prototypes = std::stoul(need("prototypes"));
    dims.encoder.depth = std::stoul(need("encoder_depth"));
    dims.encoder.heads = std::stoul(need("encoder_heads"));
    dims.encoder.d_m = dims.d_m;
    dims.encoder.d_ff = std::stoul(need("encoder_d_ff"));
    dims.vocab_size = vocab.size();
    dims.validate();
    rom.forecaster.dims = dims;

    const weights::Container c = weights::Container::load(path);
    rom.forecaster.params = train::ParamStore::from_container(c);
    rom.basis.basis = c.get_matrix("pod.basis");
    rom.basis.singular_values = c.get_vector("pod.sigma");
    rom.basis.mean_field = c.get_vector("pod.mean");
    rom.basis.centering = c.get_scalar("pod.centering") != 0.0;
    rom.basis.rank = std::stoul(need("rank"));
    if (rom.basis.rank != rom.basis.basis.cols) {
        throw std::runtime_error("load_model: manifest rank " + std::to_string(rom.basis.rank) +
                                 " does not match basis tensor " + rom.basis.basis.shape_str());
    }
    return rom;
}

}  // namespace flowrom::rom
