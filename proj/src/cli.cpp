#include "flowrom/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "flowrom/backbone.hpp"
#include "flowrom/dataio.hpp"
#include "flowrom/rompipe.hpp"

namespace flowrom::cli {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

void require_readable(const std::string& flag, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw CLI::ValidationError(flag, "file not found: " + path);
}

const prompt::Vocab& active_vocab(const std::string& path) {
    static prompt::Vocab custom;
    if (path.empty()) return prompt::default_vocab();
    custom = prompt::load_vocab(path);
    return custom;
}

const prompt::Template& active_template(const std::string& path) {
    static prompt::Template custom;
    if (path.empty()) return prompt::default_template();
    custom = prompt::load_template(path);
    return custom;
}

std::vector<rom::CaseData> load_cases(const std::vector<std::string>& case_paths) {
    std::vector<rom::CaseData> cases;
    for (const std::string& path : case_paths) {
        const io::CaseConfig cfg = io::load_case_config(path);
        cases.push_back(rom::CaseData{cfg.load_snapshots(), cfg.context});
    }
    return cases;
}

double median(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

struct TrainFlags {
    std::vector<std::string> case_paths;
    std::size_t rank = 11;
    std::size_t window = 10;
    std::size_t horizon = 1;
    std::size_t epochs = 20;
    std::size_t batch = 12;
    std::string variant = "full";
    std::uint64_t seed = 42;
    double train_fraction = 0.8;
    std::string vocab_path;
    std::string template_path;
};

void add_train_flags(CLI::App* cmd, TrainFlags& flags, bool rank_required) {
    auto* case_opt = cmd->add_option("--case", flags.case_paths, "case config file (repeatable)");
    case_opt->required()->check(CLI::ExistingFile);
    auto* rank_opt = cmd->add_option("--rank", flags.rank, "POD basis rank r");
    if (rank_required) rank_opt->required();
    cmd->add_option("--window", flags.window, "lookback window T");
    cmd->add_option("--horizon", flags.horizon, "forecast horizon H");
    cmd->add_option("--epochs", flags.epochs, "training epochs");
    cmd->add_option("--batch", flags.batch, "batch size");
    cmd->add_option("--variant", flags.variant, "full|no_prompt|shuffled_prompt|linear_reprogram")
        ->check(CLI::IsMember({"full", "no_prompt", "shuffled_prompt", "linear_reprogram"}));
    cmd->add_option("--seed", flags.seed, "training seed");
    cmd->add_option("--train-fraction", flags.train_fraction,
                    "leading fraction of steps used for training");
    cmd->add_option("--vocab", flags.vocab_path, "vocabulary file (default: built-in)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--template", flags.template_path, "prompt template file (default: built-in)")
        ->check(CLI::ExistingFile);
}

model::ForecasterDims dims_for(const TrainFlags& flags) {
    model::ForecasterDims dims;
    dims.lookback = flags.window;
    dims.horizon = flags.horizon;
    return dims;
}

train::TrainConfig config_for(const TrainFlags& flags, std::uint64_t seed) {
    train::TrainConfig config;
    config.epochs = flags.epochs;
    config.batch_size = flags.batch;
    config.seed = seed;
    config.variant = train::parse_variant(flags.variant);
    return config;
}

void import_backbone(model::Forecaster& f, const std::string& path) {
    const weights::Container c = weights::Container::load(path);
    const backbone::EncoderParams enc = backbone::load_encoder(c);
    const backbone::EncoderDims& want = f.dims.encoder;
    if (enc.dims.depth != want.depth || enc.dims.heads != want.heads ||
        enc.dims.d_m != want.d_m || enc.dims.d_ff != want.d_ff) {
        throw std::runtime_error(path + ": backbone dims do not match the model configuration");
    }
    for (std::size_t l = 0; l < enc.layers.size(); ++l) {
        const std::string base = "backbone.l" + std::to_string(l) + ".";
        f.params.mutable_value(base + "attn.wq") = enc.layers[l].wq;
        f.params.mutable_value(base + "attn.wk") = enc.layers[l].wk;
        f.params.mutable_value(base + "attn.wv") = enc.layers[l].wv;
        f.params.mutable_value(base + "attn.wo") = enc.layers[l].wo;
        f.params.mutable_value(base + "ffn.w1") = enc.layers[l].w1;
        f.params.mutable_value(base + "ffn.w2") = enc.layers[l].w2;
        f.params.mutable_value(base + "ln1.gamma") = Matrix::row_vector(enc.layers[l].ln1_gamma);
        f.params.mutable_value(base + "ln1.beta") = Matrix::row_vector(enc.layers[l].ln1_beta);
        f.params.mutable_value(base + "ln2.gamma") = Matrix::row_vector(enc.layers[l].ln2_gamma);
        f.params.mutable_value(base + "ln2.beta") = Matrix::row_vector(enc.layers[l].ln2_beta);
    }
    if (c.has("vocab.embedding")) {
        const Matrix emb = c.get_matrix("vocab.embedding");
        const Matrix& current = f.params.value("vocab.embedding");
        if (!emb.same_shape(current)) {
            throw std::runtime_error(path + ": vocab.embedding is " + emb.shape_str() +
                                     ", model expects " + current.shape_str());
        }
        f.params.mutable_value("vocab.embedding") = emb;
    }
}

// Shared by extrapolate and ablate: reduce the leading fraction, roll out to
// to_step, reconstruct fields.
pod::SnapshotMatrix rollout_case(const rom::RomModel& rom, const rom::CaseData& data,
                                 double seed_fraction, std::size_t to_step,
                                 std::size_t* seed_steps_out) {
    const std::size_t seed_steps = static_cast<std::size_t>(
        std::llround(seed_fraction * static_cast<double>(data.snapshots.steps())));
    if (seed_steps < rom.forecaster.dims.lookback) {
        throw std::invalid_argument("seed fraction gives " + std::to_string(seed_steps) +
                                    " steps, lookback needs " +
                                    std::to_string(rom.forecaster.dims.lookback));
    }
    if (to_step < seed_steps) {
        throw std::invalid_argument("--to-step " + std::to_string(to_step) +
                                    " is before the seed prefix end " +
                                    std::to_string(seed_steps));
    }
    pod::SnapshotMatrix seed_fields;
    seed_fields.data = Matrix(data.snapshots.nodes(), seed_steps);
    for (std::size_t j = 0; j < seed_steps; ++j)
        seed_fields.data.set_col(j, data.snapshots.data.col(j));
    const pod::ReducedSeries seed = pod::reduce_series(rom.basis, seed_fields);
    const pod::ReducedSeries rollout = rom::extrapolate(rom, seed, to_step, data.context);
    if (seed_steps_out != nullptr) *seed_steps_out = seed_steps;
    return pod::reconstruct_series(rom.basis, rollout, data.snapshots.grid_nx,
                                   data.snapshots.grid_ny);
}

int run_synth(const std::string& spec_path, const std::string& out_path) {
    const io::SynthWakeSpec spec = io::load_wake_spec(spec_path);
    const pod::SnapshotMatrix m = io::synth_wake(spec);
    io::write_snapshots(m, out_path);
    std::cout << "command=synth nodes=" << m.nodes() << " steps=" << m.steps() << " grid="
              << m.grid_nx << "x" << m.grid_ny << " modes=" << spec.modes << " out=" << out_path
              << "\n";
    return 0;
}

int run_pod(const std::string& in_path, std::size_t rank, const std::string& out_path,
            const std::string& energy_csv) {
    const pod::SnapshotMatrix m = io::read_snapshots(in_path);
    const pod::PodBasis basis = pod::fit_basis(m, rank, /*centering=*/true);
    weights::Container c;
    c.set_matrix("pod.basis", basis.basis);
    c.set_vector("pod.sigma", basis.singular_values);
    c.set_vector("pod.mean", basis.mean_field);
    c.set_scalar("pod.centering", basis.centering ? 1.0 : 0.0);
    c.save(out_path);
    const std::vector<double> energy = pod::energy_spectrum(basis);
    if (!energy_csv.empty()) {
        std::ofstream csv(energy_csv, std::ios::binary | std::ios::trunc);
        if (!csv) throw std::runtime_error("cannot open " + energy_csv);
        csv << "rank,cumulative_energy\n";
        for (std::size_t i = 0; i < energy.size(); ++i)
            csv << i + 1 << "," << fmt(energy[i]) << "\n";
    }
    std::cout << "command=pod nodes=" << m.nodes() << " steps=" << m.steps() << " rank=" << rank
              << " energy=" << fmt(energy[rank - 1]) << " out=" << out_path << "\n";
    return 0;
}

int run_train(const TrainFlags& flags, const std::string& backbone_path,
              const std::string& out_path) {
    const std::vector<rom::CaseData> cases = load_cases(flags.case_paths);
    const prompt::Vocab& vocab = active_vocab(flags.vocab_path);
    const prompt::Template& tmpl = active_template(flags.template_path);
    const train::TrainConfig config = config_for(flags, flags.seed);
    const model::ForecasterDims dims = dims_for(flags);

    std::function<void(model::Forecaster&)> init_hook;
    if (!backbone_path.empty()) {
        init_hook = [&backbone_path](model::Forecaster& f) {
            import_backbone(f, backbone_path);
        };
    }
    const rom::BuildResult result = rom::build_rom(cases, flags.rank, flags.train_fraction,
                                                   config, dims, vocab, tmpl, &std::cerr,
                                                   init_hook);

    std::cout << "command=train cases=" << cases.size() << " windows=" << result.window_count
              << " rank=" << flags.rank << " epochs=" << flags.epochs
              << " variant=" << flags.variant << " seed=" << flags.seed
              << " final_loss=" << fmt(result.loss_history.back());
    if (result.validation_rmse >= 0.0) std::cout << " val_rmse=" << fmt(result.validation_rmse);
    std::cout << " out=" << out_path << "\n";
    rom::save_model(result.model, out_path);
    return 0;
}

int run_extrapolate(const std::string& model_path, const std::string& case_path,
                    double seed_fraction, std::size_t to_step, const std::string& out_path,
                    const std::string& vocab_path, const std::string& template_path) {
    const prompt::Vocab& vocab = active_vocab(vocab_path);
    const prompt::Template& tmpl = active_template(template_path);
    const rom::RomModel rom = rom::load_model(model_path, vocab, tmpl);
    const io::CaseConfig cfg = io::load_case_config(case_path);
    const rom::CaseData data{cfg.load_snapshots(), cfg.context};
    std::size_t seed_steps = 0;
    const pod::SnapshotMatrix pred = rollout_case(rom, data, seed_fraction, to_step, &seed_steps);
    io::write_snapshots(pred, out_path);
    std::cout << "command=extrapolate case=" << cfg.context.case_name
              << " seed_steps=" << seed_steps << " to_step=" << to_step << " out=" << out_path
              << "\n";
    return 0;
}

int run_eval(const std::string& pred_path, const std::string& truth_path,
             const std::string& csv_path, const std::string& heatmap_dir) {
    const pod::SnapshotMatrix pred = io::read_snapshots(pred_path);
    const pod::SnapshotMatrix truth = io::read_snapshots(truth_path);
    const auto [per_step, mean] = rom::evaluate_rmse(pred, truth);
    if (!csv_path.empty()) io::export_rmse_csv(per_step, csv_path);
    if (!heatmap_dir.empty()) {
        if (!pred.has_grid() || !truth.has_grid()) {
            throw std::invalid_argument("--heatmap-dir: snapshot files carry no grid");
        }
        std::filesystem::create_directories(heatmap_dir);
        const std::size_t last = pred.steps() - 1;
        std::vector<double> error(pred.nodes());
        for (std::size_t i = 0; i < pred.nodes(); ++i)
            error[i] = std::abs(pred.data(i, last) - truth.data(i, last));
        io::export_heatmap(pred.data.col(last), pred.grid_nx, pred.grid_ny,
                           heatmap_dir + "/pred_final.ppm");
        io::export_heatmap(truth.data.col(last), truth.grid_nx, truth.grid_ny,
                           heatmap_dir + "/truth_final.ppm");
        io::export_heatmap(error, pred.grid_nx, pred.grid_ny, heatmap_dir + "/error_final.ppm");
    }
    std::cout << "command=eval steps=" << per_step.size() << " rmse_mean=" << fmt(mean)
              << " rmse_final=" << fmt(per_step.back()) << "\n";
    return 0;
}

int run_ablate(const TrainFlags& flags, std::size_t seeds, double seed_fraction,
               std::size_t to_step, const std::string& csv_path) {
    const std::vector<rom::CaseData> cases = load_cases(flags.case_paths);
    const prompt::Vocab& vocab = active_vocab(flags.vocab_path);
    const prompt::Template& tmpl = active_template(flags.template_path);
    const model::ForecasterDims dims = dims_for(flags);

    const std::vector<std::string> variants = {"full", "no_prompt", "shuffled_prompt",
                                               "linear_reprogram"};
    std::ostringstream csv;
    csv << "variant,seed,rmse\n";
    std::vector<double> medians;
    for (const std::string& variant : variants) {
        std::vector<double> rmses;
        for (std::size_t s = 0; s < seeds; ++s) {
            const std::uint64_t seed = flags.seed + s;
            TrainFlags run_flags = flags;
            run_flags.variant = variant;
            const train::TrainConfig config = config_for(run_flags, seed);
            const rom::BuildResult built = rom::build_rom(cases, flags.rank, flags.train_fraction,
                                                          config, dims, vocab, tmpl, nullptr);
            double acc = 0.0;
            for (const rom::CaseData& data : cases) {
                std::size_t seed_steps = 0;
                const pod::SnapshotMatrix pred =
                    rollout_case(built.model, data, seed_fraction, to_step, &seed_steps);
                // Score only the extrapolated steps beyond the seed prefix.
                pod::SnapshotMatrix pred_tail, truth_tail;
                pred_tail.data = Matrix(pred.nodes(), to_step - seed_steps);
                truth_tail.data = Matrix(pred.nodes(), to_step - seed_steps);
                for (std::size_t j = seed_steps; j < to_step; ++j) {
                    pred_tail.data.set_col(j - seed_steps, pred.data.col(j));
                    truth_tail.data.set_col(j - seed_steps, data.snapshots.data.col(j));
                }
                acc += rom::evaluate_rmse(pred_tail, truth_tail).second;
            }
            const double rmse = acc / static_cast<double>(cases.size());
            rmses.push_back(rmse);
            csv << variant << "," << seed << "," << fmt(rmse) << "\n";
            std::cerr << "variant=" << variant << " seed=" << seed << " rmse=" << fmt(rmse)
                      << "\n";
        }
        medians.push_back(median(rmses));
    }
    if (!csv_path.empty()) {
        std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + csv_path);
        out << csv.str();
    }
    std::cout << "command=ablate seeds=" << seeds;
    for (std::size_t i = 0; i < variants.size(); ++i)
        std::cout << " median_" << variants[i] << "=" << fmt(medians[i]);
    std::cout << "\n";
    return 0;
}

int run_export_weights(const std::string& out_path, std::uint64_t seed, std::size_t depth,
                       std::size_t heads, std::size_t d_m, std::size_t d_ff,
                       const std::string& vocab_path) {
    backbone::EncoderDims dims;
    dims.depth = depth;
    dims.heads = heads;
    dims.d_m = d_m;
    dims.d_ff = d_ff;
    const backbone::EncoderParams enc = backbone::seed_encoder(seed, dims);
    weights::Container c;
    backbone::store_encoder(c, enc);
    const prompt::Vocab& vocab = active_vocab(vocab_path);
    c.set_matrix("vocab.embedding", backbone::seed_vocab_embedding(seed, vocab.size(), d_m));
    c.save(out_path);
    std::cout << "command=export-weights tensors=" << c.size() << " seed=" << seed
              << " out=" << out_path << "\n";
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"flowrom: POD-reduced flow forecasting with a prompt-prefixed frozen "
                 "transformer"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic wake dataset");
    std::string synth_spec, synth_out;
    synth->add_option("--spec", synth_spec, "wake spec file (key=value)")
        ->required()
        ->check(CLI::ExistingFile);
    synth->add_option("--out", synth_out, "output FLOWSNAP file")->required();

    // pod
    auto* podc = app.add_subcommand("pod", "fit a POD basis from snapshots");
    std::string pod_in, pod_out, pod_energy;
    std::size_t pod_rank = 0;
    podc->add_option("--in", pod_in, "input FLOWSNAP file")->required()->check(CLI::ExistingFile);
    podc->add_option("--rank", pod_rank, "basis rank r")->required();
    podc->add_option("--out", pod_out, "output FLOWWGT file")->required();
    podc->add_option("--energy-csv", pod_energy, "write cumulative energy per rank");

    // train
    auto* trainc = app.add_subcommand("train", "train the forecaster on one or more cases");
    TrainFlags train_flags;
    add_train_flags(trainc, train_flags, /*rank_required=*/true);
    std::string train_out, train_backbone;
    trainc->add_option("--out", train_out, "output model path")->required();
    trainc->add_option("--backbone", train_backbone,
                       "import encoder/vocabulary weights from a FLOWWGT export")
        ->check(CLI::ExistingFile);

    // extrapolate
    auto* extra = app.add_subcommand("extrapolate", "autoregressive rollout on a case");
    std::string extra_model, extra_case, extra_out, extra_vocab, extra_template;
    double extra_fraction = 0.1;
    std::size_t extra_to = 90;
    extra->add_option("--model", extra_model, "trained model path")
        ->required()
        ->check(CLI::ExistingFile);
    extra->add_option("--case", extra_case, "case config file")
        ->required()
        ->check(CLI::ExistingFile);
    extra->add_option("--seed-fraction", extra_fraction, "leading fraction used as seed");
    extra->add_option("--to-step", extra_to, "extrapolate until this step count");
    extra->add_option("--out", extra_out, "output FLOWSNAP file")->required();
    extra->add_option("--vocab", extra_vocab, "vocabulary file (default: built-in)")
        ->check(CLI::ExistingFile);
    extra->add_option("--template", extra_template, "template file (default: built-in)")
        ->check(CLI::ExistingFile);

    // eval
    auto* evalc = app.add_subcommand("eval", "RMSE between predicted and true snapshots");
    std::string eval_pred, eval_truth, eval_csv, eval_heatmaps;
    evalc->add_option("--pred", eval_pred, "predicted FLOWSNAP")
        ->required()
        ->check(CLI::ExistingFile);
    evalc->add_option("--truth", eval_truth, "reference FLOWSNAP")
        ->required()
        ->check(CLI::ExistingFile);
    evalc->add_option("--csv", eval_csv, "write per-step RMSE table");
    evalc->add_option("--heatmap-dir", eval_heatmaps, "write final-step heatmaps here");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "train and score every prompt variant");
    TrainFlags ablate_flags;
    add_train_flags(ablate, ablate_flags, /*rank_required=*/false);
    std::size_t ablate_seeds = 5;
    double ablate_fraction = 0.1;
    std::size_t ablate_to = 90;
    std::string ablate_csv;
    ablate->add_option("--seeds", ablate_seeds, "number of seeds per variant");
    ablate->add_option("--seed-fraction", ablate_fraction, "rollout seed fraction");
    ablate->add_option("--to-step", ablate_to, "rollout end step");
    ablate->add_option("--out", ablate_csv, "write per-run RMSE table (CSV)");

    // export-weights
    auto* exportw = app.add_subcommand("export-weights", "export a seeded backbone container");
    std::string export_out, export_vocab;
    std::uint64_t export_seed = 42;
    std::size_t export_depth = 2, export_heads = 4, export_dm = 32, export_dff = 128;
    exportw->add_option("--out", export_out, "output FLOWWGT file")->required();
    exportw->add_option("--seed", export_seed, "init seed");
    exportw->add_option("--depth", export_depth, "encoder depth");
    exportw->add_option("--heads", export_heads, "attention heads");
    exportw->add_option("--dm", export_dm, "model width d_m");
    exportw->add_option("--dff", export_dff, "feed-forward width");
    exportw->add_option("--vocab", export_vocab, "vocabulary file (default: built-in)")
        ->check(CLI::ExistingFile);

    std::vector<const char*> argv;
    argv.push_back("flowrom");
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) return run_synth(synth_spec, synth_out);
        if (podc->parsed()) return run_pod(pod_in, pod_rank, pod_out, pod_energy);
        if (trainc->parsed()) return run_train(train_flags, train_backbone, train_out);
        if (extra->parsed()) {
            return run_extrapolate(extra_model, extra_case, extra_fraction, extra_to, extra_out,
                                   extra_vocab, extra_template);
        }
        if (evalc->parsed()) return run_eval(eval_pred, eval_truth, eval_csv, eval_heatmaps);
        if (ablate->parsed()) {
            return run_ablate(ablate_flags, ablate_seeds, ablate_fraction, ablate_to, ablate_csv);
        }
        if (exportw->parsed()) {
            return run_export_weights(export_out, export_seed, export_depth, export_heads,
                                      export_dm, export_dff, export_vocab);
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace flowrom::cli
