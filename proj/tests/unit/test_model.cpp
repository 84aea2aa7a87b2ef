#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "flowrom/model.hpp"
#include "flowrom/reprogram.hpp"
#include "flowrom/rng.hpp"
#include "oracles.hpp"

using namespace flowrom;

namespace {

// Small vocabulary so the probe stays tiny in unit tests.
const prompt::Vocab& tiny_vocab() {
    static const prompt::Vocab v = prompt::parse_vocab(
        "<unk>\n0\n1\n2\n3\n4\n5\n6\n7\n8\n9\n.\n,\n:\n+\n-\ne\ncase\nvariable\nmach\nangle\nof\n"
        "attack\ndegrees\nreynolds\ntask\npredict\nthe\nnext\nsteps\ngiven\nprevious\ninput\n"
        "statistics\nmin\nmax\nmedian\ntrend\nup\ndown\nflat\ntop\nautocorrelation\nlags\n"
        "dataset\nfield\ntest\n");
    return v;
}

model::ForecasterDims tiny_dims() {
    model::ForecasterDims dims;
    dims.lookback = 8;
    dims.horizon = 2;
    dims.patch_len = 4;
    dims.stride = 2;  // D = 3
    dims.d_m = 8;
    dims.reprog_heads = 2;
    dims.prototypes = 4;
    dims.encoder = backbone::EncoderDims{1, 2, 8, 16};
    return dims;
}

prompt::DatasetContext tiny_ctx() {
    prompt::DatasetContext ctx;
    ctx.case_name = "test";
    ctx.variable = "field";
    ctx.mach = 0.2;
    ctx.aoa = 0.0;
    ctx.reynolds = 5e6;
    return ctx;
}

series::Window ramp_window(std::size_t n) {
    series::Window w;
    for (std::size_t i = 0; i < n; ++i) w.values.push_back(std::sin(0.7 * double(i)) + 0.1 * double(i));
    return w;
}

model::TrainDataset sine_dataset(std::size_t steps, std::size_t lookback, std::size_t horizon) {
    pod::ReducedSeries series;
    series.coeffs = Matrix(2, steps);
    for (std::size_t t = 0; t < steps; ++t) {
        series.coeffs(0, t) = std::sin(2.0 * 3.14159265358979 * double(t) / 16.0);
        series.coeffs(1, t) = 0.05 * double(t) + 0.3 * std::cos(double(t) / 5.0);
    }
    model::TrainDataset dataset;
    model::append_windows(dataset, series, tiny_ctx(), lookback, horizon);
    return dataset;
}

}  // namespace

TEST_CASE("forecaster dims validation") {
    model::ForecasterDims dims = tiny_dims();
    dims.vocab_size = tiny_vocab().size();
    CHECK(dims.patches() == 3);
    CHECK_NOTHROW(dims.validate());
    dims.reprog_heads = 3;  // does not divide 8
    CHECK_THROWS_AS(dims.validate(), std::invalid_argument);
    dims = tiny_dims();
    dims.prototypes = 200;  // larger than the tiny vocabulary
    dims.vocab_size = tiny_vocab().size();
    CHECK_THROWS_AS(dims.validate(), std::invalid_argument);
}

TEST_CASE("pipeline forward matches the composed module operations") {
    const model::Forecaster f = model::init_forecaster(
        tiny_dims(), train::Variant::full, 7, tiny_vocab(), prompt::default_template());

    const series::Window raw = ramp_window(8);
    const std::vector<int> ids = model::prompt_ids_for_window(f, tiny_ctx(), raw);
    CHECK(!ids.empty());
    const auto [norm_w, stats] = series::instance_norm(raw);
    const std::vector<double> pipeline = model::forward_normalized(f, norm_w.values, ids);
    REQUIRE(pipeline.size() == 2);

    // Hand-composed route through the public module operations.
    const series::PatchBatch batch = series::make_patches(norm_w, 4, 2);
    const Matrix embedded =
        series::embed_patches(batch, f.params.value("embed.w"), f.params.value("embed.b").row(0));
    const Matrix prototypes =
        reprog::derive_prototypes(f.params.value("reprog.probe"), f.params.value("vocab.embedding"));
    reprog::CrossAttnParams attn;
    for (std::size_t h = 0; h < 2; ++h) {
        const std::string base = "reprog.h" + std::to_string(h) + ".";
        attn.heads.push_back(reprog::HeadParams{f.params.value(base + "wq"),
                                                f.params.value(base + "wk"),
                                                f.params.value(base + "wv")});
    }
    attn.wo = f.params.value("reprog.wo");
    attn.bo = f.params.value("reprog.bo").row(0);
    const Matrix reprogrammed = reprog::multi_head_reprogram(embedded, prototypes, attn);

    const Matrix prompt_emb = prompt::embed_tokens(ids, f.params.value("vocab.embedding"));

    backbone::EncoderParams enc;
    enc.dims = f.dims.encoder;
    for (std::size_t l = 0; l < enc.dims.depth; ++l) {
        const std::string base = "backbone.l" + std::to_string(l) + ".";
        backbone::LayerParams layer;
        layer.wq = f.params.value(base + "attn.wq");
        layer.wk = f.params.value(base + "attn.wk");
        layer.wv = f.params.value(base + "attn.wv");
        layer.wo = f.params.value(base + "attn.wo");
        layer.w1 = f.params.value(base + "ffn.w1");
        layer.w2 = f.params.value(base + "ffn.w2");
        layer.ln1_gamma = f.params.value(base + "ln1.gamma").row(0);
        layer.ln1_beta = f.params.value(base + "ln1.beta").row(0);
        layer.ln2_gamma = f.params.value(base + "ln2.gamma").row(0);
        layer.ln2_beta = f.params.value(base + "ln2.beta").row(0);
        enc.layers.push_back(std::move(layer));
    }
    const Matrix reps = backbone::forward_with_prefix(prompt_emb, reprogrammed, enc);
    backbone::ProjectionHead head;
    head.w_out = f.params.value("head.w");
    head.b_out = f.params.value("head.b").row(0);
    const std::vector<double> composed = backbone::project_output(reps, head);

    REQUIRE(composed.size() == pipeline.size());
    for (std::size_t i = 0; i < composed.size(); ++i)
        CHECK(pipeline[i] == doctest::Approx(composed[i]).epsilon(1e-12));
}

TEST_CASE("forecast_channel output length and zero-head degenerate case") {
    model::Forecaster f = model::init_forecaster(tiny_dims(), train::Variant::full, 3,
                                                 tiny_vocab(), prompt::default_template());
    const series::Window raw = ramp_window(8);
    CHECK(model::forecast_channel(f, tiny_ctx(), raw).size() == 2);

    // Zero projection weights: prediction must be b_out denormalized.
    f.params.mutable_value("head.w") = Matrix(f.dims.patches() * f.dims.d_m, 2);
    f.params.mutable_value("head.b") = Matrix(1, 2, {0.5, -0.25});
    const auto [norm_w, stats] = series::instance_norm(raw);
    const std::vector<double> out = model::forecast_channel(f, tiny_ctx(), raw);
    CHECK(out[0] == doctest::Approx(0.5 * stats.scale() + stats.mean).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(-0.25 * stats.scale() + stats.mean).epsilon(1e-12));

    series::Window bad = raw;
    bad.values.pop_back();
    CHECK_THROWS_AS(model::forecast_channel(f, tiny_ctx(), bad), std::invalid_argument);
}

TEST_CASE("prediction shape is independent of the prompt length") {
    const model::Forecaster f = model::init_forecaster(
        tiny_dims(), train::Variant::full, 11, tiny_vocab(), prompt::default_template());
    const series::Window raw = ramp_window(8);
    const auto [norm_w, stats] = series::instance_norm(raw);
    for (std::size_t p : {0u, 7u, 50u}) {
        std::vector<int> ids(p, 1);
        CHECK(model::forward_normalized(f, norm_w.values, ids).size() == 2);
    }
}

TEST_CASE("variants change the prompt ids as specified") {
    const prompt::DatasetContext ctx = tiny_ctx();
    const series::Window raw = ramp_window(8);

    const model::Forecaster full = model::init_forecaster(
        tiny_dims(), train::Variant::full, 5, tiny_vocab(), prompt::default_template());
    const std::vector<int> full_ids = model::prompt_ids_for_window(full, ctx, raw);

    const model::Forecaster none = model::init_forecaster(
        tiny_dims(), train::Variant::no_prompt, 5, tiny_vocab(), prompt::default_template());
    CHECK(model::prompt_ids_for_window(none, ctx, raw).empty());

    const model::Forecaster shuffled = model::init_forecaster(
        tiny_dims(), train::Variant::shuffled_prompt, 5, tiny_vocab(), prompt::default_template());
    const std::vector<int> shuffled_ids = model::prompt_ids_for_window(shuffled, ctx, raw);
    CHECK(shuffled_ids != full_ids);
    std::vector<int> a = full_ids, b = shuffled_ids;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);  // same token multiset

    // Deterministic permutation.
    CHECK(model::prompt_ids_for_window(shuffled, ctx, raw) == shuffled_ids);
}

TEST_CASE("linear reprogram variant swaps the attention block for one matrix") {
    const model::Forecaster f = model::init_forecaster(
        tiny_dims(), train::Variant::linear_reprogram, 5, tiny_vocab(),
        prompt::default_template());
    CHECK(f.params.has("reprog.linear"));
    CHECK(!f.params.has("reprog.probe"));
    const series::Window raw = ramp_window(8);
    CHECK(model::forecast_channel(f, tiny_ctx(), raw).size() == 2);
}

TEST_CASE("train_model with zero learning rate records losses but changes nothing") {
    model::Forecaster f = model::init_forecaster(tiny_dims(), train::Variant::full, 21,
                                                 tiny_vocab(), prompt::default_template());
    const weights::Container before = f.params.to_container();

    model::TrainDataset dataset = sine_dataset(24, 8, 2);
    train::TrainConfig config;
    config.epochs = 1;
    config.batch_size = 4;
    config.adam.learning_rate = 0.0;
    config.seed = 9;
    const std::vector<double> history = model::train_model(f, dataset, config);
    REQUIRE(history.size() == 1);
    CHECK(std::isfinite(history[0]));

    const weights::Container after = f.params.to_container();
    for (const std::string& name : before.names()) {
        CHECK(before.get(name).values == after.get(name).values);
    }
}

TEST_CASE("frozen tensors are bit-identical after training") {
    model::Forecaster f = model::init_forecaster(tiny_dims(), train::Variant::full, 22,
                                                 tiny_vocab(), prompt::default_template());
    std::map<std::string, std::vector<double>> frozen_before;
    for (const std::string& name : f.params.names()) {
        if (!f.params.trainable(name)) frozen_before[name] = f.params.value(name).data;
    }
    CHECK(!frozen_before.empty());

    model::TrainDataset dataset = sine_dataset(30, 8, 2);
    train::TrainConfig config;
    config.epochs = 3;
    config.batch_size = 6;
    config.seed = 10;
    model::train_model(f, dataset, config);

    std::size_t changed_trainable = 0;
    for (const std::string& name : f.params.names()) {
        if (f.params.trainable(name)) {
            changed_trainable += f.params.value(name).data != Matrix().data ? 1 : 0;
        } else {
            CHECK(f.params.value(name).data == frozen_before[name]);
        }
    }
    CHECK(changed_trainable > 0);
}

TEST_CASE("gradients reach frozen tensors without updating them") {
    model::Forecaster f = model::init_forecaster(tiny_dims(), train::Variant::full, 23,
                                                 tiny_vocab(), prompt::default_template());
    const series::Window raw = ramp_window(8);
    const std::vector<int> ids = model::prompt_ids_for_window(f, tiny_ctx(), raw);
    const auto [norm_w, stats] = series::instance_norm(raw);

    const model::TapeParams tp = model::make_tape_params(f.params, model::LeafMode::all_grads);
    const ad::Var pred = model::tape_predict(tp, f.dims, f.variant, norm_w.values, ids);
    const ad::Var loss = ad::mse(pred, ad::constant(Matrix(1, 2, 0.1)));
    ad::backward(loss);

    const ad::Var& emb = tp.leaves.at("vocab.embedding");
    CHECK(emb.grad().size() > 0);
    double emb_grad_mass = 0.0;
    for (double g : emb.grad().data) emb_grad_mass += std::abs(g);
    CHECK(emb_grad_mass > 0.0);
    const ad::Var& wq = tp.leaves.at("backbone.l0.attn.wq");
    CHECK(wq.grad().size() > 0);
}

TEST_CASE("training is deterministic for a fixed seed") {
    auto run = [&] {
        model::Forecaster f = model::init_forecaster(tiny_dims(), train::Variant::full, 31,
                                                     tiny_vocab(), prompt::default_template());
        model::TrainDataset dataset = sine_dataset(26, 8, 2);
        train::TrainConfig config;
        config.epochs = 2;
        config.batch_size = 5;
        config.seed = 31;
        const std::vector<double> history = model::train_model(f, dataset, config);
        return std::make_pair(history, f.params.to_container());
    };
    const auto [h1, c1] = run();
    const auto [h2, c2] = run();
    CHECK(h1 == h2);
    for (const std::string& name : c1.names()) CHECK(c1.get(name).values == c2.get(name).values);
}

TEST_CASE("training loss decreases on a synthetic task for most seeds") {
    std::size_t improved = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        model::Forecaster f = model::init_forecaster(tiny_dims(), train::Variant::full, seed,
                                                     tiny_vocab(), prompt::default_template());
        model::TrainDataset dataset = sine_dataset(40, 8, 2);
        train::TrainConfig config;
        config.epochs = 20;
        config.batch_size = 12;
        config.seed = seed;
        const std::vector<double> history = model::train_model(f, dataset, config);
        REQUIRE(history.size() == 20);
        if (history.back() < history.front()) ++improved;
    }
    CHECK(improved >= 4);
}

TEST_CASE("train_model validates the dataset and reports non-finite losses") {
    model::Forecaster f = model::init_forecaster(tiny_dims(), train::Variant::full, 41,
                                                 tiny_vocab(), prompt::default_template());
    model::TrainDataset empty;
    train::TrainConfig config;
    CHECK_THROWS_AS(model::train_model(f, empty, config), std::invalid_argument);

    // Poison a parameter so the first forward produces NaN.
    model::TrainDataset dataset = sine_dataset(20, 8, 2);
    f.params.mutable_value("head.b")(0, 0) = std::nan("");
    config.epochs = 1;
    config.batch_size = 4;
    CHECK_THROWS_WITH_AS(model::train_model(f, dataset, config), doctest::Contains("epoch 1"),
                         std::runtime_error);
}

TEST_CASE("tune_layer_norms flag moves layer norms into the trainable set") {
    const model::Forecaster off = model::init_forecaster(
        tiny_dims(), train::Variant::full, 51, tiny_vocab(), prompt::default_template(), false);
    CHECK(!off.params.trainable("backbone.l0.ln1.gamma"));
    const model::Forecaster on = model::init_forecaster(
        tiny_dims(), train::Variant::full, 51, tiny_vocab(), prompt::default_template(), true);
    CHECK(on.params.trainable("backbone.l0.ln1.gamma"));
    CHECK(!on.params.trainable("backbone.l0.attn.wq"));
}
