#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "flowrom/prompt.hpp"
#include "flowrom/rng.hpp"

using namespace flowrom;

namespace {

series::Window make_window(std::vector<double> values) {
    series::Window w;
    w.values = std::move(values);
    return w;
}

prompt::DatasetContext sample_context() {
    prompt::DatasetContext ctx;
    ctx.case_name = "clarky-a";
    ctx.variable = "density";
    ctx.mach = 0.2;
    ctx.aoa = 4.0;
    ctx.reynolds = 5e6;
    ctx.description = "airfoil flow case";
    return ctx;
}

prompt::InputStats sample_stats() {
    prompt::InputStats stats;
    stats.min = 0.91234;
    stats.max = 1.0832;
    stats.median = 1.0021;
    stats.trend = prompt::Trend::down;
    stats.top_lags = {5, 4, 6, 3, 7};
    return stats;
}

}  // namespace

TEST_CASE("compute_stats on a ramp") {
    const prompt::InputStats s = prompt::compute_stats(make_window({1, 2, 3, 4}), 2);
    CHECK(s.min == 1);
    CHECK(s.max == 4);
    CHECK(s.median == doctest::Approx(2.5));
    CHECK(s.trend == prompt::Trend::up);
}

TEST_CASE("compute_stats trend dead band") {
    CHECK(prompt::compute_stats(make_window({2, 2, 2, 2}), 2).trend == prompt::Trend::flat);
    CHECK(prompt::compute_stats(make_window({4, 3, 2, 1}), 2).trend == prompt::Trend::down);
}

TEST_CASE("compute_stats finds the sine period in the top lag") {
    std::vector<double> values(32);
    for (std::size_t t = 0; t < 32; ++t)
        values[t] = std::sin(2.0 * 3.14159265358979323846 * double(t) / 8.0);
    const prompt::InputStats s = prompt::compute_stats(make_window(values), 5);
    CHECK(s.top_lags[0] == 8);

    // Direct-summation oracle over all lags.
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= 32.0;
    double mass = 0.0;
    for (double v : values) mass += (v - mean) * (v - mean);
    double best = -2.0;
    std::size_t best_lag = 0;
    for (std::size_t lag = 1; lag < 32; ++lag) {
        double acc = 0.0;
        for (std::size_t t = 0; t + lag < 32; ++t)
            acc += (values[t] - mean) * (values[t + lag] - mean);
        if (acc / mass > best) {
            best = acc / mass;
            best_lag = lag;
        }
    }
    CHECK(best_lag == s.top_lags[0]);
}

TEST_CASE("compute_stats validates window length and lag count") {
    CHECK_THROWS_AS(prompt::compute_stats(make_window({1}), 1), std::invalid_argument);
    CHECK_THROWS_AS(prompt::compute_stats(make_window({1, 2, 3}), 3), std::invalid_argument);
    const prompt::InputStats s = prompt::compute_stats(make_window({1, 2, 3}), 2);
    CHECK(s.top_lags.size() == 2);
    for (std::size_t lag : s.top_lags) {
        CHECK(lag >= 1);
        CHECK(lag <= 2);
    }
}

TEST_CASE("render_prompt is deterministic") {
    prompt::TaskSpec task;
    task.lookback = 10;
    task.horizon = 1;
    const std::string a = prompt::render_prompt(sample_context(), task, sample_stats());
    const std::string b = prompt::render_prompt(sample_context(), task, sample_stats());
    CHECK(a == b);
    CHECK(a.find("predict the next 1 steps given the previous 10 steps") != std::string::npos);
}

TEST_CASE("changing mach changes only the context segment") {
    prompt::TaskSpec task;
    task.lookback = 10;
    task.horizon = 1;
    prompt::DatasetContext ctx = sample_context();
    const std::string a = prompt::render_prompt(ctx, task, sample_stats());
    ctx.mach = 0.6;
    const std::string b = prompt::render_prompt(ctx, task, sample_stats());
    CHECK(a != b);
    const std::string task_marker = "Task:";
    CHECK(a.substr(a.find(task_marker)) == b.substr(b.find(task_marker)));
}

TEST_CASE("rendered prompt matches the golden file") {
    prompt::TaskSpec task;
    task.lookback = 10;
    task.horizon = 1;
    const std::string rendered = prompt::render_prompt(sample_context(), task, sample_stats());
    std::ifstream golden_file("tests/golden/prompt_render.txt");
    REQUIRE_MESSAGE(golden_file.good(), "run tests from the repository root");
    std::string golden;
    std::getline(golden_file, golden);
    CHECK(rendered == golden);
}

TEST_CASE("default vocabulary is well formed") {
    const prompt::Vocab& v = prompt::default_vocab();
    CHECK(v.tokens[0] == "<unk>");
    CHECK(v.size() > 100);
    for (char c = '0'; c <= '9'; ++c) CHECK(v.id_of(std::string(1, c)) != v.unk_id);
    CHECK(v.id_of(".") != v.unk_id);
    CHECK(v.id_of("mach") != v.unk_id);
    CHECK(v.id_of("definitely-not-a-token") == v.unk_id);
}

TEST_CASE("vocab parsing rejects bad files") {
    CHECK_THROWS_AS(prompt::parse_vocab("hello\nworld\n"), std::invalid_argument);
    CHECK_THROWS_AS(prompt::parse_vocab("<unk>\ndup\ndup\n"), std::invalid_argument);
    CHECK_THROWS_AS(prompt::parse_vocab(""), std::invalid_argument);
}

TEST_CASE("tokenize splits numbers into quantized character tokens") {
    const prompt::Vocab& v = prompt::default_vocab();
    const std::vector<int> ids = prompt::tokenize("Mach 0.2", v);
    REQUIRE(ids.size() == 4);
    CHECK(ids[0] == v.id_of("mach"));
    CHECK(ids[1] == v.id_of("0"));
    CHECK(ids[2] == v.id_of("."));
    CHECK(ids[3] == v.id_of("2"));

    CHECK(prompt::tokenize("", v).empty());

    // Quantization to 4 significant digits happens before splitting.
    const std::vector<std::string> toks = prompt::normalize_tokens("12345.678");
    std::string joined;
    for (const auto& t : toks) joined += t;
    CHECK(joined == "1.235e+04");
}

TEST_CASE("detokenization reproduces the normalized token stream") {
    const prompt::Vocab& v = prompt::default_vocab();
    const std::string text = "Reynolds 5e+06, trend down; top lags 5, 4.";
    const std::vector<std::string> normalized = prompt::normalize_tokens(text);
    const std::vector<std::string> round = prompt::detokenize(prompt::tokenize(text, v), v);
    REQUIRE(normalized.size() == round.size());
    for (std::size_t i = 0; i < normalized.size(); ++i) CHECK(normalized[i] == round[i]);
}

TEST_CASE("embed_tokens gathers embedding rows") {
    Rng rng(51);
    Matrix emb(7, 4);
    for (double& v : emb.data) v = rng.normal();

    CHECK(prompt::embed_tokens({}, emb).rows == 0);
    CHECK(prompt::embed_tokens({}, emb).cols == 4);

    const Matrix one = prompt::embed_tokens({3}, emb);
    for (std::size_t j = 0; j < 4; ++j) CHECK(one(0, j) == emb(3, j));

    const Matrix many = prompt::embed_tokens({0, 6, 2}, emb);
    CHECK(many.rows == 3);
    CHECK(many.cols == 4);

    CHECK_THROWS_AS(prompt::embed_tokens({7}, emb), std::invalid_argument);
    CHECK_THROWS_AS(prompt::embed_tokens({-1}, emb), std::invalid_argument);
}

TEST_CASE("custom templates substitute every documented placeholder") {
    const std::string text =
        "ctx {case_name} {variable} {mach} {aoa} {reynolds}\n"
        "task {lookback} {horizon}\n"
        "stats {min} {max} {median} {trend} {lags}\n";
    const prompt::Template tmpl = prompt::Template::parse(text, "test");
    prompt::TaskSpec task;
    task.lookback = 8;
    task.horizon = 2;
    const std::string out = prompt::render_prompt(sample_context(), task, sample_stats(), tmpl);
    CHECK(out.find("clarky-a") != std::string::npos);
    CHECK(out.find("0.2") != std::string::npos);
    CHECK(out.find("5, 4, 6, 3, 7") != std::string::npos);
    CHECK(out.find("down") != std::string::npos);

    const prompt::Template bad = prompt::Template::parse("a {nope}\nb\nc\n", "test");
    CHECK_THROWS_AS(prompt::render_prompt(sample_context(), task, sample_stats(), bad),
                    std::invalid_argument);
}
