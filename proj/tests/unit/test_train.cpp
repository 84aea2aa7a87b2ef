#include <doctest.h>

#include <cmath>
#include <map>

#include "flowrom/rng.hpp"
#include "flowrom/train.hpp"
#include "oracles.hpp"

using namespace flowrom;

TEST_CASE("mse_loss basics and oracle") {
    CHECK(train::mse_loss({1, 2, 3}, {1, 2, 3}) == 0.0);
    CHECK(train::mse_loss({0, 0}, {1, 1}) == doctest::Approx(1.0));
    CHECK_THROWS_AS(train::mse_loss({1}, {1, 2}), std::invalid_argument);

    Rng rng(91);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> a(17), b(17);
        for (double& v : a) v = rng.normal();
        for (double& v : b) v = rng.normal();
        double acc = 0.0;
        for (std::size_t i = 0; i < 17; ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
        CHECK(train::mse_loss(a, b) == doctest::Approx(acc / 17.0).epsilon(1e-14));
    }
}

TEST_CASE("adam leaves parameters alone on zero gradients") {
    train::ParamStore store;
    store.add("w", Matrix(2, 2, 1.5), true);
    std::map<std::string, Matrix> grads;
    grads.emplace("w", Matrix(2, 2));
    store.adam_step(grads, train::AdamConfig{});
    for (double v : store.value("w").data) CHECK(v == 1.5);
    CHECK(store.step() == 1);
}

TEST_CASE("first adam step moves a scalar by about the learning rate") {
    train::ParamStore store;
    store.add("w", Matrix(1, 1, {2.0}), true);
    std::map<std::string, Matrix> grads;
    grads.emplace("w", Matrix(1, 1, {1.0}));
    train::AdamConfig config;
    config.learning_rate = 1e-3;
    store.adam_step(grads, config);
    CHECK(store.value("w")(0, 0) == doctest::Approx(2.0 - 1e-3).epsilon(1e-7));
}

TEST_CASE("adam matches an independently written update loop bit for bit") {
    Rng rng(92);
    train::ParamStore store;
    Matrix w0 = oracles::random_matrix(rng, 3, 2);
    store.add("w", w0, true);
    train::AdamConfig config;

    // Test-side reimplementation with its own state.
    Matrix w = w0, m(3, 2), v(3, 2);
    for (int step = 1; step <= 7; ++step) {
        const Matrix g = oracles::random_matrix(rng, 3, 2);
        std::map<std::string, Matrix> grads;
        grads.emplace("w", g);
        store.adam_step(grads, config);

        for (std::size_t i = 0; i < w.data.size(); ++i) {
            m.data[i] = config.beta1 * m.data[i] + (1.0 - config.beta1) * g.data[i];
            v.data[i] = config.beta2 * v.data[i] + (1.0 - config.beta2) * g.data[i] * g.data[i];
            const double mh = m.data[i] / (1.0 - std::pow(config.beta1, step));
            const double vh = v.data[i] / (1.0 - std::pow(config.beta2, step));
            w.data[i] -= config.learning_rate * mh / (std::sqrt(vh) + config.eps);
        }
        CHECK(store.value("w").data == w.data);
    }
}

TEST_CASE("adam rejects missing and extra gradients, and frozen targets") {
    train::ParamStore store;
    store.add("w", Matrix(1, 1), true);
    store.add("frozen", Matrix(1, 1), false);

    std::map<std::string, Matrix> empty;
    CHECK_THROWS_WITH_AS(store.adam_step(empty, train::AdamConfig{}), doctest::Contains("w"),
                         std::invalid_argument);

    std::map<std::string, Matrix> extra;
    extra.emplace("w", Matrix(1, 1));
    extra.emplace("frozen", Matrix(1, 1));
    CHECK_THROWS_WITH_AS(store.adam_step(extra, train::AdamConfig{}),
                         doctest::Contains("frozen"), std::invalid_argument);
}

TEST_CASE("param store partitions and container round trip") {
    Rng rng(93);
    train::ParamStore store;
    store.add("a", oracles::random_matrix(rng, 2, 3), true);
    store.add("b", oracles::random_matrix(rng, 1, 4), false);
    CHECK(store.trainable_names() == std::vector<std::string>{"a"});
    CHECK_THROWS_AS(store.add("a", Matrix(1, 1), true), std::invalid_argument);

    std::map<std::string, Matrix> grads;
    grads.emplace("a", oracles::random_matrix(rng, 2, 3));
    store.adam_step(grads, train::AdamConfig{});

    const weights::Container c = store.to_container();
    CHECK(c.has("opt.a.m"));
    CHECK(!c.has("opt.b.m"));
    const train::ParamStore back = train::ParamStore::from_container(c);
    CHECK(back.trainable("a"));
    CHECK(!back.trainable("b"));
    CHECK(back.step() == 1);
    // f32 rounding applies on both paths identically.
    const weights::Container c2 = back.to_container();
    CHECK(c.get("a").values.size() == c2.get("a").values.size());
}

TEST_CASE("variant names round trip") {
    for (const char* name : {"full", "no_prompt", "shuffled_prompt", "linear_reprogram"}) {
        CHECK(train::variant_name(train::parse_variant(name)) == std::string(name));
    }
    CHECK_THROWS_AS(train::parse_variant("bogus"), std::invalid_argument);
}
