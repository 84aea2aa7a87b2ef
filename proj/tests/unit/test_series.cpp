#include <doctest.h>

#include <cmath>

#include "flowrom/rng.hpp"
#include "flowrom/series.hpp"
#include "oracles.hpp"

using namespace flowrom;

namespace {

series::Window make_window(std::vector<double> values) {
    series::Window w;
    w.values = std::move(values);
    return w;
}

}  // namespace

TEST_CASE("instance_norm standardizes a simple window") {
    const auto [out, stats] = series::instance_norm(make_window({1, 2, 3}));
    CHECK(stats.mean == doctest::Approx(2.0));
    CHECK(out.values[1] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(out.values[0] == doctest::Approx(-out.values[2]).epsilon(1e-15));
    // a = 1/std with the population deviation.
    CHECK(out.values[2] == doctest::Approx(1.0 / stats.std_dev).epsilon(1e-12));
    double mean = 0.0;
    for (double v : out.values) mean += v;
    CHECK(std::abs(mean / 3.0) < 1e-12);
}

TEST_CASE("instance_norm maps constant windows to zeros via eps") {
    const auto [out, stats] = series::instance_norm(make_window({5, 5, 5}));
    for (double v : out.values) CHECK(v == 0.0);
    CHECK(stats.mean == 5.0);
    CHECK(stats.std_dev == 0.0);
    CHECK(stats.eps == series::kNormEps);
    const std::vector<double> back = series::instance_denorm(out.values, stats);
    for (double v : back) CHECK(v == 5.0);
}

TEST_CASE("instance_norm gives unit variance for non-degenerate windows") {
    Rng rng(41);
    std::vector<double> values(64);
    for (double& v : values) v = rng.normal(2.0, 3.0);
    const auto [out, stats] = series::instance_norm(make_window(values));
    double mean = 0.0;
    for (double v : out.values) mean += v;
    mean /= 64.0;
    double var = 0.0;
    for (double v : out.values) var += (v - mean) * (v - mean);
    var /= 64.0;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(std::abs(var - 1.0) < 1e-10);
}

TEST_CASE("normalization round trip is exact on 1000 random windows") {
    Rng rng(42);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t len = 2 + rng.uniform_index(14);
        std::vector<double> values(len);
        const double scale = std::pow(10.0, rng.uniform() * 6.0 - 3.0);
        for (double& v : values) v = scale * rng.normal();
        const auto [out, stats] = series::instance_norm(make_window(values));
        const std::vector<double> back = series::instance_denorm(out.values, stats);
        for (std::size_t i = 0; i < len; ++i) {
            CHECK(std::abs(back[i] - values[i]) <= 1e-12 * std::max(1.0, std::abs(values[i])));
        }
    }
}

TEST_CASE("normalizing an already-normalized window is idempotent up to eps") {
    Rng rng(43);
    std::vector<double> values(32);
    for (double& v : values) v = rng.normal(0.0, 4.0);
    const auto [once, stats1] = series::instance_norm(make_window(values));
    const auto [twice, stats2] = series::instance_norm(once);
    for (std::size_t i = 0; i < values.size(); ++i)
        CHECK(std::abs(twice.values[i] - once.values[i]) < 1e-10);
}

TEST_CASE("patch count formula") {
    CHECK(series::patch_count(30, 16, 8) == 2);
    CHECK(series::patch_count(10, 4, 2) == 4);
    CHECK(series::patch_count(7, 7, 3) == 1);
    // Exhaustive check against direct enumeration for small sizes.
    for (std::size_t t = 1; t <= 12; ++t) {
        for (std::size_t l = 1; l <= t; ++l) {
            for (std::size_t s = 1; s <= 4; ++s) {
                std::size_t direct = 0;
                for (std::size_t start = 0; start + l <= t; start += s) ++direct;
                CHECK(series::patch_count(t, l, s) == direct);
            }
        }
    }
    CHECK_THROWS_AS(series::patch_count(4, 5, 1), std::invalid_argument);
    CHECK_THROWS_AS(series::patch_count(4, 2, 0), std::invalid_argument);
}

TEST_CASE("make_patches slices overlapping windows element-wise") {
    series::Window w = make_window({0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    const series::PatchBatch batch = series::make_patches(w, 4, 2);
    REQUIRE(batch.count() == 4);
    for (std::size_t p = 0; p < 4; ++p)
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(batch.patches(p, i) == doctest::Approx(double(p * 2 + i)));

    const series::PatchBatch single = series::make_patches(w, 10, 3);
    REQUIRE(single.count() == 1);
    for (std::size_t i = 0; i < 10; ++i) CHECK(single.patches(0, i) == w.values[i]);
}

TEST_CASE("embed_patches is the affine map it claims to be") {
    series::Window w = make_window({1, 2, 3, 4, 5, 6});
    const series::PatchBatch batch = series::make_patches(w, 3, 1);

    const Matrix zero(3, 5);
    const Matrix zeros = series::embed_patches(batch, zero, std::vector<double>(5, 0.0));
    for (double v : zeros.data) CHECK(v == 0.0);

    const Matrix pass = series::embed_patches(batch, Matrix::identity(3),
                                              std::vector<double>(3, 0.0));
    CHECK(oracles::max_abs_diff(pass, batch.patches) == 0.0);

    Rng rng(44);
    const Matrix weights = oracles::random_matrix(rng, 3, 5);
    std::vector<double> bias(5);
    for (double& b : bias) b = rng.normal();
    const Matrix out = series::embed_patches(batch, weights, bias);
    const Matrix oracle = oracles::slow_matmul(batch.patches, weights);
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j)
            CHECK(out(i, j) == doctest::Approx(oracle(i, j) + bias[j]).epsilon(1e-13));

    CHECK_THROWS_AS(series::embed_patches(batch, Matrix(4, 5), std::vector<double>(5)),
                    std::invalid_argument);
}

TEST_CASE("channels are processed independently") {
    Rng rng(45);
    series::Window a = make_window({1, 4, 2, 8, 5, 7});
    series::Window b = make_window({3, 3, 9, 1, 2, 6});
    a.channel = 0;
    b.channel = 1;
    const auto [na, sa] = series::instance_norm(a);
    const auto [nb, sb] = series::instance_norm(b);
    // Swapping processing order cannot change per-channel results.
    const auto [nb2, sb2] = series::instance_norm(b);
    const auto [na2, sa2] = series::instance_norm(a);
    CHECK(na.values == na2.values);
    CHECK(nb.values == nb2.values);
    CHECK(sa.mean == sa2.mean);
    CHECK(sb.std_dev == sb2.std_dev);
}
