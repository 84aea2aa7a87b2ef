#include <doctest.h>

#include <cmath>

#include "flowrom/pod.hpp"
#include "flowrom/rng.hpp"
#include "oracles.hpp"

using namespace flowrom;

namespace {

pod::SnapshotMatrix random_snapshots(Rng& rng, std::size_t n, std::size_t steps) {
    pod::SnapshotMatrix m;
    m.data = oracles::random_matrix(rng, n, steps);
    return m;
}

// Both sides of the projection-error identity, each computed directly.
double projection_residual_sq(const pod::SnapshotMatrix& u, const pod::PodBasis& basis) {
    Matrix centered = u.data;
    if (basis.centering) {
        for (std::size_t i = 0; i < centered.rows; ++i)
            for (std::size_t j = 0; j < centered.cols; ++j)
                centered(i, j) -= basis.mean_field[i];
    }
    const Matrix coeffs = num::matmul_tn(basis.basis, centered);
    const Matrix projected = num::matmul(basis.basis, coeffs);
    const double err = num::frobenius_norm(num::subtract(centered, projected));
    return err * err;
}

double sigma_tail_sq(const pod::PodBasis& basis) {
    double acc = 0.0;
    for (std::size_t i = basis.rank; i < basis.singular_values.size(); ++i)
        acc += basis.singular_values[i] * basis.singular_values[i];
    return acc;
}

}  // namespace

TEST_CASE("assemble_snapshots lays fields out as columns") {
    const pod::SnapshotMatrix m = pod::assemble_snapshots({{1, 2, 3}, {4, 5, 6}});
    CHECK(m.nodes() == 3);
    CHECK(m.steps() == 2);
    CHECK(m.data(0, 0) == 1);
    CHECK(m.data(2, 1) == 6);
}

TEST_CASE("assemble_snapshots rejects ragged input naming the index") {
    CHECK_THROWS_WITH_AS(pod::assemble_snapshots({{1, 2}, {1, 2, 3}}),
                         doctest::Contains("field 1"), std::invalid_argument);
    CHECK_THROWS_AS(pod::assemble_snapshots({}), std::invalid_argument);
}

TEST_CASE("a repeated field gives a rank-1 snapshot matrix") {
    const pod::SnapshotMatrix m = pod::assemble_snapshots({{1, 2, 3}, {1, 2, 3}});
    const num::SvdResult r = num::svd(m.data);
    CHECK(r.sigma[0] > 0.0);
    CHECK(r.sigma[1] < 1e-12 * r.sigma[0]);
}

TEST_CASE("fit_basis with rank 1 on rank-1 data has no projection error") {
    Rng rng(21);
    Matrix data(6, 4);
    std::vector<double> profile(6);
    for (double& v : profile) v = rng.normal();
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t i = 0; i < 6; ++i) data(i, j) = profile[i] * (1.0 + double(j));
    pod::SnapshotMatrix u;
    u.data = data;
    const pod::PodBasis basis = pod::fit_basis(u, 1, /*centering=*/false);
    CHECK(projection_residual_sq(u, basis) < 1e-10);
}

TEST_CASE("projection error identity on random 20x12 with r=4") {
    Rng rng(22);
    const pod::SnapshotMatrix u = random_snapshots(rng, 20, 12);
    for (const bool centering : {true, false}) {
        const pod::PodBasis basis = pod::fit_basis(u, 4, centering);
        const double direct = projection_residual_sq(u, basis);
        const double tail = sigma_tail_sq(basis);
        CHECK(direct == doctest::Approx(tail).epsilon(1e-8));
    }
}

TEST_CASE("fit_basis rejects out-of-range ranks") {
    Rng rng(23);
    const pod::SnapshotMatrix u = random_snapshots(rng, 8, 5);
    CHECK_THROWS_AS(pod::fit_basis(u, 0), std::invalid_argument);
    CHECK_THROWS_AS(pod::fit_basis(u, 6), std::invalid_argument);
}

TEST_CASE("reduce maps the mean field to zero when centering") {
    Rng rng(24);
    const pod::SnapshotMatrix u = random_snapshots(rng, 10, 6);
    const pod::PodBasis basis = pod::fit_basis(u, 3, /*centering=*/true);
    const std::vector<double> coeffs = pod::reduce(basis, basis.mean_field);
    for (double c : coeffs) CHECK(std::abs(c) < 1e-12);
}

TEST_CASE("reduce of a basis column is a unit vector when not centering") {
    Rng rng(25);
    const pod::SnapshotMatrix u = random_snapshots(rng, 10, 6);
    const pod::PodBasis basis = pod::fit_basis(u, 3, /*centering=*/false);
    const std::vector<double> coeffs = pod::reduce(basis, basis.basis.col(1));
    CHECK(coeffs[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(coeffs[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(coeffs[2] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("reduce rejects wrong field length") {
    Rng rng(26);
    const pod::PodBasis basis = pod::fit_basis(random_snapshots(rng, 10, 6), 2);
    CHECK_THROWS_AS(pod::reduce(basis, std::vector<double>(9)), std::invalid_argument);
    CHECK_THROWS_AS(pod::reconstruct(basis, std::vector<double>(3)), std::invalid_argument);
}

TEST_CASE("reconstruct of zero coefficients returns the mean field") {
    Rng rng(27);
    const pod::SnapshotMatrix u = random_snapshots(rng, 10, 6);
    const pod::PodBasis basis = pod::fit_basis(u, 3, /*centering=*/true);
    const std::vector<double> field = pod::reconstruct(basis, {0, 0, 0});
    for (std::size_t i = 0; i < 10; ++i)
        CHECK(field[i] == doctest::Approx(basis.mean_field[i]).epsilon(1e-14));
}

TEST_CASE("reconstruct of e_k returns basis column plus mean") {
    Rng rng(28);
    const pod::SnapshotMatrix u = random_snapshots(rng, 10, 6);
    const pod::PodBasis basis = pod::fit_basis(u, 3, /*centering=*/true);
    const std::vector<double> field = pod::reconstruct(basis, {0, 1, 0});
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(field[i] ==
              doctest::Approx(basis.basis(i, 1) + basis.mean_field[i]).epsilon(1e-12));
    }
}

TEST_CASE("round-trip reconstruction error matches the sigma tail over all snapshots") {
    Rng rng(29);
    const pod::SnapshotMatrix u = random_snapshots(rng, 16, 10);
    const pod::PodBasis basis = pod::fit_basis(u, 5, /*centering=*/true);
    double direct = 0.0;
    for (std::size_t j = 0; j < u.steps(); ++j) {
        const std::vector<double> col = u.data.col(j);
        const std::vector<double> rebuilt = pod::reconstruct(basis, pod::reduce(basis, col));
        for (std::size_t i = 0; i < u.nodes(); ++i)
            direct += (rebuilt[i] - col[i]) * (rebuilt[i] - col[i]);
    }
    CHECK(direct == doctest::Approx(sigma_tail_sq(basis)).epsilon(1e-8));
}

TEST_CASE("reduce is linear when centering is off") {
    Rng rng(30);
    const pod::SnapshotMatrix u = random_snapshots(rng, 12, 8);
    const pod::PodBasis basis = pod::fit_basis(u, 4, /*centering=*/false);
    std::vector<double> a(12), b(12);
    for (double& v : a) v = rng.normal();
    for (double& v : b) v = rng.normal();
    const double alpha = 0.7, beta = -1.3;
    std::vector<double> mix(12);
    for (std::size_t i = 0; i < 12; ++i) mix[i] = alpha * a[i] + beta * b[i];
    const std::vector<double> left = pod::reduce(basis, mix);
    const std::vector<double> ra = pod::reduce(basis, a);
    const std::vector<double> rb = pod::reduce(basis, b);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(left[i] == doctest::Approx(alpha * ra[i] + beta * rb[i]).epsilon(1e-10));
}

TEST_CASE("projection error is non-increasing in rank") {
    Rng rng(31);
    const pod::SnapshotMatrix u = random_snapshots(rng, 24, 14);
    double previous = -1.0;
    for (std::size_t r = 1; r <= 14; ++r) {
        const pod::PodBasis basis = pod::fit_basis(u, r, /*centering=*/true);
        const double err = projection_residual_sq(u, basis);
        if (previous >= 0.0) CHECK(err <= previous + 1e-10);
        previous = err;
    }
}

TEST_CASE("energy spectrum values and properties") {
    pod::PodBasis basis;
    basis.singular_values = {1, 1};
    basis.rank = 1;
    const std::vector<double> two = pod::energy_spectrum(basis);
    CHECK(two[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(two[1] == doctest::Approx(1.0).epsilon(1e-14));

    basis.singular_values = {3, 0, 0};
    const std::vector<double> spiked = pod::energy_spectrum(basis);
    for (double v : spiked) CHECK(v == doctest::Approx(1.0).epsilon(1e-14));

    Rng rng(32);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> sigma(8);
        for (double& v : sigma) v = rng.uniform() + 0.01;
        std::sort(sigma.begin(), sigma.end(), std::greater<double>());
        basis.singular_values = sigma;
        const std::vector<double> energy = pod::energy_spectrum(basis);
        for (std::size_t i = 0; i + 1 < energy.size(); ++i) CHECK(energy[i] <= energy[i + 1]);
        CHECK(energy.back() == doctest::Approx(1.0).epsilon(1e-12));
    }

    basis.singular_values = {0, 0};
    CHECK_THROWS_AS(pod::energy_spectrum(basis), std::invalid_argument);
}
