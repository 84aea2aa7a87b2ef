#include "flowrom/pod.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace flowrom::pod {

void SnapshotMatrix::validate() const {
    if (nodes() < 1) throw std::invalid_argument("SnapshotMatrix: needs at least one node");
    if (steps() < 2) throw std::invalid_argument("SnapshotMatrix: needs at least two snapshots");
    if (!data.all_finite()) throw std::invalid_argument("SnapshotMatrix: non-finite entries");
    if ((grid_nx == 0) != (grid_ny == 0))
        throw std::invalid_argument("SnapshotMatrix: grid needs both nx and ny");
    if (has_grid() && grid_nx * grid_ny != nodes()) {
        std::ostringstream msg;
        msg << "SnapshotMatrix: grid " << grid_nx << "x" << grid_ny << " does not cover "
            << nodes() << " nodes";
        throw std::invalid_argument(msg.str());
    }
}

SnapshotMatrix assemble_snapshots(const std::vector<std::vector<double>>& fields) {
    if (fields.empty()) throw std::invalid_argument("assemble_snapshots: empty sequence");
    const std::size_t n = fields[0].size();
    for (std::size_t j = 0; j < fields.size(); ++j) {
        if (fields[j].size() != n) {
            std::ostringstream msg;
            msg << "assemble_snapshots: field " << j << " has length " << fields[j].size()
                << ", expected " << n;
            throw std::invalid_argument(msg.str());
        }
    }
    SnapshotMatrix out;
    out.data = Matrix(n, fields.size());
    for (std::size_t j = 0; j < fields.size(); ++j) out.data.set_col(j, fields[j]);
    out.validate();
    return out;
}

PodBasis fit_basis(const SnapshotMatrix& u, std::size_t rank, bool centering) {
    u.validate();
    const std::size_t p = std::min(u.nodes(), u.steps());
    if (rank < 1 || rank > p) {
        std::ostringstream msg;
        msg << "fit_basis: rank " << rank << " out of range [1, " << p << "]";
        throw std::invalid_argument(msg.str());
    }

    PodBasis basis;
    basis.centering = centering;
    basis.mean_field.assign(u.nodes(), 0.0);

    Matrix work = u.data;
    if (centering) {
        for (std::size_t i = 0; i < u.nodes(); ++i) {
            double mean = 0.0;
            for (std::size_t j = 0; j < u.steps(); ++j) mean += work(i, j);
            mean /= static_cast<double>(u.steps());
            basis.mean_field[i] = mean;
            for (std::size_t j = 0; j < u.steps(); ++j) work(i, j) -= mean;
        }
    }

    num::SvdResult decomp = num::svd(work);
    basis.singular_values = std::move(decomp.sigma);
    basis.rank = rank;
    basis.basis = Matrix(u.nodes(), rank);
    for (std::size_t i = 0; i < u.nodes(); ++i)
        for (std::size_t j = 0; j < rank; ++j) basis.basis(i, j) = decomp.v(i, j);
    return basis;
}

std::vector<double> reduce(const PodBasis& basis, const std::vector<double>& field) {
    if (field.size() != basis.nodes()) {
        throw std::invalid_argument("reduce: field length " + std::to_string(field.size()) +
                                    " does not match " + std::to_string(basis.nodes()) + " nodes");
    }
    std::vector<double> coeffs(basis.rank, 0.0);
    for (std::size_t i = 0; i < basis.nodes(); ++i) {
        const double v = basis.centering ? field[i] - basis.mean_field[i] : field[i];
        if (v == 0.0) continue;
        for (std::size_t j = 0; j < basis.rank; ++j) coeffs[j] += basis.basis(i, j) * v;
    }
    return coeffs;
}

std::vector<double> reconstruct(const PodBasis& basis, const std::vector<double>& coeffs) {
    if (coeffs.size() != basis.rank) {
        throw std::invalid_argument("reconstruct: got " + std::to_string(coeffs.size()) +
                                    " coefficients for rank " + std::to_string(basis.rank));
    }
    std::vector<double> field(basis.nodes(), 0.0);
    for (std::size_t i = 0; i < basis.nodes(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < basis.rank; ++j) acc += basis.basis(i, j) * coeffs[j];
        field[i] = basis.centering ? acc + basis.mean_field[i] : acc;
    }
    return field;
}

ReducedSeries reduce_series(const PodBasis& basis, const SnapshotMatrix& snapshots) {
    snapshots.validate();
    if (snapshots.nodes() != basis.nodes()) {
        throw std::invalid_argument("reduce_series: snapshot nodes " +
                                    std::to_string(snapshots.nodes()) + " do not match basis " +
                                    std::to_string(basis.nodes()));
    }
    ReducedSeries series;
    series.coeffs = Matrix(basis.rank, snapshots.steps());
    for (std::size_t j = 0; j < snapshots.steps(); ++j) {
        const std::vector<double> coeffs = reduce(basis, snapshots.data.col(j));
        for (std::size_t i = 0; i < basis.rank; ++i) series.coeffs(i, j) = coeffs[i];
    }
    return series;
}

SnapshotMatrix reconstruct_series(const PodBasis& basis, const ReducedSeries& series,
                                  std::size_t grid_nx, std::size_t grid_ny) {
    if (series.channels() != basis.rank) {
        throw std::invalid_argument("reconstruct_series: " + std::to_string(series.channels()) +
                                    " channels for rank " + std::to_string(basis.rank));
    }
    SnapshotMatrix out;
    out.data = Matrix(basis.nodes(), series.steps());
    out.grid_nx = grid_nx;
    out.grid_ny = grid_ny;
    for (std::size_t j = 0; j < series.steps(); ++j) {
        out.data.set_col(j, reconstruct(basis, series.coeffs.col(j)));
    }
    out.validate();
    return out;
}

std::vector<double> energy_spectrum(const PodBasis& basis) {
    double total = 0.0;
    for (double s : basis.singular_values) total += s * s;
    if (total <= 0.0) throw std::invalid_argument("energy_spectrum: all singular values are zero");
    std::vector<double> out(basis.singular_values.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        acc += basis.singular_values[i] * basis.singular_values[i];
        out[i] = acc / total;
    }
    return out;
}

}  // namespace flowrom::pod
