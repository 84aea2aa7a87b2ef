#pragma once

#include <cstddef>
#include <vector>

#include "flowrom/matrix.hpp"

namespace flowrom::pod {

// Field states at successive time steps, one snapshot per column.
struct SnapshotMatrix {
    Matrix data;               // nodes x steps
    std::size_t grid_nx = 0;   // 0 means gridless
    std::size_t grid_ny = 0;

    std::size_t nodes() const { return data.rows; }
    std::size_t steps() const { return data.cols; }
    bool has_grid() const { return grid_nx > 0 && grid_ny > 0; }
    void validate() const;
};

SnapshotMatrix assemble_snapshots(const std::vector<std::vector<double>>& fields);

// Truncated POD basis. All singular values are retained so the projection
// error identity and energy spectra stay computable after truncation.
struct PodBasis {
    Matrix basis;                          // nodes x rank, orthonormal columns
    std::vector<double> singular_values;   // all min(n, n_s) values
    std::size_t rank = 0;
    std::vector<double> mean_field;        // subtracted column mean (zeros when centering off)
    bool centering = true;

    std::size_t nodes() const { return basis.rows; }
};

// Reduced coordinates over time, one channel per basis vector.
struct ReducedSeries {
    Matrix coeffs;  // channels x steps

    std::size_t channels() const { return coeffs.rows; }
    std::size_t steps() const { return coeffs.cols; }
};

PodBasis fit_basis(const SnapshotMatrix& u, std::size_t rank, bool centering = true);

std::vector<double> reduce(const PodBasis& basis, const std::vector<double>& field);
std::vector<double> reconstruct(const PodBasis& basis, const std::vector<double>& coeffs);

ReducedSeries reduce_series(const PodBasis& basis, const SnapshotMatrix& snapshots);
SnapshotMatrix reconstruct_series(const PodBasis& basis, const ReducedSeries& series,
                                  std::size_t grid_nx = 0, std::size_t grid_ny = 0);

// Entry k is the energy fraction captured by the first k+1 modes.
std::vector<double> energy_spectrum(const PodBasis& basis);

}  // namespace flowrom::pod
