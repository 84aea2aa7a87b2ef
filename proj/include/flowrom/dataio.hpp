#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowrom/pod.hpp"
#include "flowrom/prompt.hpp"

namespace flowrom::io {

// FLOWSNAP v1: magic "FLOWSNP1", then n, n_s, nx, ny as u64 little-endian
// (nx = ny = 0 when gridless), then n * n_s f64 little-endian column-major,
// one snapshot per column.
inline constexpr char kSnapshotMagic[8] = {'F', 'L', 'O', 'W', 'S', 'N', 'P', '1'};

void write_snapshots(const pod::SnapshotMatrix& m, const std::string& path);
pod::SnapshotMatrix read_snapshots(const std::string& path);

// CSV ingestion: header row of step indices, then one node per row,
// one snapshot per column.
pod::SnapshotMatrix read_snapshots_csv(const std::string& path);

// Traveling gaussian-envelope wave modes on a rectangular grid, decaying to
// the unit base flow at rate lambda. With lambda = 0 the centered snapshot
// matrix has rank at most 2K by the sine addition identity.
struct SynthWakeSpec {
    std::size_t nx = 24;
    std::size_t ny = 12;
    double lx = 1.0;
    double ly = 1.0;
    std::size_t modes = 2;             // K
    std::vector<double> amplitudes;    // per mode; defaults to 1/k
    std::vector<double> widths;        // gaussian envelope widths; defaults applied
    std::vector<double> phases;        // empty: derived from seed
    double convection = 0.25;          // c
    std::size_t steps = 64;
    double dt = 1.0;
    double decay = 0.0;                // lambda
    std::uint64_t seed = 0;

    void validate() const;
};

SynthWakeSpec load_wake_spec(const std::string& path);
pod::SnapshotMatrix synth_wake(const SynthWakeSpec& spec);

// One flow case: context fields plus the snapshot file it refers to.
struct CaseConfig {
    prompt::DatasetContext context;
    std::string snapshot_path;  // resolved relative to the config file

    pod::SnapshotMatrix load_snapshots() const;
};

CaseConfig load_case_config(const std::string& path);

void export_rmse_csv(const std::vector<double>& rmse_per_step, const std::string& path);

// Plain (P3) portable pixmap with a fixed 256-entry blue-to-red ramp;
// min/max are recorded in a sidecar "<path>.txt".
void export_heatmap(const std::vector<double>& field, std::size_t nx, std::size_t ny,
                    const std::string& path);

}  // namespace flowrom::io
