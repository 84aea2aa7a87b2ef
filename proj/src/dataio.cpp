#include "flowrom/dataio.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "flowrom/rng.hpp"

namespace flowrom::io {

namespace {

constexpr double kPi = 3.14159265358979323846;

void put_u64(std::ostream& out, std::uint64_t v) {
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(bytes, 8);
}

void put_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

std::uint64_t take_u64(const std::string& bytes, std::uint64_t& offset, const std::string& path,
                       const char* what) {
    if (offset + 8 > bytes.size()) {
        throw std::runtime_error(path + ": truncated while reading " + what + " at byte offset " +
                                 std::to_string(offset) + " (file has " +
                                 std::to_string(bytes.size()) + " bytes)");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
    offset += 8;
    return v;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string dirname_of(const std::string& path) {
    const std::size_t slash = path.find_last_of('/');
    if (slash == std::string::npos) return ".";
    return path.substr(0, slash);
}

}  // namespace

void write_snapshots(const pod::SnapshotMatrix& m, const std::string& path) {
    m.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("write_snapshots: cannot open " + path);
    out.write(kSnapshotMagic, 8);
    put_u64(out, m.nodes());
    put_u64(out, m.steps());
    put_u64(out, m.grid_nx);
    put_u64(out, m.grid_ny);
    for (std::size_t j = 0; j < m.steps(); ++j)
        for (std::size_t i = 0; i < m.nodes(); ++i) put_f64(out, m.data(i, j));
    if (!out) throw std::runtime_error("write_snapshots: write failed for " + path);
}

pod::SnapshotMatrix read_snapshots(const std::string& path) {
    const std::string bytes = read_file(path);
    std::uint64_t offset = 0;
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSnapshotMagic, 8) != 0) {
        throw std::runtime_error(path + ": bad magic at byte offset 0, expected \"FLOWSNP1\"");
    }
    offset = 8;
    const std::uint64_t n = take_u64(bytes, offset, path, "node count");
    const std::uint64_t n_s = take_u64(bytes, offset, path, "step count");
    const std::uint64_t nx = take_u64(bytes, offset, path, "grid nx");
    const std::uint64_t ny = take_u64(bytes, offset, path, "grid ny");
    if (n == 0 || n_s < 2) {
        throw std::runtime_error(path + ": invalid dimensions n=" + std::to_string(n) +
                                 " n_s=" + std::to_string(n_s) +
                                 " (need n >= 1, n_s >= 2) at byte offset 8");
    }
    if (n > (1ULL << 32) || n_s > (1ULL << 32) || n * n_s > (1ULL << 33)) {
        throw std::runtime_error(path + ": dimension overflow n=" + std::to_string(n) +
                                 " n_s=" + std::to_string(n_s) + " at byte offset 8");
    }
    const std::uint64_t expected = 40 + n * n_s * 8;
    if (bytes.size() != expected) {
        throw std::runtime_error(path + ": payload size mismatch, expected " +
                                 std::to_string(expected) + " bytes, file has " +
                                 std::to_string(bytes.size()) + " (at byte offset " +
                                 std::to_string(offset) + ")");
    }
    pod::SnapshotMatrix m;
    m.data = Matrix(static_cast<std::size_t>(n), static_cast<std::size_t>(n_s));
    m.grid_nx = static_cast<std::size_t>(nx);
    m.grid_ny = static_cast<std::size_t>(ny);
    for (std::uint64_t j = 0; j < n_s; ++j) {
        for (std::uint64_t i = 0; i < n; ++i) {
            const std::uint64_t bits = take_u64(bytes, offset, path, "payload");
            double v;
            std::memcpy(&v, &bits, 8);
            m.data(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = v;
        }
    }
    m.validate();
    return m;
}

pod::SnapshotMatrix read_snapshots_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_snapshots_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    std::size_t cols = 1;
    for (char c : line)
        if (c == ',') ++cols;

    std::vector<std::vector<double>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                         ": not a number: \"" + cell + "\"");
            }
        }
        if (row.size() != cols) {
            throw std::runtime_error(path + ": line " + std::to_string(line_no) + " has " +
                                     std::to_string(row.size()) + " cells, header has " +
                                     std::to_string(cols));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error(path + ": no data rows");
    pod::SnapshotMatrix m;
    m.data = Matrix(rows.size(), cols);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols; ++j) m.data(i, j) = rows[i][j];
    m.validate();
    return m;
}

void SynthWakeSpec::validate() const {
    if (nx < 4 || ny < 4) throw std::invalid_argument("SynthWakeSpec: grid must be at least 4x4");
    if (modes < 1) throw std::invalid_argument("SynthWakeSpec: need at least one mode");
    if (!(dt > 0.0)) throw std::invalid_argument("SynthWakeSpec: dt must be positive");
    if (!(lx > 0.0) || !(ly > 0.0)) throw std::invalid_argument("SynthWakeSpec: domain must be positive");
    if (steps < 2) throw std::invalid_argument("SynthWakeSpec: need at least two steps");
    if (decay < 0.0) throw std::invalid_argument("SynthWakeSpec: decay must be non-negative");
    auto check_len = [&](const std::vector<double>& v, const char* name) {
        if (!v.empty() && v.size() != modes) {
            throw std::invalid_argument(std::string("SynthWakeSpec: ") + name + " has " +
                                        std::to_string(v.size()) + " entries for " +
                                        std::to_string(modes) + " modes");
        }
    };
    check_len(amplitudes, "amplitudes");
    check_len(widths, "widths");
    check_len(phases, "phases");
}

pod::SnapshotMatrix synth_wake(const SynthWakeSpec& spec) {
    spec.validate();
    std::vector<double> amp = spec.amplitudes;
    std::vector<double> width = spec.widths;
    std::vector<double> phase = spec.phases;
    if (amp.empty()) {
        for (std::size_t k = 1; k <= spec.modes; ++k) amp.push_back(1.0 / static_cast<double>(k));
    }
    if (width.empty()) {
        for (std::size_t k = 1; k <= spec.modes; ++k)
            width.push_back(spec.ly * (0.15 + 0.05 * static_cast<double>(k)));
    }
    if (phase.empty()) {
        Rng rng(splitmix64(spec.seed ^ 0x77616b65ULL));
        for (std::size_t k = 0; k < spec.modes; ++k) phase.push_back(2.0 * kPi * rng.uniform());
    }

    pod::SnapshotMatrix m;
    m.data = Matrix(spec.nx * spec.ny, spec.steps);
    m.grid_nx = spec.nx;
    m.grid_ny = spec.ny;
    for (std::size_t step = 0; step < spec.steps; ++step) {
        const double t = static_cast<double>(step) * spec.dt;
        const double envelope = std::exp(-spec.decay * t);
        for (std::size_t iy = 0; iy < spec.ny; ++iy) {
            const double y = spec.ly * static_cast<double>(iy) / static_cast<double>(spec.ny);
            for (std::size_t ix = 0; ix < spec.nx; ++ix) {
                const double x = spec.lx * static_cast<double>(ix) / static_cast<double>(spec.nx);
                double value = 1.0;
                for (std::size_t k = 0; k < spec.modes; ++k) {
                    const double dy = y - 0.5 * spec.ly;
                    const double gauss = std::exp(-dy * dy / (width[k] * width[k]));
                    const double arg = 2.0 * kPi * static_cast<double>(k + 1) *
                                           (x - spec.convection * t) / spec.lx +
                                       phase[k];
                    value += envelope * amp[k] * gauss * std::sin(arg);
                }
                m.data(iy * spec.nx + ix, step) = value;
            }
        }
    }
    return m;
}

namespace {

std::vector<std::pair<std::string, std::string>> parse_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                     ": expected key=value, got \"" + line + "\"");
        }
        out.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return out;
}

double parse_double(const std::string& path, const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error(path + ": key \"" + key + "\": not a number: \"" + value + "\"");
    }
}

std::size_t parse_count(const std::string& path, const std::string& key, const std::string& value) {
    const double v = parse_double(path, key, value);
    if (v < 0.0 || v != std::floor(v)) {
        throw std::runtime_error(path + ": key \"" + key + "\": not a non-negative integer: \"" +
                                 value + "\"");
    }
    return static_cast<std::size_t>(v);
}

std::vector<double> parse_list(const std::string& path, const std::string& key,
                               const std::string& value) {
    std::vector<double> out;
    std::stringstream ss(value);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(parse_double(path, key, cell));
    return out;
}

}  // namespace

SynthWakeSpec load_wake_spec(const std::string& path) {
    SynthWakeSpec spec;
    for (const auto& [key, value] : parse_kv_file(path)) {
        if (key == "nx") spec.nx = parse_count(path, key, value);
        else if (key == "ny") spec.ny = parse_count(path, key, value);
        else if (key == "lx") spec.lx = parse_double(path, key, value);
        else if (key == "ly") spec.ly = parse_double(path, key, value);
        else if (key == "modes") spec.modes = parse_count(path, key, value);
        else if (key == "amplitudes") spec.amplitudes = parse_list(path, key, value);
        else if (key == "widths") spec.widths = parse_list(path, key, value);
        else if (key == "phases") spec.phases = parse_list(path, key, value);
        else if (key == "convection") spec.convection = parse_double(path, key, value);
        else if (key == "steps") spec.steps = parse_count(path, key, value);
        else if (key == "dt") spec.dt = parse_double(path, key, value);
        else if (key == "decay") spec.decay = parse_double(path, key, value);
        else if (key == "seed") spec.seed = static_cast<std::uint64_t>(parse_count(path, key, value));
        else throw std::runtime_error(path + ": unknown key \"" + key + "\"");
    }
    spec.validate();
    return spec;
}

pod::SnapshotMatrix CaseConfig::load_snapshots() const {
    if (snapshot_path.size() > 4 && snapshot_path.substr(snapshot_path.size() - 4) == ".csv") {
        return read_snapshots_csv(snapshot_path);
    }
    return read_snapshots(snapshot_path);
}

CaseConfig load_case_config(const std::string& path) {
    CaseConfig cfg;
    bool have_case = false, have_variable = false, have_mach = false, have_aoa = false,
         have_reynolds = false, have_snapshots = false;
    for (const auto& [key, value] : parse_kv_file(path)) {
        if (key == "case_name") {
            cfg.context.case_name = value;
            have_case = true;
        } else if (key == "variable") {
            cfg.context.variable = value;
            have_variable = true;
        } else if (key == "mach") {
            cfg.context.mach = parse_double(path, key, value);
            have_mach = true;
        } else if (key == "aoa") {
            cfg.context.aoa = parse_double(path, key, value);
            have_aoa = true;
        } else if (key == "reynolds") {
            cfg.context.reynolds = parse_double(path, key, value);
            have_reynolds = true;
        } else if (key == "description") {
            cfg.context.description = value;
        } else if (key == "snapshots") {
            cfg.snapshot_path = value.size() > 0 && value[0] == '/'
                                    ? value
                                    : dirname_of(path) + "/" + value;
            have_snapshots = true;
        } else {
            throw std::runtime_error(path + ": unknown key \"" + key + "\"");
        }
    }
    const char* missing = nullptr;
    if (!have_case) missing = "case_name";
    else if (!have_variable) missing = "variable";
    else if (!have_mach) missing = "mach";
    else if (!have_aoa) missing = "aoa";
    else if (!have_reynolds) missing = "reynolds";
    else if (!have_snapshots) missing = "snapshots";
    if (missing != nullptr)
        throw std::runtime_error(path + ": missing required key \"" + std::string(missing) + "\"");
    cfg.context.validate();
    std::ifstream check(cfg.snapshot_path);
    if (!check) {
        throw std::runtime_error(path + ": snapshot file \"" + cfg.snapshot_path +
                                 "\" does not exist");
    }
    return cfg;
}

void export_rmse_csv(const std::vector<double>& rmse_per_step, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);  // binary keeps LF endings
    if (!out) throw std::runtime_error("export_rmse_csv: cannot open " + path);
    out << "step,rmse\n";
    char buf[64];
    for (std::size_t i = 0; i < rmse_per_step.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i + 1, rmse_per_step[i]);
        out << buf;
    }
    if (!out) throw std::runtime_error("export_rmse_csv: write failed for " + path);
}

namespace {

// Fixed 256-entry blue -> white -> red ramp.
void ramp_color(std::size_t idx, int rgb[3]) {
    if (idx < 128) {
        rgb[0] = static_cast<int>(2 * idx);
        rgb[1] = static_cast<int>(2 * idx);
        rgb[2] = 255;
    } else {
        rgb[0] = 255;
        rgb[1] = static_cast<int>(2 * (255 - idx));
        rgb[2] = static_cast<int>(2 * (255 - idx));
    }
}

}  // namespace

void export_heatmap(const std::vector<double>& field, std::size_t nx, std::size_t ny,
                    const std::string& path) {
    if (nx == 0 || ny == 0) throw std::invalid_argument("export_heatmap: missing grid");
    if (field.size() != nx * ny) {
        throw std::invalid_argument("export_heatmap: field length " +
                                    std::to_string(field.size()) + " does not match grid " +
                                    std::to_string(nx) + "x" + std::to_string(ny));
    }
    double lo = field[0], hi = field[0];
    for (double v : field) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi - lo;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("export_heatmap: cannot open " + path);
    out << "P3\n" << nx << " " << ny << "\n255\n";
    for (std::size_t iy = 0; iy < ny; ++iy) {
        for (std::size_t ix = 0; ix < nx; ++ix) {
            const double v = field[iy * nx + ix];
            std::size_t idx = 0;
            if (span > 0.0) {
                const double rel = (v - lo) / span;
                idx = static_cast<std::size_t>(std::min(255.0, std::max(0.0, rel * 255.0)));
            }
            int rgb[3];
            ramp_color(idx, rgb);
            out << rgb[0] << " " << rgb[1] << " " << rgb[2];
            out << (ix + 1 == nx ? "\n" : " ");
        }
    }
    if (!out) throw std::runtime_error("export_heatmap: write failed for " + path);

    std::ofstream sidecar(path + ".txt", std::ios::binary | std::ios::trunc);
    if (!sidecar) throw std::runtime_error("export_heatmap: cannot open " + path + ".txt");
    char buf[128];
    std::snprintf(buf, sizeof(buf), "min=%.17g\nmax=%.17g\n", lo, hi);
    sidecar << buf;
}

}  // namespace flowrom::io
