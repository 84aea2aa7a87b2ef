#include "flowrom/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace flowrom {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != rows * cols) {
        std::ostringstream msg;
        msg << "Matrix: " << rows << "x" << cols << " needs " << rows * cols
            << " values, got " << data.size();
        throw std::invalid_argument(msg.str());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows_init) {
    const std::size_t r = rows_init.size();
    const std::size_t c = r == 0 ? 0 : rows_init.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows_init) {
        if (row.size() != c) throw std::invalid_argument("Matrix::from_rows: ragged rows");
        std::size_t j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

Matrix Matrix::row_vector(const std::vector<double>& v) {
    Matrix m(1, v.size());
    m.data = v;
    return m;
}

Matrix Matrix::column_vector(const std::vector<double>& v) {
    Matrix m(v.size(), 1);
    m.data = v;
    return m;
}

std::string Matrix::shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

std::vector<double> Matrix::row(std::size_t i) const {
    return std::vector<double>(data.begin() + static_cast<std::ptrdiff_t>(i * cols),
                               data.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols));
}

std::vector<double> Matrix::col(std::size_t j) const {
    std::vector<double> out(rows);
    for (std::size_t i = 0; i < rows; ++i) out[i] = (*this)(i, j);
    return out;
}

void Matrix::set_col(std::size_t j, const std::vector<double>& v) {
    if (v.size() != rows) throw std::invalid_argument("Matrix::set_col: length mismatch");
    for (std::size_t i = 0; i < rows; ++i) (*this)(i, j) = v[i];
}

bool Matrix::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

namespace num {

namespace {

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
    std::ostringstream msg;
    msg << op << ": shape mismatch (" << a.shape_str() << " vs " << b.shape_str() << ")";
    throw std::invalid_argument(msg.str());
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) shape_error("matmul", a, b);
    Matrix c(a.rows, b.cols);
    const std::size_t n = b.cols;
    // ikj order keeps the inner loop contiguous on b and c.
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* __restrict arow = a.data.data() + i * a.cols;
        double* __restrict crow = c.data.data() + i * n;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            const double* __restrict brow = b.data.data() + k * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) shape_error("matmul_nt", a, b);
    Matrix c(a.rows, b.rows);
    const std::size_t len = a.cols;
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* __restrict arow = a.data.data() + i * len;
        double* __restrict crow = c.data.data() + i * b.rows;
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* __restrict brow = b.data.data() + j * len;
            // Four lanes so the reduction vectorizes with fixed reassociation.
            double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
            std::size_t k = 0;
            for (; k + 4 <= len; k += 4) {
                acc0 += arow[k] * brow[k];
                acc1 += arow[k + 1] * brow[k + 1];
                acc2 += arow[k + 2] * brow[k + 2];
                acc3 += arow[k + 3] * brow[k + 3];
            }
            double acc = (acc0 + acc1) + (acc2 + acc3);
            for (; k < len; ++k) acc += arow[k] * brow[k];
            crow[j] = acc;
        }
    }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) shape_error("matmul_tn", a, b);
    Matrix c(a.cols, b.cols);
    const std::size_t n = b.cols;
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* __restrict arow = a.data.data() + k * a.cols;
        const double* __restrict brow = b.data.data() + k * n;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            double* __restrict crow = c.data.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aki * brow[j];
        }
    }
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) shape_error("add", a, b);
    Matrix c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
    return c;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) shape_error("subtract", a, b);
    Matrix c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.data[i];
    return c;
}

Matrix scale(const Matrix& a, double s) {
    Matrix c = a;
    for (double& v : c.data) v *= s;
    return c;
}

double frobenius_norm(const Matrix& a) {
    double acc = 0.0;
    for (double v : a.data) acc += v * v;
    return std::sqrt(acc);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

namespace {

constexpr double kJacobiTol = 1e-14;  // relative off-diagonal Gram mass
constexpr int kJacobiMaxSweeps = 100;

double col_dot(const Matrix& m, std::size_t j, std::size_t k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) acc += m(i, j) * m(i, k);
    return acc;
}

void rotate_cols(Matrix& m, std::size_t j, std::size_t k, double c, double s) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double mj = m(i, j);
        const double mk = m(i, k);
        m(i, j) = c * mj - s * mk;
        m(i, k) = s * mj + c * mk;
    }
}

// Deterministic orthonormal completion for null columns: canonical basis
// vectors, orthogonalized twice against every other column of v.
void complete_column(Matrix& v, std::size_t col) {
    for (std::size_t cand = 0; cand < v.rows; ++cand) {
        std::vector<double> x(v.rows, 0.0);
        x[cand] = 1.0;
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t j = 0; j < v.cols; ++j) {
                if (j == col) continue;
                double proj = 0.0;
                for (std::size_t i = 0; i < v.rows; ++i) proj += x[i] * v(i, j);
                for (std::size_t i = 0; i < v.rows; ++i) x[i] -= proj * v(i, j);
            }
        }
        double norm = std::sqrt(dot(x, x));
        if (norm > 0.5) {
            for (std::size_t i = 0; i < v.rows; ++i) v(i, col) = x[i] / norm;
            return;
        }
    }
    throw std::runtime_error("svd: failed to complete orthonormal basis");
}

}  // namespace

// One-sided Jacobi (Hestenes). Columns of a working copy are rotated until
// mutually orthogonal; their norms are the singular values and the
// accumulated rotations form the right singular vectors.
SvdResult svd(const Matrix& a) {
    if (a.rows == 0 || a.cols == 0) throw std::invalid_argument("svd: empty matrix");
    if (!a.all_finite()) throw std::invalid_argument("svd: non-finite entries");
    if (a.rows < a.cols) {
        SvdResult t = svd(transpose(a));
        return SvdResult{std::move(t.w), std::move(t.sigma), std::move(t.v)};
    }

    const std::size_t n = a.cols;
    Matrix u = a;
    Matrix w = Matrix::identity(n);

    // Columns whose norm sits at rounding noise are excluded from the sweep;
    // their direction is meaningless and rotating them never converges.
    const double frob = frobenius_norm(a);
    const double null_cut2 = frob * frob * 1e-30;

    double off = 0.0;
    bool converged = false;
    for (int sweep = 0; sweep < kJacobiMaxSweeps && !converged; ++sweep) {
        off = 0.0;
        for (std::size_t j = 0; j + 1 < n; ++j) {
            for (std::size_t k = j + 1; k < n; ++k) {
                const double alpha = col_dot(u, j, j);
                const double beta = col_dot(u, k, k);
                if (alpha <= null_cut2 || beta <= null_cut2) continue;
                const double gamma = col_dot(u, j, k);
                const double rel = std::abs(gamma) / std::sqrt(alpha * beta);
                off = std::max(off, rel);
                if (rel <= kJacobiTol) continue;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                rotate_cols(u, j, k, c, s);
                rotate_cols(w, j, k, c, s);
            }
        }
        if (off <= kJacobiTol) converged = true;
    }
    if (!converged) {
        std::ostringstream msg;
        msg << "svd: no convergence after " << kJacobiMaxSweeps
            << " sweeps (off-diagonal residual " << off << ")";
        throw std::runtime_error(msg.str());
    }

    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) sigma[j] = std::sqrt(col_dot(u, j, j));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

    SvdResult out;
    out.v = Matrix(a.rows, n);
    out.w = Matrix(n, n);
    out.sigma.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        out.sigma[j] = sigma[src];
        if (sigma[src] > 0.0) {
            for (std::size_t i = 0; i < a.rows; ++i) out.v(i, j) = u(i, src) / sigma[src];
        }
        for (std::size_t i = 0; i < n; ++i) out.w(i, j) = w(i, src);
    }

    const double sigma_cut = out.sigma[0] * 1e-13;
    for (std::size_t j = 0; j < n; ++j) {
        if (out.sigma[j] <= sigma_cut) complete_column(out.v, j);
    }
    return out;
}

std::vector<double> softmax(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("softmax: empty input");
    const double m = *std::max_element(v.begin(), v.end());
    std::vector<double> out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - m);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

double gelu(double x) {
    // Exact erf form, x * Phi(x).
    return x * 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
}

std::vector<double> layer_norm(const std::vector<double>& v, const std::vector<double>& gamma,
                               const std::vector<double>& beta, double eps) {
    if (v.size() != gamma.size() || v.size() != beta.size()) {
        throw std::invalid_argument("layer_norm: length mismatch (values " +
                                    std::to_string(v.size()) + ", gamma " +
                                    std::to_string(gamma.size()) + ", beta " +
                                    std::to_string(beta.size()) + ")");
    }
    if (v.empty()) throw std::invalid_argument("layer_norm: empty input");
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
    const std::size_t n = v.size();
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = (v[i] - mean) * inv * gamma[i] + beta[i];
    return out;
}

}  // namespace num
}  // namespace flowrom
