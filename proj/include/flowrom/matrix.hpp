#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace flowrom {

// Dense row-major double matrix. The only array type used across the library.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // rows*cols, row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> values);

    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix row_vector(const std::vector<double>& v);
    static Matrix column_vector(const std::vector<double>& v);

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }
    std::string shape_str() const;

    std::vector<double> row(std::size_t i) const;
    std::vector<double> col(std::size_t j) const;
    void set_col(std::size_t j, const std::vector<double>& v);

    bool all_finite() const;
};

namespace num {

Matrix matmul(const Matrix& a, const Matrix& b);
// a * b^T and a^T * b without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
double frobenius_norm(const Matrix& a);
double dot(const std::vector<double>& a, const std::vector<double>& b);

// Thin SVD: a = v * diag(sigma) * w^T with p = min(rows, cols) columns.
// sigma is non-negative and non-increasing; v and w have orthonormal columns.
struct SvdResult {
    Matrix v;                   // rows x p
    std::vector<double> sigma;  // p
    Matrix w;                   // cols x p
};
SvdResult svd(const Matrix& a);

std::vector<double> softmax(const std::vector<double>& v);
double gelu(double x);
std::vector<double> layer_norm(const std::vector<double>& v, const std::vector<double>& gamma,
                               const std::vector<double>& beta, double eps);

}  // namespace num
}  // namespace flowrom
