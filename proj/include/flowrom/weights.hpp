#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flowrom/matrix.hpp"

namespace flowrom::weights {

// FLOWWGT v1: magic "FLOWWGT1", then a u64 tensor count, then per tensor
// {u64 name length, UTF-8 name, u64 rank, u64 dims..., payload of f32 values
// row-major}. Everything little-endian. Doubles are rounded to f32 on save
// and widened on load.
inline constexpr char kMagic[8] = {'F', 'L', 'O', 'W', 'W', 'G', 'T', '1'};

struct TensorData {
    std::vector<std::uint64_t> dims;
    std::vector<double> values;

    std::uint64_t element_count() const;
};

class Container {
public:
    void set(const std::string& name, TensorData tensor);
    void set_matrix(const std::string& name, const Matrix& m);
    void set_vector(const std::string& name, const std::vector<double>& v);
    void set_scalar(const std::string& name, double v);

    bool has(const std::string& name) const { return tensors_.count(name) > 0; }
    const TensorData& get(const std::string& name) const;
    Matrix get_matrix(const std::string& name) const;
    std::vector<double> get_vector(const std::string& name) const;
    double get_scalar(const std::string& name) const;

    std::vector<std::string> names() const;
    std::size_t size() const { return tensors_.size(); }

    void save(const std::string& path) const;
    static Container load(const std::string& path);

private:
    std::map<std::string, TensorData> tensors_;  // ordered for deterministic output
};

}  // namespace flowrom::weights
