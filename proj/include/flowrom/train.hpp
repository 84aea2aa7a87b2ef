#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flowrom/matrix.hpp"
#include "flowrom/weights.hpp"

namespace flowrom::train {

double mse_loss(const std::vector<double>& pred, const std::vector<double>& target);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;
};

// Named tensors partitioned into trainable and frozen. Optimizer moments
// exist only for the trainable partition.
class ParamStore {
public:
    void add(const std::string& name, Matrix value, bool trainable);
    bool has(const std::string& name) const { return tensors_.count(name) > 0; }
    const Matrix& value(const std::string& name) const;
    Matrix& mutable_value(const std::string& name);
    bool trainable(const std::string& name) const;

    std::vector<std::string> names() const;
    std::vector<std::string> trainable_names() const;
    std::int64_t step() const { return step_; }

    // One bias-corrected Adam update over exactly the trainable partition.
    void adam_step(const std::map<std::string, Matrix>& grads, const AdamConfig& config);

    weights::Container to_container() const;
    static ParamStore from_container(const weights::Container& c);

private:
    struct Entry {
        Matrix value;
        bool trainable = false;
    };
    struct Moments {
        Matrix m;
        Matrix v;
    };
    std::map<std::string, Entry> tensors_;
    std::map<std::string, Moments> moments_;
    std::int64_t step_ = 0;
};

enum class Variant { full, no_prompt, shuffled_prompt, linear_reprogram };
const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 12;
    AdamConfig adam;
    std::uint64_t seed = 42;
    Variant variant = Variant::full;
    bool tune_layer_norms = false;  // off: the whole backbone stays frozen

    void validate() const;
};

}  // namespace flowrom::train
