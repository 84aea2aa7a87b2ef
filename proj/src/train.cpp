#include "flowrom/train.hpp"

#include <cmath>
#include <stdexcept>

namespace flowrom::train {

double mse_loss(const std::vector<double>& pred, const std::vector<double>& target) {
    if (pred.size() != target.size()) {
        throw std::invalid_argument("mse_loss: length mismatch (" + std::to_string(pred.size()) +
                                    " vs " + std::to_string(target.size()) + ")");
    }
    if (pred.empty()) throw std::invalid_argument("mse_loss: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

void AdamConfig::validate() const {
    // Zero is allowed so a no-op training pass stays expressible.
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("AdamConfig: learning_rate must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("AdamConfig: beta1 out of [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("AdamConfig: beta2 out of [0, 1)");
    if (!(eps > 0.0)) throw std::invalid_argument("AdamConfig: eps must be > 0");
}

void ParamStore::add(const std::string& name, Matrix value, bool trainable) {
    if (tensors_.count(name)) throw std::invalid_argument("ParamStore: duplicate tensor \"" + name + "\"");
    if (trainable) {
        Moments m;
        m.m = Matrix(value.rows, value.cols);
        m.v = Matrix(value.rows, value.cols);
        moments_[name] = std::move(m);
    }
    tensors_[name] = Entry{std::move(value), trainable};
}

const Matrix& ParamStore::value(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::invalid_argument("ParamStore: missing tensor \"" + name + "\"");
    return it->second.value;
}

Matrix& ParamStore::mutable_value(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::invalid_argument("ParamStore: missing tensor \"" + name + "\"");
    return it->second.value;
}

bool ParamStore::trainable(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::invalid_argument("ParamStore: missing tensor \"" + name + "\"");
    return it->second.trainable;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    for (const auto& [name, entry] : tensors_) out.push_back(name);
    return out;
}

std::vector<std::string> ParamStore::trainable_names() const {
    std::vector<std::string> out;
    for (const auto& [name, entry] : tensors_) {
        if (entry.trainable) out.push_back(name);
    }
    return out;
}

void ParamStore::adam_step(const std::map<std::string, Matrix>& grads, const AdamConfig& config) {
    config.validate();
    for (const auto& [name, grad] : grads) {
        if (!tensors_.count(name) || !tensors_.at(name).trainable) {
            throw std::invalid_argument("adam_step: gradient for unknown or frozen tensor \"" +
                                        name + "\"");
        }
    }
    for (const auto& [name, entry] : tensors_) {
        if (entry.trainable && !grads.count(name)) {
            throw std::invalid_argument("adam_step: missing gradient for trainable tensor \"" +
                                        name + "\"");
        }
    }

    step_ += 1;
    const double t = static_cast<double>(step_);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);
    for (auto& [name, entry] : tensors_) {
        if (!entry.trainable) continue;
        const Matrix& g = grads.at(name);
        if (!g.same_shape(entry.value)) {
            throw std::invalid_argument("adam_step: gradient shape " + g.shape_str() +
                                        " does not match tensor \"" + name + "\" " +
                                        entry.value.shape_str());
        }
        Moments& mom = moments_.at(name);
        for (std::size_t k = 0; k < entry.value.data.size(); ++k) {
            const double gk = g.data[k];
            mom.m.data[k] = config.beta1 * mom.m.data[k] + (1.0 - config.beta1) * gk;
            mom.v.data[k] = config.beta2 * mom.v.data[k] + (1.0 - config.beta2) * gk * gk;
            const double m_hat = mom.m.data[k] / bc1;
            const double v_hat = mom.v.data[k] / bc2;
            entry.value.data[k] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.eps);
        }
    }
}

weights::Container ParamStore::to_container() const {
    weights::Container c;
    for (const auto& [name, entry] : tensors_) {
        c.set(name, weights::TensorData{{entry.value.rows, entry.value.cols}, entry.value.data});
        c.set_scalar("meta.trainable." + name, entry.trainable ? 1.0 : 0.0);
    }
    for (const auto& [name, mom] : moments_) {
        c.set(
            "opt." + name + ".m",
            weights::TensorData{{mom.m.rows, mom.m.cols}, mom.m.data});
        c.set(
            "opt." + name + ".v",
            weights::TensorData{{mom.v.rows, mom.v.cols}, mom.v.data});
    }
    c.set_scalar("opt.step", static_cast<double>(step_));
    return c;
}

ParamStore ParamStore::from_container(const weights::Container& c) {
    ParamStore store;
    for (const std::string& name : c.names()) {
        if (name.rfind("opt.", 0) == 0 || name.rfind("meta.", 0) == 0 ||
        name.rfind("pod.", 0) == 0)
            continue;
        const weights::TensorData& t = c.get(name);
        if (t.dims.size() != 2) {
            throw std::runtime_error("ParamStore: tensor \"" + name + "\" has rank " +
                                     std::to_string(t.dims.size()) + ", expected 2");
        }
        const bool trainable = c.get_scalar("meta.trainable." + name) != 0.0;
        store.add(name,
                  Matrix(static_cast<std::size_t>(t.dims[0]), static_cast<std::size_t>(t.dims[1]),
                         t.values),
                  trainable);
        if (trainable) {
            Moments& mom = store.moments_.at(name);
            mom.m = c.get_matrix("opt." + name + ".m");
            mom.v = c.get_matrix("opt." + name + ".v");
        }
    }
    store.step_ = static_cast<std::int64_t>(c.get_scalar("opt.step"));
    return store;
}

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_prompt: return "no_prompt";
        case Variant::shuffled_prompt: return "shuffled_prompt";
        case Variant::linear_reprogram: return "linear_reprogram";
    }
    return "full";
}

Variant parse_variant(const std::string& name) {
    if (name == "full") return Variant::full;
    if (name == "no_prompt") return Variant::no_prompt;
    if (name == "shuffled_prompt") return Variant::shuffled_prompt;
    if (name == "linear_reprogram") return Variant::linear_reprogram;
    throw std::invalid_argument("unknown variant \"" + name + "\"");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    adam.validate();
}

}  // namespace flowrom::train
