#include "flowrom/weights.hpp"

#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace flowrom::weights {

namespace {

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(std::string bytes, std::string path)
        : bytes_(std::move(bytes)), path_(std::move(path)) {}

    std::uint64_t offset() const { return offset_; }

    void require(std::uint64_t count, const char* what) {
        if (offset_ + count > bytes_.size()) {
            std::ostringstream msg;
            msg << path_ << ": truncated while reading " << what << " (expected "
                << offset_ + count << " bytes, file has " << bytes_.size() << ", at offset "
                << offset_ << ")";
            throw std::runtime_error(msg.str());
        }
    }

    std::uint64_t u64(const char* what) {
        require(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[offset_ + i]))
                 << (8 * i);
        }
        offset_ += 8;
        return v;
    }

    float f32(const char* what) {
        require(4, what);
        std::uint32_t bits = 0;
        for (int i = 0; i < 4; ++i) {
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[offset_ + i]))
                    << (8 * i);
        }
        offset_ += 4;
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    std::string chars(std::uint64_t count, const char* what) {
        require(count, what);
        std::string s = bytes_.substr(offset_, count);
        offset_ += count;
        return s;
    }

    bool at_end() const { return offset_ == bytes_.size(); }

    const std::string& path() const { return path_; }

private:
    std::string bytes_;
    std::string path_;
    std::uint64_t offset_ = 0;
};

}  // namespace

std::uint64_t TensorData::element_count() const {
    std::uint64_t n = 1;
    for (std::uint64_t d : dims) n *= d;
    return dims.empty() ? 0 : n;
}

void Container::set(const std::string& name, TensorData tensor) {
    if (name.empty()) throw std::invalid_argument("Container: empty tensor name");
    if (tensor.dims.empty()) throw std::invalid_argument("Container: tensor \"" + name + "\" has no dims");
    if (tensor.element_count() != tensor.values.size()) {
        throw std::invalid_argument("Container: tensor \"" + name + "\" has " +
                                    std::to_string(tensor.values.size()) + " values for " +
                                    std::to_string(tensor.element_count()) + " elements");
    }
    tensors_[name] = std::move(tensor);
}

void Container::set_matrix(const std::string& name, const Matrix& m) {
    set(name, TensorData{{m.rows, m.cols}, m.data});
}

void Container::set_vector(const std::string& name, const std::vector<double>& v) {
    set(name, TensorData{{v.size()}, v});
}

void Container::set_scalar(const std::string& name, double v) {
    set(name, TensorData{{1}, {v}});
}

const TensorData& Container::get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end())
        throw std::runtime_error("Container: missing tensor \"" + name + "\"");
    return it->second;
}

Matrix Container::get_matrix(const std::string& name) const {
    const TensorData& t = get(name);
    if (t.dims.size() != 2) {
        throw std::runtime_error("Container: tensor \"" + name + "\" has rank " +
                                 std::to_string(t.dims.size()) + ", expected 2");
    }
    return Matrix(static_cast<std::size_t>(t.dims[0]), static_cast<std::size_t>(t.dims[1]),
                  t.values);
}

std::vector<double> Container::get_vector(const std::string& name) const {
    const TensorData& t = get(name);
    if (t.dims.size() != 1) {
        throw std::runtime_error("Container: tensor \"" + name + "\" has rank " +
                                 std::to_string(t.dims.size()) + ", expected 1");
    }
    return t.values;
}

double Container::get_scalar(const std::string& name) const {
    const TensorData& t = get(name);
    if (t.element_count() != 1)
        throw std::runtime_error("Container: tensor \"" + name + "\" is not a scalar");
    return t.values[0];
}

std::vector<std::string> Container::names() const {
    std::vector<std::string> out;
    out.reserve(tensors_.size());
    for (const auto& [name, tensor] : tensors_) out.push_back(name);
    return out;
}

void Container::save(const std::string& path) const {
    std::string out;
    out.append(kMagic, 8);
    put_u64(out, tensors_.size());
    for (const auto& [name, tensor] : tensors_) {
        put_u64(out, name.size());
        out += name;
        put_u64(out, tensor.dims.size());
        for (std::uint64_t d : tensor.dims) put_u64(out, d);
        for (double v : tensor.values) put_f32(out, static_cast<float>(v));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("Container::save: cannot open " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("Container::save: write failed for " + path);
}

Container Container::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("Container::load: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    Reader r(ss.str(), path);

    const std::string magic = r.chars(8, "magic");
    if (std::memcmp(magic.data(), kMagic, 8) != 0) {
        throw std::runtime_error(path + ": bad magic, expected \"FLOWWGT1\"");
    }
    Container c;
    const std::uint64_t count = r.u64("tensor count");
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t name_len = r.u64("name length");
        if (name_len > 4096) {
            throw std::runtime_error(path + ": unreasonable tensor name length " +
                                     std::to_string(name_len) + " at offset " +
                                     std::to_string(r.offset() - 8));
        }
        const std::string name = r.chars(name_len, "tensor name");
        const std::uint64_t rank = r.u64("rank");
        if (rank == 0 || rank > 8) {
            throw std::runtime_error(path + ": tensor \"" + name + "\" has invalid rank " +
                                     std::to_string(rank));
        }
        TensorData tensor;
        std::uint64_t elems = 1;
        for (std::uint64_t d = 0; d < rank; ++d) {
            const std::uint64_t dim = r.u64("dimension");
            if (dim == 0 || elems > std::numeric_limits<std::uint64_t>::max() / std::max<std::uint64_t>(dim, 1) ||
                (elems *= dim) > (1ULL << 32)) {
                throw std::runtime_error(path + ": tensor \"" + name +
                                         "\" dimension overflow at offset " +
                                         std::to_string(r.offset() - 8));
            }
            tensor.dims.push_back(dim);
        }
        tensor.values.reserve(static_cast<std::size_t>(elems));
        for (std::uint64_t e = 0; e < elems; ++e) {
            tensor.values.push_back(static_cast<double>(r.f32("payload")));
        }
        c.set(name, std::move(tensor));
    }
    if (!r.at_end()) {
        throw std::runtime_error(path + ": trailing bytes after last tensor (offset " +
                                 std::to_string(r.offset()) + ")");
    }
    return c;
}

}  // namespace flowrom::weights
