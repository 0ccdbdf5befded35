#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "ctan/backbone.hpp"
#include "ctan/tensor_io.hpp"

namespace cta {
namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u16(std::ostream& out, std::uint16_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <class T>
T read_scalar(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open for writing: " + path.string());
    const auto params = bundle.parameters();
    write_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        write_u16(out, static_cast<std::uint16_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_tensor(out, p.tensor);
    }
    if (!out) throw std::runtime_error("checkpoint: write failed: " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, ModelBundle& bundle) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open: " + path.string());
    auto params = bundle.parameters();
    std::unordered_map<std::string, Tensor*> by_name;
    for (auto& p : params) by_name[p.name] = &p.tensor;

    const auto count = read_scalar<std::uint32_t>(in);
    if (count != params.size()) {
        throw std::runtime_error("checkpoint: parameter count mismatch (file has " +
                                 std::to_string(count) + ", model expects " +
                                 std::to_string(params.size()) + ")");
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = read_scalar<std::uint16_t>(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        if (!in) throw std::runtime_error("checkpoint: truncated name");
        auto record = read_tensor(in);
        const auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw std::runtime_error("checkpoint: unknown parameter '" + name + "'");
        }
        if (record.shape() != it->second->shape()) {
            throw std::runtime_error("checkpoint: shape mismatch for parameter '" + name + "'");
        }
        auto dst = it->second->values_mut();
        const auto src = record.values();
        std::copy(src.begin(), src.end(), dst.begin());
        by_name.erase(it);
    }
    if (!by_name.empty()) {
        throw std::runtime_error("checkpoint: missing parameter '" + by_name.begin()->first + "'");
    }
}

}  // namespace cta
