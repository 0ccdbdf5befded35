#include "ctan/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts are not supported");

namespace cta {
namespace {

template <class T>
void write_raw(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_raw(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw std::runtime_error("tensor file: truncated record");
    return value;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
    out.write(kTensorMagic, sizeof(kTensorMagic));
    write_raw<std::uint16_t>(out, kTensorFormatVersion);
    write_raw<std::uint16_t>(out, static_cast<std::uint16_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) {
        write_raw<std::uint64_t>(out, static_cast<std::uint64_t>(t.extent(d)));
    }
    const auto v = t.values();
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size_bytes()));
    if (!out) throw std::runtime_error("tensor file: write failed");
}

Tensor read_tensor(std::istream& in) {
    char magic[4];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0) {
        throw std::runtime_error("tensor file: bad magic");
    }
    const auto version = read_raw<std::uint16_t>(in);
    if (version != kTensorFormatVersion) {
        throw std::runtime_error("tensor file: unsupported format version " +
                                 std::to_string(version));
    }
    const auto rank = read_raw<std::uint16_t>(in);
    Shape shape(rank);
    for (auto& e : shape) {
        e = static_cast<std::int64_t>(read_raw<std::uint64_t>(in));
        if (e <= 0) throw std::runtime_error("tensor file: nonpositive extent");
    }
    std::vector<float> values(static_cast<std::size_t>(shape_numel(shape)));
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!in) throw std::runtime_error("tensor file: truncated data");
    auto t = Tensor::from_values(std::move(shape), std::move(values));
    assert_all_finite(t, "tensor file payload");
    return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path.string());
    return read_tensor(in);
}

}  // namespace cta
