#pragma once

#include <filesystem>
#include <iosfwd>

#include "ctan/tensor.hpp"

namespace cta {

/// Binary tensor records: magic "CTAN", format version u16, rank u16, extents
/// as u64 little-endian, then the data as f32 little-endian in row-major
/// order. Readers reject a wrong magic or version.
inline constexpr char kTensorMagic[4] = {'C', 'T', 'A', 'N'};
inline constexpr std::uint16_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace cta
