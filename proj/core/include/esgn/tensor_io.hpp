#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "esgn/tensor.hpp"

namespace esgn {

// ESGT layout: "ESGT", u32 ndim, ndim x u32 extents, then f32 values in
// row-major order. All integers and floats little-endian.

std::vector<std::uint8_t> encode_esgt(const Tensor& t);
Tensor decode_esgt(std::span<const std::uint8_t> bytes);

void write_esgt(const std::filesystem::path& path, const Tensor& t);
Tensor read_esgt(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Little-endian scalar helpers shared by the binary formats.
void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_f32_le(std::vector<std::uint8_t>& out, float v);
std::uint32_t get_u32_le(const std::uint8_t* p) noexcept;
float get_f32_le(const std::uint8_t* p) noexcept;

}  // namespace esgn
