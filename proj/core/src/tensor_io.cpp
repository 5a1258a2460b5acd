#include "esgn/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>
#include <string>

#include "esgn/error.hpp"

namespace esgn {

namespace {
constexpr std::uint8_t kMagic[4] = {'E', 'S', 'G', 'T'};
}

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32_le(std::vector<std::uint8_t>& out, float v) { put_u32_le(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32_le(const std::uint8_t* p) noexcept {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float get_f32_le(const std::uint8_t* p) noexcept { return std::bit_cast<float>(get_u32_le(p)); }

std::vector<std::uint8_t> encode_esgt(const Tensor& t) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 * t.ndim() + 4 * t.size());
  for (std::uint8_t m : kMagic) out.push_back(m);
  put_u32_le(out, static_cast<std::uint32_t>(t.ndim()));
  for (std::size_t d : t.dims()) put_u32_le(out, static_cast<std::uint32_t>(d));
  for (double v : t.data()) put_f32_le(out, static_cast<float>(v));
  return out;
}

Tensor decode_esgt(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError("ESGT: missing magic");
  }
  const std::uint32_t ndim = get_u32_le(bytes.data() + 4);
  if (ndim == 0 || ndim > Tensor::kMaxRank) throw FormatError("ESGT: bad rank " + std::to_string(ndim));
  if (bytes.size() < 8 + 4 * std::size_t{ndim}) throw FormatError("ESGT: truncated header");
  Shape dims(ndim);
  for (std::uint32_t i = 0; i < ndim; ++i) dims[i] = get_u32_le(bytes.data() + 8 + 4 * i);
  const std::size_t count = shape_product(dims);
  const std::size_t header = 8 + 4 * std::size_t{ndim};
  if (bytes.size() != header + 4 * count) {
    throw FormatError("ESGT: payload is " + std::to_string(bytes.size() - header) + " bytes, expected " +
                      std::to_string(4 * count));
  }
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) values[i] = get_f32_le(bytes.data() + header + 4 * i);
  return Tensor(std::move(dims), std::move(values));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_esgt(const std::filesystem::path& path, const Tensor& t) { write_file_bytes(path, encode_esgt(t)); }

Tensor read_esgt(const std::filesystem::path& path) { return decode_esgt(read_file_bytes(path)); }

}  // namespace esgn
