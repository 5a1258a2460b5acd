#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

namespace esgn {

using Shape = std::vector<std::size_t>;

/// Dense row-major real tensor (last dimension fastest), rank 1 to 5.
///
/// Extents are positive, except that the leading (channel) extent may be zero
/// so that an empty channel block can take part in concatenation. Every value
/// handed to a constructor must be finite.
class Tensor {
 public:
  static constexpr std::size_t kMaxRank = 5;

  Tensor() = default;
  explicit Tensor(Shape dims, double fill = 0.0);
  Tensor(Shape dims, std::vector<double> values);

  [[nodiscard]] const Shape& dims() const noexcept { return dims_; }
  [[nodiscard]] std::size_t ndim() const noexcept { return dims_.size(); }
  [[nodiscard]] std::size_t extent(std::size_t axis) const { return dims_.at(axis); }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
  [[nodiscard]] std::span<double> data() noexcept { return data_; }
  [[nodiscard]] const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t flat) noexcept { return data_[flat]; }
  double operator[](std::size_t flat) const noexcept { return data_[flat]; }

  template <typename... I>
  double& operator()(I... idx) noexcept {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <typename... I>
  double operator()(I... idx) const noexcept {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  /// Flat offset of a multi-index; the index count must equal ndim().
  [[nodiscard]] std::size_t offset(std::initializer_list<std::size_t> idx) const noexcept;

  /// Product of all extents after the leading one.
  [[nodiscard]] std::size_t plane_size() const noexcept;

  [[nodiscard]] double sum() const noexcept;
  [[nodiscard]] double min() const;
  [[nodiscard]] double max() const;

  /// Bitwise equality of dims and values.
  friend bool operator==(const Tensor& a, const Tensor& b) noexcept;

 private:
  Shape dims_;
  std::vector<double> data_;
};

std::size_t shape_product(const Shape& dims) noexcept;

/// 2D convolution weights [out, in, kh, kw] plus per-output bias.
struct ConvKernel {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kh = 0;
  std::size_t kw = 0;
  Tensor weights;
  std::vector<double> bias;

  ConvKernel() = default;
  ConvKernel(Tensor w, std::vector<double> b);

  /// 1x1 kernel mapping input channel c to output channel c (out == in).
  static ConvKernel identity(std::size_t channels);
  /// Kernel of the given shape with all weights and biases zero.
  static ConvKernel zeros(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw);
};

/// 64-bit linear congruential generator (Knuth MMIX constants).
///
/// state <- state * 6364136223846793005 + 1442695040888963407 (mod 2^64).
/// The seed is first scrambled with one SplitMix64 round so that small and
/// adjacent seeds start far apart. uniform() returns the top 53 bits of the
/// advanced state as a double in [0, 1).
class Lcg {
 public:
  explicit Lcg(std::uint64_t seed) noexcept;
  std::uint64_t next() noexcept;
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

 private:
  std::uint64_t state_;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Derives an independent sub-seed for a named component.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) noexcept;

/// Fixture weights: Lcg(seed) draws weights in row-major [out,in,kh,kw]
/// order, each mapped to [-0.1, 0.1) as 0.2 * uniform() - 0.1. Bias is zero.
ConvKernel seeded_kernel(std::uint64_t seed, std::size_t out_ch, std::size_t in_ch, std::size_t kh,
                         std::size_t kw);

/// Same-size 2D convolution with zero padding; x is [C_in, H, W].
Tensor conv2d(const Tensor& x, const ConvKernel& k);

/// 2x2 mean pooling, output [C, ceil(H/2), ceil(W/2)]; partial windows average
/// over the cells they contain.
Tensor avg_pool2(const Tensor& x);

/// Concatenates along the leading axis; trailing dims must agree.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Inverse of concat_channels: leading [0, first) and [first, end).
std::pair<Tensor, Tensor> split_channels(const Tensor& x, std::size_t first);

/// [C*D, ...] -> [C, D, ...] with output[c, d, ...] == input[c*D + d, ...].
Tensor reshape_to_volume(const Tensor& x, std::size_t channels, std::size_t depth);

/// [C, D, ...] -> [C*D, ...]; inverse of reshape_to_volume.
Tensor merge_leading(const Tensor& x);

}  // namespace esgn
