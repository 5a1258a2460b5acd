#include "esgn/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "esgn/error.hpp"

namespace esgn {

namespace {

std::string shape_str(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ']';
  return os.str();
}

void validate_shape(const Shape& dims) {
  if (dims.empty() || dims.size() > Tensor::kMaxRank) {
    throw DimensionError("tensor rank must be in [1,5], got " + std::to_string(dims.size()));
  }
  for (std::size_t i = 1; i < dims.size(); ++i) {
    if (dims[i] == 0) throw DimensionError("zero trailing extent in shape " + shape_str(dims));
  }
}

}  // namespace

std::size_t shape_product(const Shape& dims) noexcept {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape dims, double fill) : dims_(std::move(dims)) {
  validate_shape(dims_);
  if (!std::isfinite(fill)) throw std::invalid_argument("non-finite tensor fill value");
  data_.assign(shape_product(dims_), fill);
}

Tensor::Tensor(Shape dims, std::vector<double> values) : dims_(std::move(dims)), data_(std::move(values)) {
  validate_shape(dims_);
  if (shape_product(dims_) != data_.size()) {
    throw DimensionError("shape " + shape_str(dims_) + " does not match " + std::to_string(data_.size()) +
                         " values");
  }
  for (double v : data_) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite tensor value");
  }
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> idx) const noexcept {
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) off = off * dims_[axis++] + i;
  return off;
}

std::size_t Tensor::plane_size() const noexcept {
  if (dims_.empty()) return 0;
  std::size_t p = 1;
  for (std::size_t i = 1; i < dims_.size(); ++i) p *= dims_[i];
  return p;
}

double Tensor::sum() const noexcept { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::min() const {
  if (data_.empty()) throw DimensionError("min of empty tensor");
  return *std::min_element(data_.begin(), data_.end());
}

double Tensor::max() const {
  if (data_.empty()) throw DimensionError("max of empty tensor");
  return *std::max_element(data_.begin(), data_.end());
}

bool operator==(const Tensor& a, const Tensor& b) noexcept {
  if (a.dims_ != b.dims_) return false;
  // Bitwise, so that -0.0 != 0.0 and determinism checks are strict.
  return std::equal(a.data_.begin(), a.data_.end(), b.data_.begin(), [](double x, double y) {
    return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
  });
}

ConvKernel::ConvKernel(Tensor w, std::vector<double> b) : weights(std::move(w)), bias(std::move(b)) {
  if (weights.ndim() != 4) throw DimensionError("conv weights must be rank 4");
  out_channels = weights.extent(0);
  in_channels = weights.extent(1);
  kh = weights.extent(2);
  kw = weights.extent(3);
  if (out_channels == 0) throw DimensionError("conv kernel needs at least one output channel");
  if (bias.size() != out_channels) throw DimensionError("conv bias length differs from output channels");
}

ConvKernel ConvKernel::identity(std::size_t channels) {
  Tensor w({channels, channels, 1, 1});
  for (std::size_t c = 0; c < channels; ++c) w(c, c, 0, 0) = 1.0;
  return ConvKernel(std::move(w), std::vector<double>(channels, 0.0));
}

ConvKernel ConvKernel::zeros(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw) {
  return ConvKernel(Tensor({out, in, kh, kw}), std::vector<double>(out, 0.0));
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) noexcept {
  return splitmix64(base ^ splitmix64(tag));
}

Lcg::Lcg(std::uint64_t seed) noexcept : state_(splitmix64(seed)) {}

std::uint64_t Lcg::next() noexcept {
  state_ = state_ * 6364136223846793005ULL + 1442695040888963407ULL;
  return state_;
}

double Lcg::uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

ConvKernel seeded_kernel(std::uint64_t seed, std::size_t out_ch, std::size_t in_ch, std::size_t kh,
                         std::size_t kw) {
  if (out_ch == 0 || in_ch == 0 || kh == 0 || kw == 0) {
    throw DimensionError("seeded_kernel extents must be positive");
  }
  Lcg rng(seed);
  Tensor w({out_ch, in_ch, kh, kw});
  for (double& v : w.data()) v = 0.2 * rng.uniform() - 0.1;
  return ConvKernel(std::move(w), std::vector<double>(out_ch, 0.0));
}

Tensor conv2d(const Tensor& x, const ConvKernel& k) {
  if (x.ndim() != 3) throw DimensionError("conv2d expects [C,H,W] input");
  if (x.extent(0) != k.in_channels) {
    throw DimensionError("conv2d channel mismatch: input has " + std::to_string(x.extent(0)) +
                         ", kernel expects " + std::to_string(k.in_channels));
  }
  const std::size_t cin = k.in_channels;
  const std::size_t height = x.extent(1);
  const std::size_t width = x.extent(2);
  const auto ph = static_cast<std::ptrdiff_t>(k.kh / 2);
  const auto pw = static_cast<std::ptrdiff_t>(k.kw / 2);
  const auto sh = static_cast<std::ptrdiff_t>(height);
  const auto sw = static_cast<std::ptrdiff_t>(width);

  Tensor out({k.out_channels, height, width});
  const double* src = x.data().data();
  const double* wts = k.weights.data().data();
  double* dst = out.data().data();
  const std::size_t plane = height * width;

  // Per output element the accumulation order is bias, then (c, i, j)
  // ascending, skipping out-of-bounds taps.
  for (std::size_t o = 0; o < k.out_channels; ++o) {
    double* oplane = dst + o * plane;
    std::fill(oplane, oplane + plane, k.bias[o]);
    for (std::size_t c = 0; c < cin; ++c) {
      const double* iplane = src + c * plane;
      for (std::size_t i = 0; i < k.kh; ++i) {
        const std::ptrdiff_t di = static_cast<std::ptrdiff_t>(i) - ph;
        const std::ptrdiff_t h0 = std::max<std::ptrdiff_t>(0, -di);
        const std::ptrdiff_t h1 = std::min<std::ptrdiff_t>(sh, sh - di);
        for (std::size_t j = 0; j < k.kw; ++j) {
          const double wv = wts[((o * cin + c) * k.kh + i) * k.kw + j];
          const std::ptrdiff_t dj = static_cast<std::ptrdiff_t>(j) - pw;
          const std::ptrdiff_t w0 = std::max<std::ptrdiff_t>(0, -dj);
          const std::ptrdiff_t w1 = std::min<std::ptrdiff_t>(sw, sw - dj);
          for (std::ptrdiff_t h = h0; h < h1; ++h) {
            double* orow = oplane + h * sw;
            const double* irow = iplane + (h + di) * sw;
            for (std::ptrdiff_t w = w0; w < w1; ++w) orow[w] += wv * irow[w + dj];
          }
        }
      }
    }
  }
  return out;
}

Tensor avg_pool2(const Tensor& x) {
  if (x.ndim() != 3) throw DimensionError("avg_pool2 expects [C,H,W] input");
  const std::size_t channels = x.extent(0);
  const std::size_t height = x.extent(1);
  const std::size_t width = x.extent(2);
  const std::size_t oh = (height + 1) / 2;
  const std::size_t ow = (width + 1) / 2;
  Tensor out({channels, oh, ow});
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t h = 0; h < oh; ++h) {
      for (std::size_t w = 0; w < ow; ++w) {
        double acc = 0.0;
        int count = 0;
        for (std::size_t dh = 0; dh < 2; ++dh) {
          for (std::size_t dw = 0; dw < 2; ++dw) {
            const std::size_t hh = 2 * h + dh;
            const std::size_t ww = 2 * w + dw;
            if (hh < height && ww < width) {
              acc += x(c, hh, ww);
              ++count;
            }
          }
        }
        out(c, h, w) = acc / count;
      }
    }
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.ndim() != b.ndim() || !std::equal(a.dims().begin() + 1, a.dims().end(), b.dims().begin() + 1)) {
    throw DimensionError("concat_channels: trailing dims differ (" + shape_str(a.dims()) + " vs " +
                         shape_str(b.dims()) + ")");
  }
  Shape dims = a.dims();
  dims[0] = a.extent(0) + b.extent(0);
  std::vector<double> values;
  values.reserve(a.size() + b.size());
  values.insert(values.end(), a.values().begin(), a.values().end());
  values.insert(values.end(), b.values().begin(), b.values().end());
  return Tensor(std::move(dims), std::move(values));
}

std::pair<Tensor, Tensor> split_channels(const Tensor& x, std::size_t first) {
  if (x.ndim() == 0 || first > x.extent(0)) throw DimensionError("split_channels: split point out of range");
  Shape da = x.dims();
  Shape db = x.dims();
  da[0] = first;
  db[0] = x.extent(0) - first;
  const auto cut = static_cast<std::ptrdiff_t>(first * x.plane_size());
  std::vector<double> va(x.values().begin(), x.values().begin() + cut);
  std::vector<double> vb(x.values().begin() + cut, x.values().end());
  return {Tensor(std::move(da), std::move(va)), Tensor(std::move(db), std::move(vb))};
}

Tensor reshape_to_volume(const Tensor& x, std::size_t channels, std::size_t depth) {
  if (x.ndim() == 0 || x.ndim() >= Tensor::kMaxRank) throw DimensionError("reshape_to_volume: bad rank");
  if (channels == 0 || depth == 0 || x.extent(0) != channels * depth) {
    throw DimensionError("reshape_to_volume: leading extent " + std::to_string(x.extent(0)) + " != " +
                         std::to_string(channels) + "*" + std::to_string(depth));
  }
  Shape dims{channels, depth};
  dims.insert(dims.end(), x.dims().begin() + 1, x.dims().end());
  // Row-major layout makes the relabeling a no-op on the flat buffer.
  return Tensor(std::move(dims), x.values());
}

Tensor merge_leading(const Tensor& x) {
  if (x.ndim() < 2) throw DimensionError("merge_leading needs rank >= 2");
  Shape dims{x.extent(0) * x.extent(1)};
  dims.insert(dims.end(), x.dims().begin() + 2, x.dims().end());
  return Tensor(std::move(dims), x.values());
}

}  // namespace esgn
