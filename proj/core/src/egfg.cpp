#include "esgn/egfg.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "esgn/error.hpp"

namespace esgn {

void PyramidConfig::validate() const {
  for (std::size_t i = 0; i < kScales; ++i) {
    if (strides[i] == 0 || !std::has_single_bit(strides[i])) throw ConfigError("pyramid strides must be powers of two");
    if (i > 0 && strides[i] != 2 * strides[i - 1]) throw ConfigError("pyramid strides must double per scale");
  }
  if (channels < 1) throw ConfigError("pyramid channels must be >= 1");
  if (disparity_count < 2) throw ConfigError("disparity count must be >= 2");
  if (!(max_disparity_px > 0.0)) throw ConfigError("max_disparity_px must be positive");
  if (kernel_size == 0 || kernel_size % 2 == 0) throw ConfigError("kernel size must be odd");
}

void EgfgConfig::validate() const {
  pyramid.validate();
  if (bev_channels < 1) throw ConfigError("bev channels must be >= 1");
  if (!(voxels.z().min > 0.0)) throw ConfigError("voxel z range must start in front of the camera");
}

EgfgWeights EgfgWeights::seeded(const EgfgConfig& cfg, std::uint64_t seed) {
  const std::size_t c = cfg.pyramid.channels;
  const std::size_t d = cfg.pyramid.disparity_count;
  const std::size_t k = cfg.pyramid.kernel_size;
  const std::size_t bev_in = c * cfg.voxels.ny();
  const std::size_t cp = cfg.bev_channels;
  EgfgWeights w;
  for (std::size_t i = 0; i < kScales; ++i) {
    w.backbone[i] = seeded_kernel(derive_seed(seed, 100 + i), c, i == 0 ? 1 : c, 3, 3);
    w.stereo[i] = seeded_kernel(derive_seed(seed, 200 + i), c * d, i == 0 ? d : c * d + d, k, k);
    w.fusion[i] = seeded_kernel(derive_seed(seed, 300 + i), cp, i == 0 ? bev_in : cp + bev_in, k, k);
  }
  return w;
}

PairedFeatures backbone_stub(const Tensor& left, const Tensor& right, const PyramidConfig& cfg,
                             std::span<const ConvKernel, kScales> kernels) {
  cfg.validate();
  if (left.ndim() != 3 || left.extent(0) != 1 || left.dims() != right.dims()) {
    throw DimensionError("backbone_stub expects two [1,H,W] images of equal size");
  }
  const std::size_t coarsest = cfg.strides.back();
  if (left.extent(1) % coarsest != 0 || left.extent(2) % coarsest != 0) {
    throw DimensionError("image size " + std::to_string(left.extent(1)) + "x" + std::to_string(left.extent(2)) +
                         " is not divisible by stride " + std::to_string(coarsest));
  }
  PairedFeatures out;
  Tensor l = left;
  Tensor r = right;
  std::size_t stride = 1;
  for (std::size_t i = 0; i < kScales; ++i) {
    while (stride < cfg.strides[i]) {
      l = avg_pool2(l);
      r = avg_pool2(r);
      stride *= 2;
    }
    l = conv2d(l, kernels[i]);
    r = conv2d(r, kernels[i]);
    out.left[i] = l;
    out.right[i] = r;
  }
  return out;
}

Tensor correlate(const Tensor& left, const Tensor& right, std::size_t disparities) {
  if (left.ndim() != 3 || left.dims() != right.dims()) throw DimensionError("correlate expects equal [C,H,W] maps");
  if (disparities == 0) throw DimensionError("correlate needs at least one disparity");
  const std::size_t channels = left.extent(0);
  const std::size_t height = left.extent(1);
  const std::size_t width = left.extent(2);
  const double inv_c = 1.0 / static_cast<double>(channels);
  Tensor cv({disparities, height, width});
  for (std::size_t d = 0; d < disparities; ++d) {
    // Columns with both w-d >= 0 and w+d < W; everything else stays zero.
    if (2 * d >= width) continue;
    for (std::size_t h = 0; h < height; ++h) {
      for (std::size_t w = d; w + d < width; ++w) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) acc += left(c, h, w - d) * right(c, h, w + d);
        cv(d, h, w) = acc * inv_c;
      }
    }
  }
  return cv;
}

StereoVolumes build_stereo_volumes(std::span<const Tensor, kScales> cost, std::size_t channels,
                                   std::span<const ConvKernel, kScales> kernels) {
  StereoVolumes out;
  const std::size_t depth = cost[0].extent(0);
  for (std::size_t i = 0; i < kScales; ++i) {
    if (cost[i].ndim() != 3 || cost[i].extent(0) != depth) {
      throw DimensionError("cost volume " + std::to_string(i + 1) + " must be [D,H,W] with shared D");
    }
    if (kernels[i].out_channels != channels * depth) {
      throw DimensionError("stereo kernel " + std::to_string(i + 1) + " must output C*D channels");
    }
    Tensor input = i == 0 ? cost[0] : concat_channels(avg_pool2(out.raw[i - 1]), cost[i]);
    out.raw[i] = conv2d(input, kernels[i]);
    out.volume[i] = reshape_to_volume(out.raw[i], channels, depth);
  }
  return out;
}

namespace {

struct AxisTaps {
  std::size_t lo = 0;
  double w_lo = 0.0;
  double w_hi = 0.0;
  bool has_hi = false;
};

// Linear taps for a sample coordinate on an axis of n nodes; false when the
// coordinate lies outside [0, n).
bool axis_taps(double coord, std::size_t n, AxisTaps& t) {
  if (!(coord >= 0.0) || !(coord < static_cast<double>(n))) return false;
  const double fl = std::floor(coord);
  t.lo = static_cast<std::size_t>(fl);
  const double frac = coord - fl;
  t.w_lo = 1.0 - frac;
  t.w_hi = frac;
  t.has_hi = t.lo + 1 < n;
  return true;
}

}  // namespace

Tensor frustum_sample(const Tensor& volume, const CameraRig& rig, const VoxelGridSpec& spec, std::size_t stride) {
  if (volume.ndim() != 4) throw DimensionError("frustum_sample expects [C,D,H,W]");
  if (!(spec.z().min > 0.0)) throw ConfigError("voxel z range must start in front of the camera");
  if (stride == 0) throw ConfigError("stride must be positive");
  const std::size_t channels = volume.extent(0);
  const std::size_t depth = volume.extent(1);
  const std::size_t height = volume.extent(2);
  const std::size_t width = volume.extent(3);
  const std::size_t ny = spec.ny();
  const std::size_t nx = spec.nx();
  const std::size_t nz = spec.nz();
  const double s = static_cast<double>(stride);
  const double fb = rig.focal() * rig.baseline();
  const std::size_t plane = depth * height * width;

  Tensor out({channels, ny, nx, nz});
  for (std::size_t yi = 0; yi < ny; ++yi) {
    const double y = spec.center_y(yi);
    for (std::size_t xi = 0; xi < nx; ++xi) {
      const double x = spec.center_x(xi);
      for (std::size_t zi = 0; zi < nz; ++zi) {
        const double z = spec.center_z(zi);
        const PixelProjection p = rig.project({x, y, z});
        if (!(p.depth > 0.0)) continue;
        AxisTaps td;
        AxisTaps tv;
        AxisTaps tu;
        if (!axis_taps(fb / (2.0 * z * s), depth, td) || !axis_taps(p.v / s, height, tv) ||
            !axis_taps(p.u / s, width, tu)) {
          continue;
        }
        std::array<std::size_t, 8> idx{};
        std::array<double, 8> wts{};
        std::size_t n = 0;
        for (int a = 0; a < 2; ++a) {
          if (a == 1 && !td.has_hi) continue;
          const double wd = a == 0 ? td.w_lo : td.w_hi;
          for (int b = 0; b < 2; ++b) {
            if (b == 1 && !tv.has_hi) continue;
            const double wv = b == 0 ? tv.w_lo : tv.w_hi;
            for (int c = 0; c < 2; ++c) {
              if (c == 1 && !tu.has_hi) continue;
              const double wu = c == 0 ? tu.w_lo : tu.w_hi;
              idx[n] = ((td.lo + a) * height + tv.lo + b) * width + tu.lo + c;
              wts[n] = wd * wv * wu;
              ++n;
            }
          }
        }
        for (std::size_t ch = 0; ch < channels; ++ch) {
          const double* src = volume.data().data() + ch * plane;
          double acc = 0.0;
          for (std::size_t k = 0; k < n; ++k) acc += wts[k] * src[idx[k]];
          out(ch, yi, xi, zi) = acc;
        }
      }
    }
  }
  return out;
}

Tensor flatten_bev(const Tensor& geometry) {
  if (geometry.ndim() != 4) throw DimensionError("flatten_bev expects [C,Y,X,Z]");
  return merge_leading(geometry);
}

Tensor unflatten_bev(const Tensor& bev, std::size_t channels, std::size_t height) {
  if (bev.ndim() != 3) throw DimensionError("unflatten_bev expects [C*Y,X,Z]");
  return reshape_to_volume(bev, channels, height);
}

PerScale<Tensor> fuse_bev(std::span<const Tensor, kScales> bev, std::span<const ConvKernel, kScales> kernels) {
  for (std::size_t i = 0; i < kScales; ++i) {
    if (bev[i].ndim() != 3 || bev[i].extent(1) != bev[0].extent(1) || bev[i].extent(2) != bev[0].extent(2)) {
      throw DimensionError("fuse_bev: BEV maps must be [C_i,X,Z] on one grid");
    }
  }
  PerScale<Tensor> out;
  out[0] = conv2d(bev[0], kernels[0]);
  for (std::size_t i = 1; i < kScales; ++i) out[i] = conv2d(concat_channels(out[i - 1], bev[i]), kernels[i]);
  return out;
}

Tensor map_semantic(const Tensor& left_features, const CameraRig& rig, const VoxelGridSpec& spec, std::size_t stride) {
  if (left_features.ndim() != 3) throw DimensionError("map_semantic expects [C,H,W]");
  const std::size_t channels = left_features.extent(0);
  const std::size_t height = left_features.extent(1);
  const std::size_t width = left_features.extent(2);
  const double s = static_cast<double>(stride);
  const double y = spec.y().mid();
  Tensor out({channels, spec.nx(), spec.nz()});
  for (std::size_t xi = 0; xi < spec.nx(); ++xi) {
    for (std::size_t zi = 0; zi < spec.nz(); ++zi) {
      const PixelProjection p = rig.project({spec.center_x(xi), y, spec.center_z(zi)});
      if (!(p.depth > 0.0)) continue;
      AxisTaps tv;
      AxisTaps tu;
      if (!axis_taps(p.v / s, height, tv) || !axis_taps(p.u / s, width, tu)) continue;
      for (std::size_t c = 0; c < channels; ++c) {
        double acc = tv.w_lo * tu.w_lo * left_features(c, tv.lo, tu.lo);
        if (tu.has_hi) acc += tv.w_lo * tu.w_hi * left_features(c, tv.lo, tu.lo + 1);
        if (tv.has_hi) {
          acc += tv.w_hi * tu.w_lo * left_features(c, tv.lo + 1, tu.lo);
          if (tu.has_hi) acc += tv.w_hi * tu.w_hi * left_features(c, tv.lo + 1, tu.lo + 1);
        }
        out(c, xi, zi) = acc;
      }
    }
  }
  return out;
}

EgfgTrace run_egfg(const Tensor& left, const Tensor& right, const CameraRig& rig, const EgfgConfig& cfg,
                   const EgfgWeights& weights) {
  cfg.validate();
  EgfgTrace t;
  t.features = backbone_stub(left, right, cfg.pyramid, weights.backbone);
  for (std::size_t i = 0; i < kScales; ++i) {
    t.cost[i] = correlate(t.features.left[i], t.features.right[i], cfg.pyramid.disparity_count);
  }
  t.stereo = build_stereo_volumes(t.cost, cfg.pyramid.channels, weights.stereo);
  for (std::size_t i = 0; i < kScales; ++i) {
    t.geometry[i] = frustum_sample(t.stereo.volume[i], rig, cfg.voxels, cfg.pyramid.strides[i]);
    t.bev[i] = flatten_bev(t.geometry[i]);
  }
  t.fused = fuse_bev(t.bev, weights.fusion);
  t.semantic = map_semantic(t.features.left[2], rig, cfg.voxels, cfg.pyramid.strides[2]);
  t.head_input = concat_channels(t.fused[2], t.semantic);
  return t;
}

}  // namespace esgn
