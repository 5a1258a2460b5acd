#pragma once

// Stereo path: backbone stub, cost volumes and their multi-scale
// reprojection into stereo volumes, frustum-to-voxel resampling, BEV
// flattening, and cascade fusion into geometry-aware features.

#include <array>
#include <cstdint>
#include <span>

#include "esgn/kitti.hpp"
#include "esgn/tensor.hpp"
#include "esgn/voxel_spec.hpp"

namespace esgn {

inline constexpr std::size_t kScales = 3;

template <typename T>
using PerScale = std::array<T, kScales>;

struct PyramidConfig {
  PerScale<std::size_t> strides{4, 8, 16};
  std::size_t channels = 8;          // C
  std::size_t disparity_count = 24;  // D, shared by all scales
  double max_disparity_px = 192.0;   // full-resolution pixels
  std::size_t kernel_size = 3;       // f_conv / fusion kernels

  /// Strides must double per scale; D >= 2; C >= 1; odd kernel.
  void validate() const;
};

struct EgfgConfig {
  PyramidConfig pyramid;
  std::size_t bev_channels = 16;  // C'
  VoxelGridSpec voxels = VoxelGridSpec::stereo_default();

  void validate() const;
};

/// Fixture weights for the whole stereo path.
struct EgfgWeights {
  PerScale<ConvKernel> backbone;  // 3x3: 1->C, C->C, C->C
  PerScale<ConvKernel> stereo;    // D->C*D, then (C*D + D)->C*D
  PerScale<ConvKernel> fusion;    // C*Y->C', then (C' + C*Y)->C'

  static EgfgWeights seeded(const EgfgConfig& cfg, std::uint64_t seed);
};

struct PairedFeatures {
  PerScale<Tensor> left;
  PerScale<Tensor> right;
};

/// Pooling + seeded conv pyramid over grayscale [1,H,W] images. The same
/// kernels are applied to both views.
PairedFeatures backbone_stub(const Tensor& left, const Tensor& right, const PyramidConfig& cfg,
                             std::span<const ConvKernel, kScales> kernels);

/// Correlation cost volume [D,H,W]:
///   cv[d,h,w] = (1/C) sum_c left[c,h,w-d] * right[c,h,w+d],
/// zero when either column falls outside the map.
Tensor correlate(const Tensor& left, const Tensor& right, std::size_t disparities);

struct StereoVolumes {
  PerScale<Tensor> raw;     // [C*D, H_i, W_i]
  PerScale<Tensor> volume;  // [C, D, H_i, W_i]
};

/// Multi-scale reprojection of cost volumes:
///   raw1 = conv(cv1); raw_i = conv(cat(avgpool(raw_{i-1}), cv_i)); volume_i = reshape(raw_i).
StereoVolumes build_stereo_volumes(std::span<const Tensor, kScales> cost, std::size_t channels,
                                   std::span<const ConvKernel, kScales> kernels);

/// Resamples a frustum volume [C,D,H_i,W_i] onto the voxel grid, giving
/// [C,Y,X,Z]. Each voxel center projects through P_left to (u,v); the sample
/// point is (f*b / (2*z*stride), v/stride, u/stride) in (d, row, col).
/// Sampling is trilinear; a sample point outside [0,n) on any axis yields
/// zero, and corners past the last index contribute zero.
Tensor frustum_sample(const Tensor& volume, const CameraRig& rig, const VoxelGridSpec& spec, std::size_t stride);

/// [C,Y,X,Z] -> [C*Y,X,Z].
Tensor flatten_bev(const Tensor& geometry);
/// [C*Y,X,Z] -> [C,Y,X,Z].
Tensor unflatten_bev(const Tensor& bev, std::size_t channels, std::size_t height);

/// gf1 = conv(bev1); gf_i = conv(cat(gf_{i-1}, bev_i)). The maps share (X,Z);
/// channel counts may differ per scale.
PerScale<Tensor> fuse_bev(std::span<const Tensor, kScales> bev, std::span<const ConvKernel, kScales> kernels);

/// Semantic BEV map [C,X,Z]: bilinear sample of the coarsest left feature
/// map at the projection of each column center (x, y_mid, z).
Tensor map_semantic(const Tensor& left_features, const CameraRig& rig, const VoxelGridSpec& spec, std::size_t stride);

/// All intermediates of one stereo forward pass.
struct EgfgTrace {
  PairedFeatures features;
  PerScale<Tensor> cost;
  StereoVolumes stereo;
  PerScale<Tensor> geometry;  // F_gv
  PerScale<Tensor> bev;       // F_bev
  PerScale<Tensor> fused;     // F_gf
  Tensor semantic;            // [C,X,Z]
  Tensor head_input;          // cat(F_gf^3, semantic)
};

EgfgTrace run_egfg(const Tensor& left, const Tensor& right, const CameraRig& rig, const EgfgConfig& cfg,
                   const EgfgWeights& weights);

}  // namespace esgn
