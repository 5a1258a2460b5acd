#pragma once

// LiDAR teacher path and the masked multi-level feature distillation loss.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "esgn/egfg.hpp"
#include "esgn/kitti.hpp"
#include "esgn/tensor.hpp"
#include "esgn/voxel_spec.hpp"

namespace esgn {

/// Per-voxel mean of (x, y, z, reflectance).
inline constexpr std::size_t kVoxelFeatures = 4;

struct VoxelCell {
  std::size_t index = 0;  // (yi * X + xi) * Z + zi
  std::uint32_t count = 0;
  std::array<double, kVoxelFeatures> sum{};

  std::array<double, kVoxelFeatures> mean() const noexcept;
};

/// Sparse occupancy grid, cells sorted by index.
struct LidarVoxels {
  std::vector<VoxelCell> cells;
  std::size_t dropped = 0;
  std::size_t ny = 0;
  std::size_t nx = 0;
  std::size_t nz = 0;

  std::size_t kept() const noexcept;
};

/// Bins camera-frame points: index = floor((coord - min) / size) per axis;
/// points outside the half-open ranges are dropped. Sums accumulate in input
/// order.
LidarVoxels voxelize(std::span<const LidarPoint> camera_points, const VoxelGridSpec& spec);

struct TeacherWeights {
  PerScale<ConvKernel> fusion;  // (4*Y_l)->C', then (C' + 4*Y_l/2^i)->C'

  static TeacherWeights seeded(const VoxelGridSpec& lidar, std::size_t bev_channels, std::size_t kernel_size,
                               std::uint64_t seed);
};

struct TeacherTrace {
  PerScale<Tensor> bev;    // F_lbev, [4*Y_i, X, Z]
  PerScale<Tensor> fused;  // F_lgf, [C', X, Z]
};

/// Scale i voxel features are the mean features 2x2x2 average-pooled (i-1)
/// times (a dense stand-in for the sparse backbone). Each scale is flattened
/// along channel and y, average-pooled in x-z onto the stereo BEV grid, then
/// fused with the same cascade as fuse_bev.
TeacherTrace teacher_features(const LidarVoxels& voxels, const VoxelGridSpec& lidar, const VoxelGridSpec& stereo,
                              const TeacherWeights& weights);

/// [X,Z] mask: 1 where the BEV cell center lies inside some box footprint
/// (rotated rectangle, length along the heading, boundary inclusive to 1e-9).
Tensor build_fg_mask(std::span<const Box3D> boxes, const VoxelGridSpec& spec);

/// [X,Z] mask: 1 where at least one camera-frame point with y in range lands
/// in the cell footprint.
Tensor build_sparse_mask(std::span<const LidarPoint> camera_points, const VoxelGridSpec& spec);

enum class DistillNorm {
  kCells,         // N = number of cells with M_fg * M_sp == 1
  kCellChannels,  // N = active cells * channels
};

struct DistillOptions {
  DistillNorm norm = DistillNorm::kCells;
};

struct DistillLoss {
  double total = 0.0;
  PerScale<double> per_scale{};
  std::size_t active_cells = 0;
  double normalizer = 1.0;
};

/// sum_i (1/N) * sum_{c,x,z} [M_fg M_sp (g_i(student_i) - teacher_i)]^2,
/// with N clamped to >= 1 and shared by all scales.
DistillLoss distill_loss(std::span<const Tensor, kScales> student, std::span<const Tensor, kScales> teacher,
                         std::span<const ConvKernel, kScales> adapters, const Tensor& fg_mask,
                         const Tensor& sparse_mask, const DistillOptions& opts = {});

PerScale<ConvKernel> seeded_adapters(std::size_t bev_channels, std::uint64_t seed);
PerScale<ConvKernel> identity_adapters(std::size_t bev_channels);

}  // namespace esgn
