#include "esgn/dgfd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "esgn/error.hpp"

namespace esgn {

std::array<double, kVoxelFeatures> VoxelCell::mean() const noexcept {
  std::array<double, kVoxelFeatures> m{};
  for (std::size_t k = 0; k < kVoxelFeatures; ++k) m[k] = sum[k] / count;
  return m;
}

std::size_t LidarVoxels::kept() const noexcept {
  return std::accumulate(cells.begin(), cells.end(), std::size_t{0},
                         [](std::size_t acc, const VoxelCell& c) { return acc + c.count; });
}

LidarVoxels voxelize(std::span<const LidarPoint> camera_points, const VoxelGridSpec& spec) {
  LidarVoxels out;
  out.ny = spec.ny();
  out.nx = spec.nx();
  out.nz = spec.nz();
  std::vector<std::pair<std::size_t, std::size_t>> keyed;  // (voxel index, point index)
  keyed.reserve(camera_points.size());
  for (std::size_t i = 0; i < camera_points.size(); ++i) {
    const LidarPoint& p = camera_points[i];
    const auto xi = spec.index_x(p.x);
    const auto yi = spec.index_y(p.y);
    const auto zi = spec.index_z(p.z);
    if (!xi || !yi || !zi) {
      ++out.dropped;
      continue;
    }
    keyed.emplace_back((*yi * out.nx + *xi) * out.nz + *zi, i);
  }
  std::ranges::sort(keyed);
  for (const auto& [index, pi] : keyed) {
    if (out.cells.empty() || out.cells.back().index != index) out.cells.push_back({index, 0, {}});
    VoxelCell& cell = out.cells.back();
    const LidarPoint& p = camera_points[pi];
    ++cell.count;
    cell.sum[0] += p.x;
    cell.sum[1] += p.y;
    cell.sum[2] += p.z;
    cell.sum[3] += p.reflectance;
  }
  return out;
}

TeacherWeights TeacherWeights::seeded(const VoxelGridSpec& lidar, std::size_t bev_channels, std::size_t kernel_size,
                                      std::uint64_t seed) {
  TeacherWeights w;
  std::size_t ny = lidar.ny();
  for (std::size_t i = 0; i < kScales; ++i) {
    const std::size_t in = kVoxelFeatures * ny + (i == 0 ? 0 : bev_channels);
    w.fusion[i] = seeded_kernel(derive_seed(seed, 400 + i), bev_channels, in, kernel_size, kernel_size);
    ny /= 2;
  }
  return w;
}

namespace {

constexpr double kBoundaryTol = 1e-9;

struct SparseLevel {
  std::size_t ny = 0;
  std::size_t nx = 0;
  std::size_t nz = 0;
  std::vector<std::pair<std::size_t, std::array<double, kVoxelFeatures>>> cells;  // sorted by index
};

SparseLevel pool_level(const SparseLevel& fine) {
  SparseLevel coarse{fine.ny / 2, fine.nx / 2, fine.nz / 2, {}};
  std::vector<std::pair<std::size_t, std::size_t>> keyed;  // (parent, position in fine.cells)
  keyed.reserve(fine.cells.size());
  for (std::size_t i = 0; i < fine.cells.size(); ++i) {
    const std::size_t idx = fine.cells[i].first;
    const std::size_t z = idx % fine.nz;
    const std::size_t x = (idx / fine.nz) % fine.nx;
    const std::size_t y = idx / (fine.nz * fine.nx);
    keyed.emplace_back(((y / 2) * coarse.nx + x / 2) * coarse.nz + z / 2, i);
  }
  // Children of one parent stay in ascending child order: (dy, dx, dz).
  std::ranges::sort(keyed);
  for (const auto& [parent, i] : keyed) {
    if (coarse.cells.empty() || coarse.cells.back().first != parent) coarse.cells.push_back({parent, {}});
    auto& acc = coarse.cells.back().second;
    for (std::size_t k = 0; k < kVoxelFeatures; ++k) acc[k] += fine.cells[i].second[k];
  }
  for (auto& [idx, f] : coarse.cells) {
    for (double& v : f) v /= 8.0;
  }
  return coarse;
}

Tensor pooled_bev(const SparseLevel& level, std::size_t bx, std::size_t bz) {
  const std::size_t fx = level.nx / bx;
  const std::size_t fz = level.nz / bz;
  Tensor bev({kVoxelFeatures * level.ny, bx, bz});
  for (const auto& [idx, f] : level.cells) {
    const std::size_t z = idx % level.nz;
    const std::size_t x = (idx / level.nz) % level.nx;
    const std::size_t y = idx / (level.nz * level.nx);
    for (std::size_t c = 0; c < kVoxelFeatures; ++c) bev(c * level.ny + y, x / fx, z / fz) += f[c];
  }
  const double window = static_cast<double>(fx * fz);
  for (double& v : bev.data()) v /= window;
  return bev;
}

}  // namespace

TeacherTrace teacher_features(const LidarVoxels& voxels, const VoxelGridSpec& lidar, const VoxelGridSpec& stereo,
                              const TeacherWeights& weights) {
  const auto factors = bev_pool_factors(lidar, stereo);
  constexpr std::size_t kLevelDivisor = std::size_t{1} << (kScales - 1);
  if (lidar.ny() % kLevelDivisor != 0 || factors[0] % kLevelDivisor != 0 || factors[1] % kLevelDivisor != 0) {
    throw ConfigError("LiDAR grid must allow " + std::to_string(kScales - 1) +
                      " 2x pooling steps before reaching the stereo BEV grid");
  }
  if (voxels.ny != lidar.ny() || voxels.nx != lidar.nx() || voxels.nz != lidar.nz()) {
    throw ConfigError("voxel volume does not match the LiDAR grid spec");
  }
  SparseLevel level{voxels.ny, voxels.nx, voxels.nz, {}};
  level.cells.reserve(voxels.cells.size());
  for (const VoxelCell& c : voxels.cells) level.cells.emplace_back(c.index, c.mean());

  TeacherTrace t;
  for (std::size_t i = 0; i < kScales; ++i) {
    if (i > 0) level = pool_level(level);
    t.bev[i] = pooled_bev(level, stereo.nx(), stereo.nz());
  }
  t.fused = fuse_bev(t.bev, weights.fusion);
  return t;
}

Tensor build_fg_mask(std::span<const Box3D> boxes, const VoxelGridSpec& spec) {
  Tensor mask({spec.nx(), spec.nz()});
  for (const Box3D& b : boxes) {
    const double c = std::cos(b.yaw);
    const double s = std::sin(b.yaw);
    const double hl = b.l / 2.0;
    const double hw = b.w / 2.0;
    for (std::size_t xi = 0; xi < spec.nx(); ++xi) {
      const double dx = spec.center_x(xi) - b.x;
      if (std::abs(dx) > hl + hw + kBoundaryTol) continue;
      for (std::size_t zi = 0; zi < spec.nz(); ++zi) {
        const double dz = spec.center_z(zi) - b.z;
        // Box frame: x along the heading, z across.
        const double along = c * dx - s * dz;
        const double across = s * dx + c * dz;
        if (std::abs(along) <= hl + kBoundaryTol && std::abs(across) <= hw + kBoundaryTol) mask(xi, zi) = 1.0;
      }
    }
  }
  return mask;
}

Tensor build_sparse_mask(std::span<const LidarPoint> camera_points, const VoxelGridSpec& spec) {
  Tensor mask({spec.nx(), spec.nz()});
  for (const LidarPoint& p : camera_points) {
    if (!spec.index_y(p.y)) continue;
    const auto xi = spec.index_x(p.x);
    const auto zi = spec.index_z(p.z);
    if (xi && zi) mask(*xi, *zi) = 1.0;
  }
  return mask;
}

DistillLoss distill_loss(std::span<const Tensor, kScales> student, std::span<const Tensor, kScales> teacher,
                         std::span<const ConvKernel, kScales> adapters, const Tensor& fg_mask,
                         const Tensor& sparse_mask, const DistillOptions& opts) {
  if (fg_mask.ndim() != 2 || fg_mask.dims() != sparse_mask.dims()) {
    throw DimensionError("distill_loss: masks must be [X,Z] of equal size");
  }
  const std::size_t cells = fg_mask.size();
  std::vector<double> joint(cells);
  std::size_t active = 0;
  for (std::size_t i = 0; i < cells; ++i) {
    joint[i] = fg_mask[i] * sparse_mask[i];
    if (joint[i] != 0.0) ++active;
  }
  DistillLoss out;
  out.active_cells = active;
  std::size_t channels = 0;
  for (std::size_t s = 0; s < kScales; ++s) {
    if (student[s].ndim() != 3 || student[s].extent(0) != adapters[s].in_channels) {
      throw DimensionError("distill_loss: adapter " + std::to_string(s + 1) + " does not fit the student feature");
    }
    const Tensor adapted = conv2d(student[s], adapters[s]);
    if (adapted.dims() != teacher[s].dims()) {
      throw DimensionError("distill_loss: student/teacher dims differ at scale " + std::to_string(s + 1));
    }
    if (adapted.plane_size() != cells) throw DimensionError("distill_loss: mask size differs from feature grid");
    channels = adapted.extent(0);
    double acc = 0.0;
    for (std::size_t c = 0; c < adapted.extent(0); ++c) {
      for (std::size_t i = 0; i < cells; ++i) {
        const double diff = joint[i] * (adapted[c * cells + i] - teacher[s][c * cells + i]);
        acc += diff * diff;
      }
    }
    out.per_scale[s] = acc;
  }
  double n = static_cast<double>(active);
  if (opts.norm == DistillNorm::kCellChannels) n *= static_cast<double>(channels);
  out.normalizer = std::max(1.0, n);
  for (std::size_t s = 0; s < kScales; ++s) {
    out.per_scale[s] /= out.normalizer;
    out.total += out.per_scale[s];
  }
  return out;
}

PerScale<ConvKernel> seeded_adapters(std::size_t bev_channels, std::uint64_t seed) {
  PerScale<ConvKernel> g;
  for (std::size_t i = 0; i < kScales; ++i) {
    g[i] = seeded_kernel(derive_seed(seed, 500 + i), bev_channels, bev_channels, 1, 1);
  }
  return g;
}

PerScale<ConvKernel> identity_adapters(std::size_t bev_channels) {
  return {ConvKernel::identity(bev_channels), ConvKernel::identity(bev_channels), ConvKernel::identity(bev_channels)};
}

}  // namespace esgn
