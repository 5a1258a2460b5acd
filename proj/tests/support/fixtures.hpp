#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "esgn/config.hpp"
#include "esgn/kitti.hpp"
#include "esgn/tensor.hpp"
#include "esgn/tensor_io.hpp"
#include "esgn/voxel_spec.hpp"

namespace fixture {

using esgn::Shape;
using esgn::Tensor;

inline Tensor random_tensor(const Shape& dims, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor t(dims);
  esgn::Lcg rng(seed ^ 0xA5A5A5A5ULL);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Uniform points over the spec region padded by pad on every side.
inline std::vector<esgn::LidarPoint> random_points(std::size_t n, std::uint64_t seed, const esgn::VoxelGridSpec& s,
                                                   double pad) {
  esgn::Lcg rng(seed);
  std::vector<esgn::LidarPoint> pts(n);
  for (auto& p : pts) {
    p = {static_cast<float>(rng.uniform(s.x().min - pad, s.x().max + pad)),
         static_cast<float>(rng.uniform(s.y().min - pad, s.y().max + pad)),
         static_cast<float>(rng.uniform(s.z().min - pad, s.z().max + pad)), static_cast<float>(rng.uniform())};
  }
  return pts;
}

/// Seeded left features with unit-norm channel vectors per pixel, and a
/// right map equal to left shifted by 2*dstar columns (right(w) = left(w - 2 dstar)).
inline std::pair<Tensor, Tensor> shifted_pair(std::size_t C, std::size_t H, std::size_t W, std::size_t dstar,
                                              std::uint64_t seed) {
  Tensor l = random_tensor({C, H, W}, seed);
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t w = 0; w < W; ++w) {
      double n = 0.0;
      for (std::size_t c = 0; c < C; ++c) n += l(c, h, w) * l(c, h, w);
      n = std::sqrt(n);
      for (std::size_t c = 0; c < C; ++c) l(c, h, w) /= n;
    }
  }
  Tensor r = random_tensor({C, H, W}, seed + 1);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 2 * dstar; w < W; ++w) r(c, h, w) = l(c, h, w - 2 * dstar);
  return {l, r};
}

/// Fraction of fully-in-range pixels whose argmax over d equals dstar.
inline double argmax_hit_rate(const Tensor& cv, std::size_t dstar) {
  const std::size_t D = cv.extent(0), H = cv.extent(1), W = cv.extent(2);
  std::size_t hit = 0, total = 0;
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t w = std::max(D - 1, 2 * dstar); w + D - 1 < W; ++w) {
      std::size_t best = 0;
      for (std::size_t d = 1; d < D; ++d) {
        if (cv(d, h, w) > cv(best, h, w)) best = d;
      }
      ++total;
      hit += best == dstar;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

/// Unique scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("esgn_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path golden_dir() { return ESGN_GOLDEN_DIR; }

/// Golden comparison; with ESGN_UPDATE_GOLDEN=1 the file is (re)written.
inline bool matches_golden(const std::string& name, const std::vector<std::uint8_t>& bytes) {
  const auto path = golden_dir() / name;
  const char* update = std::getenv("ESGN_UPDATE_GOLDEN");
  if (update != nullptr && std::string(update) == "1") {
    esgn::write_file_bytes(path, bytes);
    return true;
  }
  if (!std::filesystem::exists(path)) return false;
  return esgn::read_file_bytes(path) == bytes;
}

/// Small dataset on disk: synthetic frames with seeds first_seed.. and a
/// config pointing at it. Returns the config path.
inline std::filesystem::path write_dataset(const std::filesystem::path& root, std::size_t count,
                                           std::uint64_t first_seed = 0, const std::string& extra = "") {
  for (std::size_t i = 0; i < count; ++i) {
    esgn::Frame f = esgn::make_synthetic_frame(first_seed + i);
    char id[32];
    std::snprintf(id, sizeof id, "%06zu", i);
    f.id = id;
    esgn::write_frame(root / "data", f);
  }
  const std::string cfg = "data_root = data\noutput_dir = out\nimage_height = 64\nimage_width = 128\n" + extra;
  const auto path = root / "run.cfg";
  esgn::write_file_bytes(path, std::vector<std::uint8_t>(cfg.begin(), cfg.end()));
  return path;
}

}  // namespace fixture
