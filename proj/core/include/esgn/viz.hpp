#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "esgn/kitti.hpp"

namespace esgn {

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  bool operator==(const Rgb&) const = default;
};

inline constexpr Rgb kCornerColor{255, 255, 0};
inline constexpr Rgb kGtColor{255, 64, 64};
inline constexpr Rgb kDetColor{64, 255, 64};

/// Binary PPM (P6) of the grayscale image with 3D box wireframes projected
/// through P_left. Corners in front of the camera are drawn in kCornerColor
/// on top of the edges.
std::vector<std::uint8_t> render_ppm(const Tensor& image, std::span<const Box3D> gt, std::span<const Box3D> dets,
                                     const CameraRig& rig);

/// ASCII PLY: camera-frame points followed by 8 corners per box, with the 12
/// box edges as an edge element.
std::string render_ply(std::span<const LidarPoint> camera_points, std::span<const Box3D> boxes);

/// The 12 edges of box_corners() as corner index pairs.
const std::array<std::array<int, 2>, 12>& box_edges() noexcept;

}  // namespace esgn
