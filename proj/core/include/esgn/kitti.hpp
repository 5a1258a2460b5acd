#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "esgn/tensor.hpp"

namespace esgn {

using Mat34 = std::array<double, 12>;  // row-major 3x4
using Mat33 = std::array<double, 9>;   // row-major 3x3

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

struct PixelProjection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;  // homogeneous w after projection
};

/// Rectified stereo calibration. focal and baseline are derived from the
/// projection matrices and validated on construction.
class CameraRig {
 public:
  CameraRig() = default;
  CameraRig(const Mat34& p_left, const Mat34& p_right, const Mat33& r0_rect, const Mat34& tr_velo_to_cam);

  /// Pinhole rig with principal point (cu, cv), no rectification, and the
  /// velodyne frame equal to the camera frame.
  static CameraRig ideal(double focal, double cu, double cv, double baseline);

  const Mat34& p_left() const noexcept { return p_left_; }
  const Mat34& p_right() const noexcept { return p_right_; }
  const Mat33& r0_rect() const noexcept { return r0_rect_; }
  const Mat34& tr_velo_to_cam() const noexcept { return tr_velo_to_cam_; }
  double focal() const noexcept { return focal_; }
  double baseline() const noexcept { return baseline_; }

  /// Projects a rectified camera-frame point with P_left.
  PixelProjection project(const Vec3& p) const noexcept;
  PixelProjection project_right(const Vec3& p) const noexcept;
  /// R0_rect * Tr_velo_to_cam * [p; 1].
  Vec3 velo_to_cam(const Vec3& p) const noexcept;

 private:
  Mat34 p_left_{};
  Mat34 p_right_{};
  Mat33 r0_rect_{};
  Mat34 tr_velo_to_cam_{};
  double focal_ = 0.0;
  double baseline_ = 0.0;
};

/// 7-DoF box in rectified camera coordinates (y down, z forward).
///
/// Follows the KITTI label convention: (x, y, z) is the center of the
/// bottom face, so the box spans [y - h, y] vertically. Length l runs along
/// the heading; yaw rotates about the camera y axis.
struct Box3D {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double h = 1.0;
  double w = 1.0;
  double l = 1.0;
  double yaw = 0.0;
  std::string label = "Car";
  double score = 1.0;
};

/// Maps an angle into (-pi, pi].
double wrap_angle(double a) noexcept;

/// One row of a KITTI label file.
struct ObjectLabel {
  std::string type = "Car";
  double truncated = 0.0;
  int occluded = 0;
  double alpha = 0.0;
  std::array<double, 4> bbox{};  // left, top, right, bottom (px)
  Box3D box;
  bool has_score = false;

  bool dont_care() const noexcept { return type == "DontCare"; }
  double bbox_height() const noexcept { return bbox[3] - bbox[1]; }
};

struct LidarPoint {
  float x = 0.0F;
  float y = 0.0F;
  float z = 0.0F;
  float reflectance = 0.0F;
};

/// One sample: grayscale stereo images [1,H,W], LiDAR in velodyne frame,
/// labels, and calibration.
struct Frame {
  std::string id;
  Tensor left;
  Tensor right;
  std::vector<LidarPoint> points;
  std::vector<ObjectLabel> labels;
  CameraRig rig;
};

CameraRig parse_calib(std::string_view text);
std::string serialize_calib(const CameraRig& rig);

std::vector<ObjectLabel> parse_labels(std::string_view text);
/// 15 fields per line, plus a 16th score field when has_score is set.
std::string serialize_labels(std::span<const ObjectLabel> labels);

std::vector<LidarPoint> read_velodyne(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_velodyne(std::span<const LidarPoint> points);

/// LiDAR transformed into the rectified camera frame; reflectance kept.
std::vector<LidarPoint> points_to_camera(std::span<const LidarPoint> velo, const CameraRig& rig);

/// Sparse depth map [1,H,W]: each pixel keeps the nearest camera-frame z of
/// the points landing in it (pixel = round(u), round(v)); 0 where empty.
Tensor lidar_to_depth(std::span<const LidarPoint> velo, const CameraRig& rig, std::size_t height,
                      std::size_t width);

/// Binary PGM (P5, maxval 255) to [1,H,W] with raw 0..255 intensities.
Tensor read_pgm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pgm(const Tensor& image);
/// Grayscale little-endian PFM ("Pf", negative scale), rows stored bottom-up.
Tensor read_pfm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pfm(const Tensor& image);
/// Dispatches on extension: .pgm or .pfm.
Tensor read_image(const std::filesystem::path& path);

/// KITTI object layout under root: calib/, label_2/, velodyne/, image_2/, image_3/.
struct FramePaths {
  std::filesystem::path calib;
  std::filesystem::path label;
  std::filesystem::path velodyne;
  std::filesystem::path left_image;
  std::filesystem::path right_image;
};

FramePaths frame_paths(const std::filesystem::path& root, const std::string& id);

/// Loads a frame; labels and velodyne are optional on disk (empty if absent),
/// calib and both images are required.
Frame load_frame(const std::filesystem::path& root, const std::string& id);

/// Writes a frame in the layout read by load_frame (images as PFM).
void write_frame(const std::filesystem::path& root, const Frame& frame);

/// Frame ids found under root/calib, sorted.
std::vector<std::string> list_frame_ids(const std::filesystem::path& root);

struct SyntheticSceneOptions {
  std::size_t height = 64;
  std::size_t width = 128;
  std::size_t num_cars = 2;
  std::size_t ground_points = 400;
  std::size_t points_per_car = 150;
};

/// Deterministic scene: textured ground plane plus box-shaped cars,
/// ray-cast into both cameras (integer gray levels), LiDAR sampled on the
/// same surfaces.
Frame make_synthetic_frame(std::uint64_t seed, const SyntheticSceneOptions& opts = {});

/// Axis-aligned 2D box (left, top, right, bottom) of the projected corners,
/// clipped to the image.
std::array<double, 4> project_box_2d(const Box3D& box, const CameraRig& rig, double width, double height);

/// Eight corners in camera coordinates: bottom face 0..3, top face 4..7.
std::array<Vec3, 8> box_corners(const Box3D& box) noexcept;

}  // namespace esgn
