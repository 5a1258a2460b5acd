#pragma once

// Anchor-based 3D detection head math: anchors, residual codec, rotated IoU,
// the L_3d loss terms, and decoding with rotated NMS.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "esgn/kitti.hpp"
#include "esgn/tensor.hpp"
#include "esgn/voxel_spec.hpp"

namespace esgn {

struct AnchorConfig {
  double h = 1.56;
  double w = 1.6;
  double l = 3.9;
  double y = 1.65;  // bottom-face y (KITTI convention)
  std::array<double, 2> yaws{0.0, 1.5707963267948966};
};

inline constexpr std::size_t kAnchorsPerCell = 2;
inline constexpr std::size_t kResidualSize = 7;

/// One anchor per BEV cell per yaw; index n = (xi * Z + zi) * 2 + r.
struct AnchorGrid {
  std::size_t nx = 0;
  std::size_t nz = 0;
  std::vector<Box3D> anchors;
};

AnchorGrid make_anchors(const VoxelGridSpec& spec, const AnchorConfig& cfg = {});

/// (dx, dy, dz, dh, dw, dl, dyaw).
using BoxResidual = std::array<double, kResidualSize>;

/// d_a = sqrt(w_a^2 + l_a^2); dx = (x_g - x_a)/d_a, dz likewise, dy = (y_g - y_a)/h_a,
/// size terms are log ratios, dyaw = yaw_g - yaw_a. Throws on non-positive dims.
BoxResidual encode_box(const Box3D& gt, const Box3D& anchor);
/// Exact inverse of encode_box; yaw is anchor.yaw + dyaw without wrapping.
Box3D decode_box(const BoxResidual& res, const Box3D& anchor);

struct Point2 {
  double x = 0.0;
  double z = 0.0;
};

/// Footprint corners in the x-z plane, counter-clockwise.
std::array<Point2, 4> bev_corners(const Box3D& b) noexcept;

/// Area of a simple polygon (shoelace), signed positive for CCW.
double polygon_area(std::span<const Point2> poly) noexcept;

/// Sutherland-Hodgman clip of subject against a convex CCW clip polygon.
std::vector<Point2> clip_convex(std::span<const Point2> subject, std::span<const Point2> clip);

/// Intersection area of two rotated footprints.
double bev_intersection(const Box3D& a, const Box3D& b);

/// Rotated IoU in the x-z plane; 0 for degenerate boxes.
double rotated_iou_bev(const Box3D& a, const Box3D& b);
/// BEV intersection times vertical overlap over union of volumes.
double iou_3d(const Box3D& a, const Box3D& b);

struct HeadWeights {
  ConvKernel cls;  // in -> 2
  ConvKernel reg;  // in -> 14
  ConvKernel dir;  // in -> 4

  static HeadWeights seeded(std::size_t in_channels, std::uint64_t seed);
};

/// Per-anchor head outputs, flattened in anchor index order.
struct HeadOutputs {
  std::vector<double> cls_logits;
  std::vector<BoxResidual> residuals;
  std::vector<std::array<double, 2>> dir_logits;

  std::size_t size() const noexcept { return cls_logits.size(); }
};

/// 1x1 conv heads over [C,X,Z]; channel layouts a, a*7+k, a*2+k.
HeadOutputs run_head(const Tensor& input, const HeadWeights& weights);

struct MatchConfig {
  double pos_iou = 0.6;
  double neg_iou = 0.45;
};

enum class AnchorLabel : int { kIgnore = -1, kNegative = 0, kPositive = 1 };

struct AnchorTargets {
  std::vector<AnchorLabel> labels;
  std::vector<int> matched;               // gt index for positives, else -1
  std::vector<BoxResidual> residuals;     // valid for positives
  std::vector<int> dir_bins;              // valid for positives
  std::vector<Box3D> gt_boxes;            // matched gt box, valid for positives
};

/// Direction bin of gt relative to anchor: 0 if (yaw_g - yaw_a) mod 2pi is in [0, pi).
int direction_bin(double gt_yaw, double anchor_yaw) noexcept;

/// IoU-based assignment on rotated BEV IoU: >= pos_iou positive, < neg_iou
/// negative, in between ignored; every gt additionally claims its best anchor.
AnchorTargets assign_targets(std::span<const Box3D> anchors, std::span<const Box3D> gts, const MatchConfig& cfg = {});

struct LossConfig {
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double smooth_l1_beta = 1.0 / 9.0;
};

struct LossBreakdown {
  double cls = 0.0;
  double l1 = 0.0;
  double dir = 0.0;
  double iou = 0.0;
  double total = 0.0;
  std::size_t num_positive = 0;
  bool no_positives = false;
};

double sigmoid(double x) noexcept;
/// Focal loss of one logit against a binary label.
double focal_loss(double logit, bool positive, double alpha, double gamma) noexcept;
double smooth_l1(double diff, double beta) noexcept;

/// L_3d = L_cls + L_l1 + L_dir + L_iou.
///   L_cls: focal loss summed over non-ignored anchors / max(1, P)
///   L_l1:  smooth-L1 over the 7 residuals of positives / max(1, P)
///   L_dir: two-bin cross-entropy over positives / max(1, P)
///   L_iou: mean over positives of 1 - iou_3d(decode(pred), gt)
/// With P == 0 the last three terms are 0 and no_positives is set.
LossBreakdown detection_losses(const HeadOutputs& head, std::span<const Box3D> anchors, const AnchorTargets& targets,
                               const LossConfig& cfg = {});

struct DecodeConfig {
  double score_threshold = 0.5;
  double nms_iou = 0.5;
  std::size_t max_candidates = 500;  // top-k before NMS
  std::size_t max_detections = 100;
};

/// Greedy NMS by rotated BEV IoU over boxes already in priority order;
/// returns kept positions.
std::vector<std::size_t> nms_bev(std::span<const Box3D> ordered, double iou_threshold);

/// Threshold, decode, apply the direction bin, sort by score (ties by anchor
/// index), then NMS.
std::vector<Box3D> decode_detections(const HeadOutputs& head, std::span<const Box3D> anchors, const DecodeConfig& cfg);

}  // namespace esgn
