#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "esgn/kitti.hpp"

namespace esgn {

struct DifficultyBucket {
  std::string name;
  double min_height = 0.0;  // 2D bbox height, px
  int max_occlusion = 0;
  double max_truncation = 0.0;

  bool eligible(const ObjectLabel& gt) const noexcept;

  /// easy 40px/0/0.15, moderate 25px/1/0.30, hard 25px/2/0.50.
  static std::array<DifficultyBucket, 3> kitti();
};

using IouFn = std::function<double(const Box3D&, const Box3D&)>;

/// IoU of two axis-aligned image boxes (left, top, right, bottom).
double iou_2d(const std::array<double, 4>& a, const std::array<double, 4>& b) noexcept;

struct ScoredDetection {
  double score = 0.0;
  bool true_positive = false;
};

struct FrameMatch {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t ignored = 0;
  std::size_t num_gt = 0;  // eligible ground truths
  std::vector<ScoredDetection> scored;  // non-ignored detections
};

/// Greedy matching for one frame and bucket, detections taken by descending
/// score. A detection claims the highest-IoU unmatched eligible Car with
/// IoU > threshold. Otherwise it is ignored if it overlaps an ineligible
/// Car or a Van above threshold, a DontCare region with 2D IoU > 0.5, or is
/// shorter than the bucket's minimum height; else it is a false positive.
FrameMatch match_frame(std::span<const ObjectLabel> detections, std::span<const ObjectLabel> gts, const IouFn& iou,
                       double threshold, const DifficultyBucket& bucket, const std::string& cls = "Car");

struct PRCurve {
  std::vector<double> recall_points;
  std::vector<double> precision;  // interpolated
  double ap = 0.0;                // 100 * mean(precision)
};

/// 11 points {0, 0.1, ..., 1} or 40 points {1/40, ..., 1}.
std::vector<double> recall_sample_points(int count);

/// Pools detections from all frames, sweeps them by descending score, and
/// interpolates precision as the maximum precision at recall >= r. Empty
/// when there are no eligible ground truths.
std::optional<PRCurve> average_precision(std::span<const FrameMatch> frames, int recall_points = 40);

enum class Metric { kAp3d, kApBev };

struct EvalRow {
  std::string cls = "Car";
  Metric metric = Metric::kAp3d;
  std::string bucket;
  double iou_threshold = 0.7;
  std::optional<double> ap;
};

struct EvalOptions {
  int recall_points = 40;
  std::vector<double> iou_thresholds{0.7, 0.5};
};

std::vector<EvalRow> evaluate(std::span<const std::vector<ObjectLabel>> gts,
                              std::span<const std::vector<ObjectLabel>> dets, const EvalOptions& opts = {});

/// "class=Car metric=AP3D bucket=moderate iou=0.70 ap=<float>" per row;
/// absent APs print as ap=nan.
std::string format_machine(std::span<const EvalRow> rows);
/// Aligned human-readable table.
std::string format_table(std::span<const EvalRow> rows);

}  // namespace esgn
