#pragma once

// Per-frame composition of the modules: stereo features -> head -> boxes,
// and the LiDAR teacher + distillation loss.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "esgn/config.hpp"
#include "esgn/detect.hpp"
#include "esgn/dgfd.hpp"
#include "esgn/egfg.hpp"
#include "esgn/kitti.hpp"

namespace esgn {

/// Fixture weights and anchors derived from a config; immutable and shared
/// across frames.
struct Models {
  EgfgWeights egfg;
  HeadWeights head;
  TeacherWeights teacher;
  PerScale<ConvKernel> adapters;
  AnchorGrid anchors;

  static Models build(const RunConfig& cfg);
};

struct StereoResult {
  EgfgTrace trace;
  HeadOutputs head;
  std::vector<ObjectLabel> detections;
};

/// Images are taken as 0..255 intensities and scaled by 1/255 before the
/// backbone.
StereoResult run_stereo(const Frame& frame, const RunConfig& cfg, const Models& models);

/// Names accepted by --dump, e.g. "F_l1", "F_cv2", "F_sv3", "F_gv1", "F_bev2",
/// "F_gf3", "F_sem", "head_in".
std::map<std::string, const Tensor*> stereo_tensors(const EgfgTrace& trace);

struct DistillResult {
  TeacherTrace teacher;
  Tensor fg_mask;
  Tensor sparse_mask;
  DistillLoss loss;
};

/// Teacher features are computed from the frame's LiDAR unless `teacher`
/// supplies F_lgf^1..3 directly.
DistillResult run_distill(const Frame& frame, const PerScale<Tensor>& student, const RunConfig& cfg,
                          const Models& models, const std::optional<PerScale<Tensor>>& teacher = std::nullopt);

/// Boxes to KITTI label rows with a score column (alpha and 2D box derived).
std::vector<ObjectLabel> boxes_to_labels(std::span<const Box3D> boxes, const CameraRig& rig, double width,
                                         double height);

/// Non-DontCare ground-truth boxes of a frame.
std::vector<Box3D> gt_boxes(const Frame& frame);

}  // namespace esgn
