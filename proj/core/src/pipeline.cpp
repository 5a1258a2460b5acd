#include "esgn/pipeline.hpp"

#include <cmath>

#include "esgn/error.hpp"

namespace esgn {

Models Models::build(const RunConfig& cfg) {
  cfg.egfg.validate();
  Models m;
  m.egfg = EgfgWeights::seeded(cfg.egfg, cfg.seed);
  m.head = HeadWeights::seeded(cfg.egfg.bev_channels + cfg.egfg.pyramid.channels, cfg.seed);
  m.teacher = TeacherWeights::seeded(cfg.lidar, cfg.egfg.bev_channels, cfg.egfg.pyramid.kernel_size, cfg.seed);
  m.adapters = cfg.adapter == AdapterKind::kIdentity ? identity_adapters(cfg.egfg.bev_channels)
                                                     : seeded_adapters(cfg.egfg.bev_channels, cfg.seed);
  m.anchors = make_anchors(cfg.egfg.voxels, cfg.anchors);
  return m;
}

std::vector<ObjectLabel> boxes_to_labels(std::span<const Box3D> boxes, const CameraRig& rig, double width,
                                         double height) {
  std::vector<ObjectLabel> out;
  out.reserve(boxes.size());
  for (const Box3D& b : boxes) {
    ObjectLabel l;
    l.type = b.label;
    l.box = b;
    l.alpha = wrap_angle(b.yaw - std::atan2(b.x, b.z));
    l.bbox = project_box_2d(b, rig, width, height);
    l.has_score = true;
    out.push_back(l);
  }
  return out;
}

StereoResult run_stereo(const Frame& frame, const RunConfig& cfg, const Models& models) {
  if (frame.left.ndim() != 3 || frame.left.extent(1) != cfg.image_height ||
      frame.left.extent(2) != cfg.image_width) {
    throw DimensionError("frame " + frame.id + ": image is not " + std::to_string(cfg.image_height) + "x" +
                         std::to_string(cfg.image_width));
  }
  // 8-bit intensities are scaled to [0, 1] before the backbone.
  auto normalized = [](const Tensor& img) {
    Tensor out = img;
    for (double& v : out.data()) v /= 255.0;
    return out;
  };
  StereoResult r;
  r.trace = run_egfg(normalized(frame.left), normalized(frame.right), frame.rig, cfg.egfg, models.egfg);
  r.head = run_head(r.trace.head_input, models.head);
  const auto boxes = decode_detections(r.head, models.anchors.anchors, cfg.decode);
  r.detections = boxes_to_labels(boxes, frame.rig, static_cast<double>(cfg.image_width),
                                 static_cast<double>(cfg.image_height));
  return r;
}

std::map<std::string, const Tensor*> stereo_tensors(const EgfgTrace& t) {
  std::map<std::string, const Tensor*> named;
  for (std::size_t i = 0; i < kScales; ++i) {
    const std::string s = std::to_string(i + 1);
    named["F_l" + s] = &t.features.left[i];
    named["F_r" + s] = &t.features.right[i];
    named["F_cv" + s] = &t.cost[i];
    named["F_rsv" + s] = &t.stereo.raw[i];
    named["F_sv" + s] = &t.stereo.volume[i];
    named["F_gv" + s] = &t.geometry[i];
    named["F_bev" + s] = &t.bev[i];
    named["F_gf" + s] = &t.fused[i];
  }
  named["F_sem"] = &t.semantic;
  named["head_in"] = &t.head_input;
  return named;
}

std::vector<Box3D> gt_boxes(const Frame& frame) {
  std::vector<Box3D> boxes;
  for (const ObjectLabel& l : frame.labels) {
    if (!l.dont_care()) boxes.push_back(l.box);
  }
  return boxes;
}

DistillResult run_distill(const Frame& frame, const PerScale<Tensor>& student, const RunConfig& cfg,
                          const Models& models, const std::optional<PerScale<Tensor>>& teacher) {
  DistillResult r;
  const auto cam_points = points_to_camera(frame.points, frame.rig);
  const auto boxes = gt_boxes(frame);
  r.fg_mask = build_fg_mask(boxes, cfg.egfg.voxels);
  r.sparse_mask = build_sparse_mask(cam_points, cfg.egfg.voxels);
  if (teacher) {
    r.teacher.fused = *teacher;
  } else {
    const LidarVoxels voxels = voxelize(cam_points, cfg.lidar);
    r.teacher = teacher_features(voxels, cfg.lidar, cfg.egfg.voxels, models.teacher);
  }
  r.loss = distill_loss(student, r.teacher.fused, models.adapters, r.fg_mask, r.sparse_mask, cfg.distill);
  return r;
}

}  // namespace esgn
