#include "esgn/detect.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "esgn/error.hpp"

namespace esgn {

AnchorGrid make_anchors(const VoxelGridSpec& spec, const AnchorConfig& cfg) {
  if (!(cfg.h > 0 && cfg.w > 0 && cfg.l > 0)) throw ConfigError("anchor template dims must be positive");
  AnchorGrid grid;
  grid.nx = spec.nx();
  grid.nz = spec.nz();
  grid.anchors.reserve(grid.nx * grid.nz * kAnchorsPerCell);
  for (std::size_t xi = 0; xi < grid.nx; ++xi) {
    for (std::size_t zi = 0; zi < grid.nz; ++zi) {
      for (double yaw : cfg.yaws) {
        Box3D a;
        a.x = spec.center_x(xi);
        a.y = cfg.y;
        a.z = spec.center_z(zi);
        a.h = cfg.h;
        a.w = cfg.w;
        a.l = cfg.l;
        a.yaw = yaw;
        grid.anchors.push_back(a);
      }
    }
  }
  return grid;
}

BoxResidual encode_box(const Box3D& gt, const Box3D& anchor) {
  if (!(gt.h > 0 && gt.w > 0 && gt.l > 0)) throw std::invalid_argument("encode_box: gt dims must be positive");
  if (!(anchor.h > 0 && anchor.w > 0 && anchor.l > 0)) {
    throw std::invalid_argument("encode_box: anchor dims must be positive");
  }
  const double diag = std::sqrt(anchor.w * anchor.w + anchor.l * anchor.l);
  return {(gt.x - anchor.x) / diag,       (gt.y - anchor.y) / anchor.h,   (gt.z - anchor.z) / diag,
          std::log(gt.h / anchor.h),      std::log(gt.w / anchor.w),      std::log(gt.l / anchor.l),
          gt.yaw - anchor.yaw};
}

Box3D decode_box(const BoxResidual& r, const Box3D& anchor) {
  const double diag = std::sqrt(anchor.w * anchor.w + anchor.l * anchor.l);
  Box3D b;
  b.x = r[0] * diag + anchor.x;
  b.y = r[1] * anchor.h + anchor.y;
  b.z = r[2] * diag + anchor.z;
  b.h = std::exp(r[3]) * anchor.h;
  b.w = std::exp(r[4]) * anchor.w;
  b.l = std::exp(r[5]) * anchor.l;
  b.yaw = r[6] + anchor.yaw;
  b.label = anchor.label;
  return b;
}

double polygon_area(std::span<const Point2> poly) noexcept {
  double acc = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point2& a = poly[i];
    const Point2& b = poly[(i + 1) % poly.size()];
    acc += a.x * b.z - b.x * a.z;
  }
  return 0.5 * acc;
}

std::array<Point2, 4> bev_corners(const Box3D& b) noexcept {
  const auto c3 = box_corners(b);
  std::array<Point2, 4> p{};
  for (int i = 0; i < 4; ++i) p[i] = {c3[i].x, c3[i].z};
  if (polygon_area(p) < 0.0) std::reverse(p.begin(), p.end());
  return p;
}

std::vector<Point2> clip_convex(std::span<const Point2> subject, std::span<const Point2> clip) {
  std::vector<Point2> out(subject.begin(), subject.end());
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Point2 a = clip[e];
    const Point2 b = clip[(e + 1) % clip.size()];
    auto side = [&](const Point2& p) { return (b.x - a.x) * (p.z - a.z) - (b.z - a.z) * (p.x - a.x); };
    std::vector<Point2> in = std::move(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Point2& cur = in[i];
      const Point2& prev = in[(i + in.size() - 1) % in.size()];
      const double sc = side(cur);
      const double sp = side(prev);
      if (sc >= 0.0) {
        if (sp < 0.0) {
          const double t = sp / (sp - sc);
          out.push_back({prev.x + t * (cur.x - prev.x), prev.z + t * (cur.z - prev.z)});
        }
        out.push_back(cur);
      } else if (sp >= 0.0) {
        const double t = sp / (sp - sc);
        out.push_back({prev.x + t * (cur.x - prev.x), prev.z + t * (cur.z - prev.z)});
      }
    }
  }
  return out;
}

double bev_intersection(const Box3D& a, const Box3D& b) {
  const double ra = 0.5 * std::hypot(a.l, a.w);
  const double rb = 0.5 * std::hypot(b.l, b.w);
  if (std::hypot(a.x - b.x, a.z - b.z) > ra + rb) return 0.0;
  // Clip in a's box frame: a becomes axis-aligned at the origin, so
  // identical boxes intersect in exactly their own area.
  const double c = std::cos(a.yaw);
  const double s = std::sin(a.yaw);
  const double dx = b.x - a.x;
  const double dz = b.z - a.z;
  Box3D la = a;
  la.x = 0.0;
  la.z = 0.0;
  la.yaw = 0.0;
  Box3D lb = b;
  lb.x = c * dx - s * dz;
  lb.z = s * dx + c * dz;
  lb.yaw = b.yaw - a.yaw;
  const auto pa = bev_corners(la);
  const auto pb = bev_corners(lb);
  const auto poly = clip_convex(pa, pb);
  if (poly.size() < 3) return 0.0;
  return std::max(0.0, polygon_area(poly));
}

namespace {
constexpr double kDegenerateArea = 1e-12;
}

double rotated_iou_bev(const Box3D& a, const Box3D& b) {
  const double area_a = a.l * a.w;
  const double area_b = b.l * b.w;
  if (!(area_a > kDegenerateArea) || !(area_b > kDegenerateArea)) return 0.0;
  const double inter = bev_intersection(a, b);
  const double uni = area_a + area_b - inter;
  if (!(uni > kDegenerateArea)) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d(const Box3D& a, const Box3D& b) {
  const double vol_a = a.l * a.w * a.h;
  const double vol_b = b.l * b.w * b.h;
  if (!(vol_a > kDegenerateArea) || !(vol_b > kDegenerateArea)) return 0.0;
  // Vertical extents relative to a's bottom face: [-a.h, 0] and [dy - b.h, dy].
  const double dy = b.y - a.y;
  const double overlap_h = std::min(0.0, dy) - std::max(-a.h, dy - b.h);
  if (overlap_h <= 0.0) return 0.0;
  const double inter = bev_intersection(a, b) * overlap_h;
  const double uni = vol_a + vol_b - inter;
  if (!(uni > kDegenerateArea)) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

HeadWeights HeadWeights::seeded(std::size_t in_channels, std::uint64_t seed) {
  return {seeded_kernel(derive_seed(seed, 600), kAnchorsPerCell, in_channels, 1, 1),
          seeded_kernel(derive_seed(seed, 601), kAnchorsPerCell * kResidualSize, in_channels, 1, 1),
          seeded_kernel(derive_seed(seed, 602), kAnchorsPerCell * 2, in_channels, 1, 1)};
}

HeadOutputs run_head(const Tensor& input, const HeadWeights& weights) {
  if (input.ndim() != 3) throw DimensionError("run_head expects [C,X,Z]");
  const Tensor cls = conv2d(input, weights.cls);
  const Tensor reg = conv2d(input, weights.reg);
  const Tensor dir = conv2d(input, weights.dir);
  const std::size_t nx = input.extent(1);
  const std::size_t nz = input.extent(2);
  HeadOutputs out;
  const std::size_t n = nx * nz * kAnchorsPerCell;
  out.cls_logits.resize(n);
  out.residuals.resize(n);
  out.dir_logits.resize(n);
  for (std::size_t xi = 0; xi < nx; ++xi) {
    for (std::size_t zi = 0; zi < nz; ++zi) {
      for (std::size_t a = 0; a < kAnchorsPerCell; ++a) {
        const std::size_t k = (xi * nz + zi) * kAnchorsPerCell + a;
        out.cls_logits[k] = cls(a, xi, zi);
        for (std::size_t r = 0; r < kResidualSize; ++r) out.residuals[k][r] = reg(a * kResidualSize + r, xi, zi);
        out.dir_logits[k] = {dir(a * 2, xi, zi), dir(a * 2 + 1, xi, zi)};
      }
    }
  }
  return out;
}

int direction_bin(double gt_yaw, double anchor_yaw) noexcept {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double rel = std::fmod(gt_yaw - anchor_yaw, kTwoPi);
  if (rel < 0.0) rel += kTwoPi;
  return rel < std::numbers::pi ? 0 : 1;
}

AnchorTargets assign_targets(std::span<const Box3D> anchors, std::span<const Box3D> gts, const MatchConfig& cfg) {
  const std::size_t n = anchors.size();
  AnchorTargets t;
  t.labels.assign(n, AnchorLabel::kNegative);
  t.matched.assign(n, -1);
  t.residuals.assign(n, BoxResidual{});
  t.dir_bins.assign(n, 0);
  t.gt_boxes.assign(n, Box3D{});
  if (gts.empty()) return t;

  std::vector<double> best_iou(n, 0.0);
  std::vector<int> best_gt(n, -1);
  std::vector<double> gt_best(gts.size(), 0.0);
  std::vector<std::size_t> gt_best_anchor(gts.size(), n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double iou = rotated_iou_bev(anchors[i], gts[g]);
      if (iou > best_iou[i]) {
        best_iou[i] = iou;
        best_gt[i] = static_cast<int>(g);
      }
      if (iou > gt_best[g]) {
        gt_best[g] = iou;
        gt_best_anchor[g] = i;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (best_iou[i] >= cfg.pos_iou) {
      t.labels[i] = AnchorLabel::kPositive;
      t.matched[i] = best_gt[i];
    } else if (best_iou[i] >= cfg.neg_iou) {
      t.labels[i] = AnchorLabel::kIgnore;
    }
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const std::size_t i = gt_best_anchor[g];
    if (i < n && gt_best[g] > 0.0) {
      t.labels[i] = AnchorLabel::kPositive;
      t.matched[i] = static_cast<int>(g);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (t.labels[i] != AnchorLabel::kPositive) continue;
    const Box3D& gt = gts[static_cast<std::size_t>(t.matched[i])];
    t.residuals[i] = encode_box(gt, anchors[i]);
    t.dir_bins[i] = direction_bin(gt.yaw, anchors[i].yaw);
    t.gt_boxes[i] = gt;
  }
  return t;
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {
// log(sigmoid(x)) without overflow.
double log_sigmoid(double x) noexcept { return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
}  // namespace

double focal_loss(double logit, bool positive, double alpha, double gamma) noexcept {
  const double p = sigmoid(logit);
  if (positive) return -alpha * std::pow(1.0 - p, gamma) * log_sigmoid(logit);
  return -(1.0 - alpha) * std::pow(p, gamma) * log_sigmoid(-logit);
}

double smooth_l1(double diff, double beta) noexcept {
  const double a = std::abs(diff);
  return a < beta ? 0.5 * a * a / beta : a - 0.5 * beta;
}

LossBreakdown detection_losses(const HeadOutputs& head, std::span<const Box3D> anchors, const AnchorTargets& targets,
                               const LossConfig& cfg) {
  const std::size_t n = head.size();
  if (anchors.size() != n || targets.labels.size() != n || head.residuals.size() != n || head.dir_logits.size() != n) {
    throw DimensionError("detection_losses: head, anchors and targets differ in length");
  }
  LossBreakdown out;
  double cls = 0.0;
  double l1 = 0.0;
  double dir = 0.0;
  double iou = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const AnchorLabel label = targets.labels[i];
    if (label == AnchorLabel::kIgnore) continue;
    const bool pos = label == AnchorLabel::kPositive;
    cls += focal_loss(head.cls_logits[i], pos, cfg.focal_alpha, cfg.focal_gamma);
    if (!pos) continue;
    ++out.num_positive;
    for (std::size_t k = 0; k < kResidualSize; ++k) {
      l1 += smooth_l1(head.residuals[i][k] - targets.residuals[i][k], cfg.smooth_l1_beta);
    }
    const auto& logits = head.dir_logits[i];
    const double m = std::max(logits[0], logits[1]);
    const double lse = m + std::log(std::exp(logits[0] - m) + std::exp(logits[1] - m));
    dir += lse - logits[static_cast<std::size_t>(targets.dir_bins[i])];
    iou += 1.0 - iou_3d(decode_box(head.residuals[i], anchors[i]), targets.gt_boxes[i]);
  }
  const double norm = std::max<double>(1.0, static_cast<double>(out.num_positive));
  out.cls = cls / norm;
  if (out.num_positive == 0) {
    out.no_positives = true;
  } else {
    out.l1 = l1 / norm;
    out.dir = dir / norm;
    out.iou = iou / norm;
  }
  out.total = out.cls + out.l1 + out.dir + out.iou;
  return out;
}

std::vector<std::size_t> nms_bev(std::span<const Box3D> ordered, double iou_threshold) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    const bool suppressed = std::ranges::any_of(
        keep, [&](std::size_t k) { return rotated_iou_bev(ordered[k], ordered[i]) > iou_threshold; });
    if (!suppressed) keep.push_back(i);
  }
  return keep;
}

std::vector<Box3D> decode_detections(const HeadOutputs& head, std::span<const Box3D> anchors, const DecodeConfig& cfg) {
  if (anchors.size() != head.size()) throw DimensionError("decode_detections: anchor count differs from head");
  struct Candidate {
    double score;
    std::size_t anchor;
  };
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < head.size(); ++i) {
    const double s = sigmoid(head.cls_logits[i]);
    if (s >= cfg.score_threshold) cands.push_back({s, i});
  }
  std::ranges::sort(cands, [](const Candidate& a, const Candidate& b) {
    return a.score != b.score ? a.score > b.score : a.anchor < b.anchor;
  });
  if (cands.size() > cfg.max_candidates) cands.resize(cfg.max_candidates);

  std::vector<Box3D> boxes;
  boxes.reserve(cands.size());
  for (const Candidate& c : cands) {
    const Box3D& anchor = anchors[c.anchor];
    Box3D b = decode_box(head.residuals[c.anchor], anchor);
    const auto& dl = head.dir_logits[c.anchor];
    const int bin = dl[1] > dl[0] ? 1 : 0;
    double rel = std::fmod(b.yaw - anchor.yaw, std::numbers::pi);
    if (rel < 0.0) rel += std::numbers::pi;
    b.yaw = wrap_angle(anchor.yaw + rel + bin * std::numbers::pi);
    b.score = c.score;
    boxes.push_back(b);
  }
  std::vector<Box3D> out;
  for (std::size_t k : nms_bev(boxes, cfg.nms_iou)) {
    if (out.size() >= cfg.max_detections) break;
    out.push_back(boxes[k]);
  }
  return out;
}

}  // namespace esgn
