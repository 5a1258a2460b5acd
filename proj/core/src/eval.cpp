#include "esgn/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "esgn/detect.hpp"

namespace esgn {

bool DifficultyBucket::eligible(const ObjectLabel& gt) const noexcept {
  return gt.bbox_height() >= min_height && gt.occluded <= max_occlusion && gt.truncated <= max_truncation;
}

std::array<DifficultyBucket, 3> DifficultyBucket::kitti() {
  return {DifficultyBucket{"easy", 40.0, 0, 0.15}, DifficultyBucket{"moderate", 25.0, 1, 0.30},
          DifficultyBucket{"hard", 25.0, 2, 0.50}};
}

double iou_2d(const std::array<double, 4>& a, const std::array<double, 4>& b) noexcept {
  const double iw = std::min(a[2], b[2]) - std::max(a[0], b[0]);
  const double ih = std::min(a[3], b[3]) - std::max(a[1], b[1]);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

FrameMatch match_frame(std::span<const ObjectLabel> detections, std::span<const ObjectLabel> gts, const IouFn& iou,
                       double threshold, const DifficultyBucket& bucket, const std::string& cls) {
  enum class GtRole { kEligible, kIgnored, kDontCare, kOther };
  std::vector<GtRole> role(gts.size(), GtRole::kOther);
  FrameMatch m;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const ObjectLabel& gt = gts[g];
    if (gt.dont_care()) {
      role[g] = GtRole::kDontCare;
    } else if (gt.type == cls) {
      role[g] = bucket.eligible(gt) ? GtRole::kEligible : GtRole::kIgnored;
    } else if (cls == "Car" && gt.type == "Van") {
      role[g] = GtRole::kIgnored;
    }
    if (role[g] == GtRole::kEligible) ++m.num_gt;
  }

  std::vector<std::size_t> order;
  for (std::size_t d = 0; d < detections.size(); ++d) {
    if (detections[d].type == cls) order.push_back(d);
  }
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) {
    return detections[a].box.score > detections[b].box.score;
  });

  std::vector<bool> taken(gts.size(), false);
  for (std::size_t d : order) {
    const ObjectLabel& det = detections[d];
    double best = threshold;
    std::size_t best_gt = gts.size();
    bool hits_ignored = false;
    bool hits_dont_care = false;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (role[g] == GtRole::kDontCare) {
        hits_dont_care = hits_dont_care || iou_2d(det.bbox, gts[g].bbox) > 0.5;
        continue;
      }
      if (role[g] == GtRole::kOther) continue;
      const double v = iou(det.box, gts[g].box);
      if (v <= threshold) continue;
      if (role[g] == GtRole::kIgnored) {
        hits_ignored = true;
      } else if (!taken[g] && v > best) {
        best = v;
        best_gt = g;
      }
    }
    if (best_gt < gts.size()) {
      taken[best_gt] = true;
      ++m.tp;
      m.scored.push_back({det.box.score, true});
    } else if (hits_ignored || hits_dont_care || det.bbox_height() < bucket.min_height) {
      ++m.ignored;
    } else {
      ++m.fp;
      m.scored.push_back({det.box.score, false});
    }
  }
  m.fn = m.num_gt - m.tp;
  return m;
}

std::vector<double> recall_sample_points(int count) {
  std::vector<double> pts;
  if (count == 11) {
    for (int i = 0; i <= 10; ++i) pts.push_back(i / 10.0);
  } else if (count == 40) {
    for (int i = 1; i <= 40; ++i) pts.push_back(i / 40.0);
  } else {
    throw std::invalid_argument("recall points must be 11 or 40");
  }
  return pts;
}

std::optional<PRCurve> average_precision(std::span<const FrameMatch> frames, int recall_points) {
  std::size_t total_gt = 0;
  std::vector<ScoredDetection> all;
  for (const FrameMatch& f : frames) {
    total_gt += f.num_gt;
    all.insert(all.end(), f.scored.begin(), f.scored.end());
  }
  if (total_gt == 0) return std::nullopt;
  std::ranges::stable_sort(all, [](const ScoredDetection& a, const ScoredDetection& b) { return a.score > b.score; });

  // Operating points only at score boundaries so tied scores enter together.
  std::vector<double> prec;
  std::vector<double> rec;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].true_positive) ++tp;
    if (i + 1 < all.size() && all[i + 1].score == all[i].score) continue;
    prec.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    rec.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }
  // Suffix maximum gives the interpolated precision envelope.
  for (std::size_t i = prec.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);

  PRCurve curve;
  curve.recall_points = recall_sample_points(recall_points);
  double sum = 0.0;
  for (double r : curve.recall_points) {
    const auto it = std::ranges::lower_bound(rec, r - 1e-12);
    const double p = it == rec.end() ? 0.0 : prec[static_cast<std::size_t>(it - rec.begin())];
    curve.precision.push_back(p);
    sum += p;
  }
  curve.ap = 100.0 * sum / static_cast<double>(curve.recall_points.size());
  return curve;
}

std::vector<EvalRow> evaluate(std::span<const std::vector<ObjectLabel>> gts,
                              std::span<const std::vector<ObjectLabel>> dets, const EvalOptions& opts) {
  if (gts.size() != dets.size()) throw std::invalid_argument("evaluate: frame counts differ");
  std::vector<EvalRow> rows;
  for (Metric metric : {Metric::kAp3d, Metric::kApBev}) {
    const IouFn fn = metric == Metric::kAp3d ? IouFn(iou_3d) : IouFn(rotated_iou_bev);
    for (double thr : opts.iou_thresholds) {
      for (const DifficultyBucket& bucket : DifficultyBucket::kitti()) {
        std::vector<FrameMatch> matches;
        matches.reserve(gts.size());
        for (std::size_t f = 0; f < gts.size(); ++f) matches.push_back(match_frame(dets[f], gts[f], fn, thr, bucket));
        EvalRow row;
        row.metric = metric;
        row.bucket = bucket.name;
        row.iou_threshold = thr;
        if (auto curve = average_precision(matches, opts.recall_points)) row.ap = curve->ap;
        rows.push_back(row);
      }
    }
  }
  return rows;
}

namespace {
const char* metric_name(Metric m) { return m == Metric::kAp3d ? "AP3D" : "APBEV"; }
}  // namespace

std::string format_machine(std::span<const EvalRow> rows) {
  std::ostringstream os;
  char buf[160];
  for (const EvalRow& r : rows) {
    if (r.ap) {
      std::snprintf(buf, sizeof buf, "class=%s metric=%s bucket=%s iou=%.2f ap=%.4f\n", r.cls.c_str(),
                    metric_name(r.metric), r.bucket.c_str(), r.iou_threshold, *r.ap);
    } else {
      std::snprintf(buf, sizeof buf, "class=%s metric=%s bucket=%s iou=%.2f ap=nan\n", r.cls.c_str(),
                    metric_name(r.metric), r.bucket.c_str(), r.iou_threshold);
    }
    os << buf;
  }
  return os.str();
}

std::string format_table(std::span<const EvalRow> rows) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-6s %-6s %-5s %9s %9s %9s\n", "class", "metric", "iou", "easy", "moderate", "hard");
  os << buf;
  for (std::size_t i = 0; i + 2 < rows.size(); i += 3) {
    std::string cells[3];
    for (std::size_t k = 0; k < 3; ++k) {
      char c[32];
      if (rows[i + k].ap) {
        std::snprintf(c, sizeof c, "%9.2f", *rows[i + k].ap);
      } else {
        std::snprintf(c, sizeof c, "%9s", "-");
      }
      cells[k] = c;
    }
    std::snprintf(buf, sizeof buf, "%-6s %-6s %-5.2f %s %s %s\n", rows[i].cls.c_str(), metric_name(rows[i].metric),
                  rows[i].iou_threshold, cells[0].c_str(), cells[1].c_str(), cells[2].c_str());
    os << buf;
  }
  return os.str();
}

}  // namespace esgn
