#include <doctest.h>

#include <cmath>
#include <numbers>

#include "esgn/detect.hpp"
#include "esgn/error.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace esgn;

namespace {

Box3D random_box(Lcg& rng, double spread = 3.0) {
  Box3D b;
  b.x = rng.uniform(-spread, spread);
  b.y = rng.uniform(0.5, 2.0);
  b.z = rng.uniform(10 - spread, 10 + spread);
  b.h = rng.uniform(0.5, 2.5);
  b.w = rng.uniform(0.5, 2.5);
  b.l = rng.uniform(0.5, 5.0);
  b.yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
  return b;
}

Box3D square(double x, double z) {
  Box3D b;
  b.x = x;
  b.z = z;
  b.w = 2;
  b.l = 2;
  b.h = 1;
  return b;
}

}  // namespace

TEST_SUITE("detect") {
  TEST_CASE("anchors") {
    const auto spec = VoxelGridSpec::stereo_default();
    const AnchorGrid g = make_anchors(spec);
    CHECK(g.anchors.size() == 150 * 144 * 2);
    CHECK(g.anchors[(3 * 144 + 5) * 2 + 1].x == spec.center_x(3));
    CHECK(g.anchors[(3 * 144 + 5) * 2 + 1].z == spec.center_z(5));
    CHECK(g.anchors[1].yaw == doctest::Approx(std::numbers::pi / 2));
    AnchorConfig bad;
    bad.w = 0;
    CHECK_THROWS(make_anchors(spec, bad));
  }

  TEST_CASE("box codec") {
    Box3D a = square(0, 10);
    a.w = std::sqrt(2.0);
    a.l = std::sqrt(2.0);
    const BoxResidual zero = encode_box(a, a);
    for (double v : zero) CHECK(v == 0.0);
    Box3D g = a;
    g.x += 1.0;
    CHECK(encode_box(g, a)[0] == doctest::Approx(0.5).epsilon(1e-15));
    Box3D bad = a;
    bad.h = 0;
    CHECK_THROWS(encode_box(bad, a));

    Lcg rng(1);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
      const Box3D gt = random_box(rng), an = random_box(rng);
      const Box3D back = decode_box(encode_box(gt, an), an);
      for (double d : {back.x - gt.x, back.y - gt.y, back.z - gt.z, back.h - gt.h, back.w - gt.w, back.l - gt.l,
                       back.yaw - gt.yaw}) {
        worst = std::max(worst, std::abs(d));
      }
    }
    CHECK(worst <= 1e-9);

    // Translation covariance on dyadic coordinates is exact.
    auto q = [](double v) { return std::round(v * 64) / 64; };
    bool exact = true;
    for (int i = 0; i < 200; ++i) {
      Box3D gt = random_box(rng), an = random_box(rng);
      for (Box3D* b : {&gt, &an}) {
        b->x = q(b->x);
        b->y = q(b->y);
        b->z = q(b->z);
      }
      const double tx = q(rng.uniform(-5, 5)), ty = q(rng.uniform(-1, 1)), tz = q(rng.uniform(-5, 5));
      Box3D gt2 = gt, an2 = an;
      gt2.x += tx;
      an2.x += tx;
      gt2.y += ty;
      an2.y += ty;
      gt2.z += tz;
      an2.z += tz;
      exact = exact && encode_box(gt, an) == encode_box(gt2, an2);
    }
    CHECK(exact);
  }

  TEST_CASE("rotated IoU: analytic cases") {
    const Box3D a = square(0, 10);
    CHECK(rotated_iou_bev(a, a) == 1.0);
    CHECK(iou_3d(a, a) == 1.0);
    CHECK(rotated_iou_bev(a, square(100, 10)) == 0.0);
    CHECK(std::abs(rotated_iou_bev(a, square(1, 10)) - 1.0 / 3.0) <= 1e-9);
    Box3D r = a;
    r.yaw = std::numbers::pi / 4;
    // Square rotated 45 degrees about its own center: intersection is a regular octagon.
    const double oct = 8 * (std::sqrt(2.0) - 1);  // area of octagon inside a 2x2 square
    CHECK(rotated_iou_bev(a, r) == doctest::Approx(oct / (8 - oct)).epsilon(1e-9));
    Box3D flat = a;
    flat.w = 0;
    CHECK(rotated_iou_bev(a, flat) == 0.0);
    // Vertical: half-overlapping heights halve the 3D IoU of identical footprints.
    Box3D up = a;
    up.y -= 0.5;
    CHECK(iou_3d(a, up) == doctest::Approx(0.5 / 1.5).epsilon(1e-12));
  }

  TEST_CASE("rotated IoU: properties") {
    Lcg rng(2);
    for (int i = 0; i < 300; ++i) {
      const Box3D a = random_box(rng, 1.5), b = random_box(rng, 1.5);
      const double ab = rotated_iou_bev(a, b);
      CHECK(std::abs(ab - rotated_iou_bev(b, a)) <= 1e-9);
      CHECK(std::abs(iou_3d(a, b) - iou_3d(b, a)) <= 1e-9);
      CHECK(ab >= 0.0);
      CHECK(ab <= 1.0);
      CHECK(rotated_iou_bev(a, a) == 1.0);
      CHECK(iou_3d(b, b) == 1.0);
      // Rigid motion in the x-z plane applied to both boxes.
      const double th = rng.uniform(-3, 3), tx = rng.uniform(-20, 20), tz = rng.uniform(-20, 20);
      auto move = [&](Box3D b0) {
        // Yaw rotates x toward -z: x' = c x - s z is the along-axis of the footprint.
        const double c = std::cos(th), s = std::sin(th);
        const double x = c * b0.x + s * b0.z, z = -s * b0.x + c * b0.z;
        b0.x = x + tx;
        b0.z = z + tz;
        b0.yaw += th;
        return b0;
      };
      CHECK(std::abs(rotated_iou_bev(move(a), move(b)) - ab) <= 1e-6);
    }
  }

  TEST_CASE("rotated IoU vs Monte Carlo") {
    Lcg rng(3);
    double worst = 0;
    for (int i = 0; i < 200; ++i) {
      const Box3D a = random_box(rng, 1.0), b = random_box(rng, 1.0);
      worst = std::max(worst, std::abs(rotated_iou_bev(a, b) - oracle::monte_carlo_iou_bev(a, b, 1000000, i)));
    }
    CHECK(worst <= 0.01);
  }

  TEST_CASE("direction bins and target assignment") {
    CHECK(direction_bin(0.1, 0.0) == 0);
    CHECK(direction_bin(-0.1, 0.0) == 1);
    CHECK(direction_bin(3.0, 0.0) == 0);
    CHECK(direction_bin(0.0, std::numbers::pi / 2) == 1);

    const auto spec = VoxelGridSpec({-2, 2}, {-1, 3}, {8, 12}, {0.4, 0.8, 0.4});
    const AnchorGrid g = make_anchors(spec);
    Box3D gt;
    gt.x = spec.center_x(4);
    gt.z = spec.center_z(5);
    gt.y = 1.65;
    gt.h = 1.56;
    gt.w = 1.6;
    gt.l = 3.9;
    gt.yaw = 0.05;
    const AnchorTargets t = assign_targets(g.anchors, std::vector<Box3D>{gt});
    const std::size_t best = (4 * spec.nz() + 5) * 2;
    CHECK(t.labels[best] == AnchorLabel::kPositive);
    CHECK(t.matched[best] == 0);
    CHECK(t.dir_bins[best] == 0);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < t.labels.size(); ++i) {
      if (t.labels[i] != AnchorLabel::kPositive) continue;
      ++pos;
      CHECK(rotated_iou_bev(g.anchors[i], gt) >= 0.6 - 1e-12);
    }
    CHECK(pos >= 1);
    const AnchorTargets none = assign_targets(g.anchors, {});
    for (auto l : none.labels) CHECK(l == AnchorLabel::kNegative);
  }

  TEST_CASE("loss terms") {
    const LossConfig cfg;
    CHECK(smooth_l1(cfg.smooth_l1_beta, cfg.smooth_l1_beta) == doctest::Approx(cfg.smooth_l1_beta / 2));
    CHECK(focal_loss(20.0, true, 0.25, 2.0) < 1e-6);
    CHECK(focal_loss(-20.0, false, 0.25, 2.0) < 1e-6);

    // Random fixture against the scalar reference.
    const auto spec = VoxelGridSpec({-2, 2}, {-1, 3}, {8, 12}, {0.4, 0.8, 0.4});
    const AnchorGrid g = make_anchors(spec);
    Lcg rng(4);
    std::vector<Box3D> gts;
    for (int i = 0; i < 3; ++i) {
      Box3D b;
      b.x = rng.uniform(-1.5, 1.5);
      b.z = rng.uniform(8.5, 11.5);
      b.y = 1.65;
      b.h = 1.5;
      b.w = 1.6;
      b.l = 3.8;
      b.yaw = rng.uniform(-0.2, 0.2) + (i == 1 ? std::numbers::pi / 2 : 0.0);
      gts.push_back(b);
    }
    const AnchorTargets t = assign_targets(g.anchors, gts);
    HeadOutputs h;
    const std::size_t n = g.anchors.size();
    for (std::size_t i = 0; i < n; ++i) {
      h.cls_logits.push_back(rng.uniform(-4, 4));
      BoxResidual r;
      for (double& v : r) v = rng.uniform(-0.3, 0.3);
      h.residuals.push_back(r);
      h.dir_logits.push_back({rng.uniform(-2, 2), rng.uniform(-2, 2)});
    }
    const LossBreakdown got = detection_losses(h, g.anchors, t, cfg);
    const oracle::LossTerms ref = oracle::detection_losses(h, g.anchors, t, cfg);
    CHECK(got.num_positive > 0);
    CHECK(got.cls == doctest::Approx(ref.cls).epsilon(1e-6));
    CHECK(got.l1 == doctest::Approx(ref.l1).epsilon(1e-6));
    CHECK(got.dir == doctest::Approx(ref.dir).epsilon(1e-6));
    CHECK(got.iou == doctest::Approx(ref.iou).epsilon(1e-6));
    CHECK(got.total == doctest::Approx(ref.cls + ref.l1 + ref.dir + ref.iou).epsilon(1e-6));
    CHECK(got.total >= 0.0);

    // Single positive anchor, one residual off by beta.
    AnchorTargets single;
    single.labels = {AnchorLabel::kPositive};
    single.matched = {0};
    single.residuals = {BoxResidual{}};
    single.dir_bins = {0};
    single.gt_boxes = {g.anchors[0]};
    HeadOutputs one;
    one.cls_logits = {20.0};
    one.residuals = {BoxResidual{}};
    one.residuals[0][2] = cfg.smooth_l1_beta;
    one.dir_logits = {{20.0, -20.0}};
    const std::vector<Box3D> a0{g.anchors[0]};
    CHECK(detection_losses(one, a0, single, cfg).l1 == doctest::Approx(cfg.smooth_l1_beta / 2));

    // Perfect predictions at saturated logits.
    HeadOutputs perfect;
    for (std::size_t i = 0; i < n; ++i) {
      const bool pos = t.labels[i] == AnchorLabel::kPositive;
      perfect.cls_logits.push_back(pos ? 20.0 : -20.0);
      perfect.residuals.push_back(pos ? t.residuals[i] : BoxResidual{});
      perfect.dir_logits.push_back(t.dir_bins[i] == 0 ? std::array<double, 2>{20, -20} : std::array<double, 2>{-20, 20});
    }
    const LossBreakdown p = detection_losses(perfect, g.anchors, t, cfg);
    CHECK(p.l1 == 0.0);
    CHECK(p.iou == 0.0);
    CHECK(p.cls < 1e-6);
    CHECK(p.total < 1e-6);

    // No positives: regression terms vanish and the flag is set.
    const AnchorTargets neg = assign_targets(g.anchors, {});
    const LossBreakdown z = detection_losses(h, g.anchors, neg, cfg);
    CHECK(z.no_positives);
    CHECK(z.l1 == 0.0);
    CHECK(z.dir == 0.0);
    CHECK(z.iou == 0.0);
  }

  TEST_CASE("NMS and decoding") {
    std::vector<Box3D> two{square(0, 10), square(0, 10)};
    two[0].score = 0.9;
    two[1].score = 0.8;
    CHECK(nms_bev(two, 0.5) == std::vector<std::size_t>{0});
    CHECK(nms_bev({}, 0.5).empty());

    Lcg rng(5);
    std::vector<Box3D> boxes;
    for (int i = 0; i < 50; ++i) boxes.push_back(random_box(rng, 3.0));
    CHECK(nms_bev(boxes, 0.3) == oracle::nms(boxes, 0.3));

    // Decode: two anchors at the same place, equal scores -> lower index wins.
    std::vector<Box3D> anchors{square(0, 10), square(0, 10), square(10, 10)};
    HeadOutputs h;
    h.cls_logits = {1.0, 1.0, -5.0};
    h.residuals.assign(3, BoxResidual{});
    h.dir_logits.assign(3, {1.0, 0.0});
    DecodeConfig dc;
    const auto dets = decode_detections(h, anchors, dc);
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].score == doctest::Approx(sigmoid(1.0)));
    CHECK(decode_detections(HeadOutputs{}, std::vector<Box3D>{}, dc).empty());
    // Direction bin flips the heading by pi.
    h.dir_logits[0] = {0.0, 1.0};
    CHECK(std::abs(std::abs(decode_detections(h, anchors, dc)[0].yaw) - std::numbers::pi) < 1e-12);
  }
}
