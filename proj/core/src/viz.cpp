#include "esgn/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "esgn/error.hpp"

namespace esgn {

const std::array<std::array<int, 2>, 12>& box_edges() noexcept {
  static constexpr std::array<std::array<int, 2>, 12> kEdges{{{0, 1}, {1, 2}, {2, 3}, {3, 0},
                                                              {4, 5}, {5, 6}, {6, 7}, {7, 4},
                                                              {0, 4}, {1, 5}, {2, 6}, {3, 7}}};
  return kEdges;
}

namespace {

class Canvas {
 public:
  Canvas(std::size_t w, std::size_t h) : w_(w), h_(h), px_(w * h) {}

  void set(long x, long y, Rgb c) {
    if (x < 0 || y < 0 || x >= static_cast<long>(w_) || y >= static_cast<long>(h_)) return;
    px_[static_cast<std::size_t>(y) * w_ + static_cast<std::size_t>(x)] = c;
  }

  // Bresenham; endpoints are clamped to a generous window so far-off
  // projections do not loop forever.
  void line(double x0d, double y0d, double x1d, double y1d, Rgb c) {
    const double lim = 4.0 * static_cast<double>(std::max(w_, h_));
    long x0 = std::lround(std::clamp(x0d, -lim, lim));
    long y0 = std::lround(std::clamp(y0d, -lim, lim));
    const long x1 = std::lround(std::clamp(x1d, -lim, lim));
    const long y1 = std::lround(std::clamp(y1d, -lim, lim));
    const long dx = std::abs(x1 - x0);
    const long dy = -std::abs(y1 - y0);
    const long sx = x0 < x1 ? 1 : -1;
    const long sy = y0 < y1 ? 1 : -1;
    long err = dx + dy;
    while (true) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const long e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  std::vector<Rgb>& pixels() { return px_; }

 private:
  std::size_t w_;
  std::size_t h_;
  std::vector<Rgb> px_;
};

void draw_boxes(Canvas& canvas, std::span<const Box3D> boxes, const CameraRig& rig, Rgb color,
                std::vector<std::array<double, 2>>& corners) {
  for (const Box3D& b : boxes) {
    const auto c3 = box_corners(b);
    std::array<PixelProjection, 8> p{};
    std::array<bool, 8> front{};
    for (int i = 0; i < 8; ++i) {
      front[i] = c3[i].z > 0.1;
      p[i] = rig.project(c3[i]);
    }
    for (const auto& e : box_edges()) {
      if (front[e[0]] && front[e[1]]) canvas.line(p[e[0]].u, p[e[0]].v, p[e[1]].u, p[e[1]].v, color);
    }
    for (int i = 0; i < 8; ++i) {
      if (front[i]) corners.push_back({p[i].u, p[i].v});
    }
  }
}

}  // namespace

std::vector<std::uint8_t> render_ppm(const Tensor& image, std::span<const Box3D> gt, std::span<const Box3D> dets,
                                     const CameraRig& rig) {
  if (image.ndim() != 3 || image.extent(0) != 1) throw DimensionError("render_ppm expects a [1,H,W] image");
  const std::size_t h = image.extent(1);
  const std::size_t w = image.extent(2);
  Canvas canvas(w, h);
  for (std::size_t i = 0; i < w * h; ++i) {
    const auto v = static_cast<std::uint8_t>(std::clamp(std::lround(image[i]), 0L, 255L));
    canvas.pixels()[i] = {v, v, v};
  }
  std::vector<std::array<double, 2>> corners;
  draw_boxes(canvas, gt, rig, kGtColor, corners);
  draw_boxes(canvas, dets, rig, kDetColor, corners);
  for (const auto& c : corners) canvas.set(std::lround(c[0]), std::lround(c[1]), kCornerColor);

  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + 3 * w * h);
  for (const Rgb& p : canvas.pixels()) {
    out.push_back(p.r);
    out.push_back(p.g);
    out.push_back(p.b);
  }
  return out;
}

std::string render_ply(std::span<const LidarPoint> camera_points, std::span<const Box3D> boxes) {
  std::ostringstream os;
  os << "ply\nformat ascii 1.0\n"
     << "element vertex " << camera_points.size() + 8 * boxes.size() << '\n'
     << "property float x\nproperty float y\nproperty float z\n"
     << "element edge " << 12 * boxes.size() << '\n'
     << "property int vertex1\nproperty int vertex2\nend_header\n";
  char buf[96];
  for (const LidarPoint& p : camera_points) {
    std::snprintf(buf, sizeof buf, "%.4f %.4f %.4f\n", p.x, p.y, p.z);
    os << buf;
  }
  for (const Box3D& b : boxes) {
    for (const Vec3& c : box_corners(b)) {
      std::snprintf(buf, sizeof buf, "%.4f %.4f %.4f\n", c.x, c.y, c.z);
      os << buf;
    }
  }
  const std::size_t base = camera_points.size();
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    for (const auto& e : box_edges()) {
      os << base + 8 * k + static_cast<std::size_t>(e[0]) << ' ' << base + 8 * k + static_cast<std::size_t>(e[1])
         << '\n';
    }
  }
  return os.str();
}

}  // namespace esgn
