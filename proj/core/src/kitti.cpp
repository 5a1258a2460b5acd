#include "esgn/kitti.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include "esgn/error.hpp"
#include "esgn/tensor_io.hpp"

namespace esgn {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t nl = text.find('\n', start);
    const std::size_t end = nl == std::string_view::npos ? text.size() : nl;
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return lines;
}

bool parse_double(std::string_view tok, double& out) {
  // strtod accepts the full KITTI float syntax (e.g. "7.215377e+02").
  std::string s(tok);
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

std::string fmt_fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

double det33(const Mat33& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

}  // namespace

double wrap_angle(double a) noexcept {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  a = std::fmod(a, kTwoPi);
  if (a <= -std::numbers::pi) a += kTwoPi;
  if (a > std::numbers::pi) a -= kTwoPi;
  return a;
}

CameraRig::CameraRig(const Mat34& p_left, const Mat34& p_right, const Mat33& r0_rect, const Mat34& tr_velo_to_cam)
    : p_left_(p_left), p_right_(p_right), r0_rect_(r0_rect), tr_velo_to_cam_(tr_velo_to_cam) {
  focal_ = p_left_[0];
  if (!(focal_ > 0.0)) throw ConfigError("camera rig: focal P_left[0,0] must be positive");
  baseline_ = (p_left_[3] - p_right_[3]) / focal_;
  if (!(baseline_ > 0.0)) throw ConfigError("camera rig: baseline must be positive");
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += r0_rect_[3 * i + k] * r0_rect_[3 * j + k];
      if (std::abs(dot - (i == j ? 1.0 : 0.0)) > 1e-4) {
        throw ConfigError("camera rig: R0_rect is not orthonormal");
      }
    }
  }
  if (det33(r0_rect_) < 0.0) throw ConfigError("camera rig: R0_rect is a reflection");
}

CameraRig CameraRig::ideal(double focal, double cu, double cv, double baseline) {
  const Mat34 pl{focal, 0, cu, 0, 0, focal, cv, 0, 0, 0, 1, 0};
  const Mat34 pr{focal, 0, cu, -focal * baseline, 0, focal, cv, 0, 0, 0, 1, 0};
  const Mat33 r0{1, 0, 0, 0, 1, 0, 0, 0, 1};
  const Mat34 tr{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
  return CameraRig(pl, pr, r0, tr);
}

namespace {
PixelProjection project_with(const Mat34& p, const Vec3& x) noexcept {
  const double a = p[0] * x.x + p[1] * x.y + p[2] * x.z + p[3];
  const double b = p[4] * x.x + p[5] * x.y + p[6] * x.z + p[7];
  const double c = p[8] * x.x + p[9] * x.y + p[10] * x.z + p[11];
  return {a / c, b / c, c};
}
}  // namespace

PixelProjection CameraRig::project(const Vec3& p) const noexcept { return project_with(p_left_, p); }
PixelProjection CameraRig::project_right(const Vec3& p) const noexcept { return project_with(p_right_, p); }

Vec3 CameraRig::velo_to_cam(const Vec3& p) const noexcept {
  const Mat34& t = tr_velo_to_cam_;
  const double cx = t[0] * p.x + t[1] * p.y + t[2] * p.z + t[3];
  const double cy = t[4] * p.x + t[5] * p.y + t[6] * p.z + t[7];
  const double cz = t[8] * p.x + t[9] * p.y + t[10] * p.z + t[11];
  const Mat33& r = r0_rect_;
  return {r[0] * cx + r[1] * cy + r[2] * cz, r[3] * cx + r[4] * cy + r[5] * cz, r[6] * cx + r[7] * cy + r[8] * cz};
}

CameraRig parse_calib(std::string_view text) {
  std::map<std::string, std::vector<double>, std::less<>> entries;
  std::map<std::string, std::string, std::less<>> errors;
  for (std::string_view line : split_lines(text)) {
    const std::size_t colon = line.find(':');
    if (colon == std::string_view::npos) continue;
    std::string key(split_ws(line.substr(0, colon)).empty() ? "" : split_ws(line.substr(0, colon)).front());
    std::vector<double> vals;
    for (std::string_view tok : split_ws(line.substr(colon + 1))) {
      double v = 0.0;
      if (!parse_double(tok, v)) {
        errors[key] = "bad number '" + std::string(tok) + "'";
        break;
      }
      vals.push_back(v);
    }
    entries[key] = std::move(vals);
  }
  auto fetch = [&](std::string_view key, std::size_t count) {
    if (auto e = errors.find(key); e != errors.end()) {
      throw ParseError("calib key " + std::string(key) + ": " + e->second);
    }
    auto it = entries.find(key);
    if (it == entries.end()) throw ParseError("calib key " + std::string(key) + " missing");
    if (it->second.size() != count) {
      throw ParseError("calib key " + std::string(key) + ": expected " + std::to_string(count) + " floats, got " +
                       std::to_string(it->second.size()));
    }
    return it->second;
  };
  Mat34 p2{};
  Mat34 p3{};
  Mat33 r0{};
  Mat34 tr{};
  std::ranges::copy(fetch("P2", 12), p2.begin());
  std::ranges::copy(fetch("P3", 12), p3.begin());
  std::ranges::copy(fetch("R0_rect", 9), r0.begin());
  std::ranges::copy(fetch("Tr_velo_to_cam", 12), tr.begin());
  return CameraRig(p2, p3, r0, tr);
}

std::string serialize_calib(const CameraRig& rig) {
  std::ostringstream os;
  auto emit = [&](const char* key, std::span<const double> vals) {
    os << key << ':';
    for (double v : vals) os << ' ' << fmt_double(v);
    os << '\n';
  };
  emit("P2", rig.p_left());
  emit("P3", rig.p_right());
  emit("R0_rect", rig.r0_rect());
  emit("Tr_velo_to_cam", rig.tr_velo_to_cam());
  return os.str();
}

std::vector<ObjectLabel> parse_labels(std::string_view text) {
  std::vector<ObjectLabel> out;
  std::size_t line_no = 0;
  for (std::string_view line : split_lines(text)) {
    ++line_no;
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() != 15 && toks.size() != 16) {
      throw ParseError("label line " + std::to_string(line_no) + ": expected 15 fields, got " +
                       std::to_string(toks.size()));
    }
    double f[16] = {};
    for (std::size_t i = 1; i < toks.size(); ++i) {
      if (!parse_double(toks[i], f[i])) {
        throw ParseError("label line " + std::to_string(line_no) + ": bad number '" + std::string(toks[i]) + "'");
      }
    }
    ObjectLabel& lab = out.emplace_back();
    lab.type = std::string(toks[0]);
    lab.truncated = f[1];
    lab.occluded = static_cast<int>(f[2]);
    lab.alpha = f[3];
    lab.bbox = {f[4], f[5], f[6], f[7]};
    lab.box.h = f[8];
    lab.box.w = f[9];
    lab.box.l = f[10];
    lab.box.x = f[11];
    lab.box.y = f[12];
    lab.box.z = f[13];
    lab.box.yaw = f[14];
    lab.box.label = lab.type;
    lab.has_score = toks.size() == 16;
    lab.box.score = lab.has_score ? f[15] : 1.0;
  }
  return out;
}

std::string serialize_labels(std::span<const ObjectLabel> labels) {
  std::ostringstream os;
  for (const ObjectLabel& l : labels) {
    os << l.type << ' ' << fmt_fixed(l.truncated, 2) << ' ' << l.occluded << ' ' << fmt_fixed(l.alpha, 2);
    for (double b : l.bbox) os << ' ' << fmt_fixed(b, 2);
    for (double v : {l.box.h, l.box.w, l.box.l, l.box.x, l.box.y, l.box.z, l.box.yaw}) {
      os << ' ' << fmt_fixed(v, 2);
    }
    if (l.has_score) os << ' ' << fmt_fixed(l.box.score, 4);
    os << '\n';
  }
  return os.str();
}

std::vector<LidarPoint> read_velodyne(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 16 != 0) {
    throw FormatError("velodyne buffer length " + std::to_string(bytes.size()) + " is not a multiple of 16");
  }
  std::vector<LidarPoint> pts(bytes.size() / 16);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const std::uint8_t* p = bytes.data() + 16 * i;
    pts[i] = {get_f32_le(p), get_f32_le(p + 4), get_f32_le(p + 8), get_f32_le(p + 12)};
  }
  return pts;
}

std::vector<std::uint8_t> encode_velodyne(std::span<const LidarPoint> points) {
  std::vector<std::uint8_t> out;
  out.reserve(points.size() * 16);
  for (const LidarPoint& p : points) {
    put_f32_le(out, p.x);
    put_f32_le(out, p.y);
    put_f32_le(out, p.z);
    put_f32_le(out, p.reflectance);
  }
  return out;
}

std::vector<LidarPoint> points_to_camera(std::span<const LidarPoint> velo, const CameraRig& rig) {
  std::vector<LidarPoint> out;
  out.reserve(velo.size());
  for (const LidarPoint& p : velo) {
    const Vec3 c = rig.velo_to_cam({p.x, p.y, p.z});
    out.push_back({static_cast<float>(c.x), static_cast<float>(c.y), static_cast<float>(c.z), p.reflectance});
  }
  return out;
}

Tensor lidar_to_depth(std::span<const LidarPoint> velo, const CameraRig& rig, std::size_t height,
                      std::size_t width) {
  Tensor depth({1, height, width});
  for (const LidarPoint& p : velo) {
    const Vec3 c = rig.velo_to_cam({p.x, p.y, p.z});
    if (!(c.z > 0.0)) continue;
    const PixelProjection px = rig.project(c);
    const double col = std::floor(px.u + 0.5);
    const double row = std::floor(px.v + 0.5);
    if (col < 0.0 || row < 0.0 || col >= static_cast<double>(width) || row >= static_cast<double>(height)) continue;
    double& cell = depth(0, static_cast<std::size_t>(row), static_cast<std::size_t>(col));
    if (cell == 0.0 || c.z < cell) cell = c.z;
  }
  return depth;
}

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(bytes[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
  return tok;
}

std::size_t header_size(std::span<const std::uint8_t> bytes, std::size_t& pos, const char* what) {
  const std::string tok = header_token(bytes, pos);
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || v == 0) {
    throw FormatError(std::string("image header: bad ") + what + " '" + tok + "'");
  }
  return v;
}

}  // namespace

Tensor read_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  if (header_token(bytes, pos) != "P5") throw FormatError("PGM: expected P5 magic");
  const std::size_t width = header_size(bytes, pos, "width");
  const std::size_t height = header_size(bytes, pos, "height");
  if (header_size(bytes, pos, "maxval") != 255) throw FormatError("PGM: only maxval 255 is supported");
  ++pos;  // single whitespace before raster
  if (bytes.size() < pos + width * height) throw FormatError("PGM: truncated raster");
  Tensor img({1, height, width});
  for (std::size_t i = 0; i < width * height; ++i) img[i] = bytes[pos + i];
  return img;
}

std::vector<std::uint8_t> encode_pgm(const Tensor& image) {
  if (image.ndim() != 3 || image.extent(0) != 1) throw DimensionError("encode_pgm expects [1,H,W]");
  const std::string header =
      "P5\n" + std::to_string(image.extent(2)) + " " + std::to_string(image.extent(1)) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (double v : image.data()) out.push_back(static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)));
  return out;
}

Tensor read_pfm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  if (header_token(bytes, pos) != "Pf") throw FormatError("PFM: expected grayscale 'Pf' magic");
  const std::size_t width = header_size(bytes, pos, "width");
  const std::size_t height = header_size(bytes, pos, "height");
  const std::string scale_tok = header_token(bytes, pos);
  double scale = 0.0;
  if (!parse_double(scale_tok, scale) || scale >= 0.0) {
    throw FormatError("PFM: only little-endian (negative scale) files are supported");
  }
  ++pos;
  if (bytes.size() != pos + 4 * width * height) throw FormatError("PFM: raster size mismatch");
  Tensor img({1, height, width});
  for (std::size_t r = 0; r < height; ++r) {
    const std::size_t src_row = height - 1 - r;
    for (std::size_t c = 0; c < width; ++c) {
      const float v = get_f32_le(bytes.data() + pos + 4 * (src_row * width + c));
      if (!std::isfinite(v)) throw FormatError("PFM: non-finite pixel");
      img(0, r, c) = v;
    }
  }
  return img;
}

std::vector<std::uint8_t> encode_pfm(const Tensor& image) {
  if (image.ndim() != 3 || image.extent(0) != 1) throw DimensionError("encode_pfm expects [1,H,W]");
  const std::size_t height = image.extent(1);
  const std::size_t width = image.extent(2);
  const std::string header = "Pf\n" + std::to_string(width) + " " + std::to_string(height) + "\n-1.0\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (std::size_t r = height; r-- > 0;) {
    for (std::size_t c = 0; c < width; ++c) put_f32_le(out, static_cast<float>(image(0, r, c)));
  }
  return out;
}

Tensor read_image(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const std::string ext = path.extension().string();
  if (ext == ".pgm") return read_pgm(bytes);
  if (ext == ".pfm") return read_pfm(bytes);
  throw FormatError("unsupported image format: " + path.string());
}

FramePaths frame_paths(const std::filesystem::path& root, const std::string& id) {
  return {root / "calib" / (id + ".txt"), root / "label_2" / (id + ".txt"), root / "velodyne" / (id + ".bin"),
          root / "image_2" / (id + ".pfm"), root / "image_3" / (id + ".pfm")};
}

namespace {

std::string read_text(const std::filesystem::path& p) {
  const auto bytes = read_file_bytes(p);
  return {bytes.begin(), bytes.end()};
}

std::filesystem::path resolve_image(std::filesystem::path pfm) {
  if (std::filesystem::exists(pfm)) return pfm;
  std::filesystem::path pgm = pfm.replace_extension(".pgm");
  if (std::filesystem::exists(pgm)) return pgm;
  throw FormatError("missing image " + pfm.replace_extension(".pfm").string() + " (or .pgm)");
}

}  // namespace

Frame load_frame(const std::filesystem::path& root, const std::string& id) {
  const FramePaths paths = frame_paths(root, id);
  if (!std::filesystem::exists(paths.calib)) throw FormatError("missing calib file " + paths.calib.string());
  // Parse failures are re-raised with the offending path prepended.
  auto with_path = [](const std::filesystem::path& p, auto&& fn) {
    try {
      return fn(p);
    } catch (const ParseError& e) {
      throw ParseError(p.string() + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(p.string() + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(p.string() + ": " + e.what());
    }
  };
  Frame frame;
  frame.id = id;
  frame.rig = with_path(paths.calib, [](const auto& p) { return parse_calib(read_text(p)); });
  const auto left_path = resolve_image(paths.left_image);
  const auto right_path = resolve_image(paths.right_image);
  frame.left = with_path(left_path, [](const auto& p) { return read_image(p); });
  frame.right = with_path(right_path, [](const auto& p) { return read_image(p); });
  if (frame.left.dims() != frame.right.dims()) throw FormatError("frame " + id + ": stereo image sizes differ");
  if (std::filesystem::exists(paths.label)) {
    frame.labels = with_path(paths.label, [](const auto& p) { return parse_labels(read_text(p)); });
  }
  if (std::filesystem::exists(paths.velodyne)) {
    frame.points = with_path(paths.velodyne, [](const auto& p) { return read_velodyne(read_file_bytes(p)); });
  }
  return frame;
}

void write_frame(const std::filesystem::path& root, const Frame& frame) {
  const FramePaths paths = frame_paths(root, frame.id);
  const std::string calib = serialize_calib(frame.rig);
  write_file_bytes(paths.calib, std::span(reinterpret_cast<const std::uint8_t*>(calib.data()), calib.size()));
  const std::string labels = serialize_labels(frame.labels);
  write_file_bytes(paths.label, std::span(reinterpret_cast<const std::uint8_t*>(labels.data()), labels.size()));
  write_file_bytes(paths.velodyne, encode_velodyne(frame.points));
  write_file_bytes(paths.left_image, encode_pfm(frame.left));
  write_file_bytes(paths.right_image, encode_pfm(frame.right));
}

std::vector<std::string> list_frame_ids(const std::filesystem::path& root) {
  std::vector<std::string> ids;
  const auto dir = root / "calib";
  if (!std::filesystem::is_directory(dir)) return ids;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") ids.push_back(entry.path().stem().string());
  }
  std::ranges::sort(ids);
  return ids;
}

std::array<Vec3, 8> box_corners(const Box3D& b) noexcept {
  const double c = std::cos(b.yaw);
  const double s = std::sin(b.yaw);
  const double hl = b.l / 2.0;
  const double hw = b.w / 2.0;
  const double ox[4] = {hl, hl, -hl, -hl};
  const double oz[4] = {hw, -hw, -hw, hw};
  std::array<Vec3, 8> out{};
  for (int i = 0; i < 4; ++i) {
    const double x = b.x + c * ox[i] + s * oz[i];
    const double z = b.z - s * ox[i] + c * oz[i];
    out[i] = {x, b.y, z};
    out[i + 4] = {x, b.y - b.h, z};
  }
  return out;
}

std::array<double, 4> project_box_2d(const Box3D& box, const CameraRig& rig, double width, double height) {
  double l = std::numeric_limits<double>::infinity();
  double t = l;
  double r = -l;
  double bt = -l;
  for (const Vec3& c : box_corners(box)) {
    if (c.z <= 0.1) continue;
    const PixelProjection p = rig.project(c);
    l = std::min(l, p.u);
    r = std::max(r, p.u);
    t = std::min(t, p.v);
    bt = std::max(bt, p.v);
  }
  if (!std::isfinite(l)) return {0, 0, 0, 0};
  return {std::clamp(l, 0.0, width - 1), std::clamp(t, 0.0, height - 1), std::clamp(r, 0.0, width - 1),
          std::clamp(bt, 0.0, height - 1)};
}

// ---------------------------------------------------------------------------
// Synthetic scenes

namespace {

constexpr double kCameraHeight = 1.65;

// KITTI-like extrinsics: velodyne x forward, y left, z up.
const Mat34 kSyntheticVeloToCam{0, -1, 0, 0, 0, 0, -1, -0.08, 1, 0, 0, -0.27};

double hash_noise(std::uint64_t seed, std::int64_t a, std::int64_t b) {
  const std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(a) * 0x9E3779B1ULL +
                                                       static_cast<std::uint64_t>(b)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double ground_texture(std::uint64_t seed, double x, double z) {
  return 90.0 + 50.0 * std::sin(2.1 * x) * std::cos(1.7 * z) +
         60.0 * hash_noise(seed, static_cast<std::int64_t>(std::floor(x * 2.0)),
                           static_cast<std::int64_t>(std::floor(z * 2.0)));
}

double car_texture(std::uint64_t seed, std::size_t car, double a, double b) {
  return 150.0 + 40.0 * std::sin(5.0 * a + static_cast<double>(car)) +
         50.0 * hash_noise(seed + car + 1, static_cast<std::int64_t>(std::floor(a * 3.0)),
                           static_cast<std::int64_t>(std::floor(b * 3.0)));
}

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  double value = 40.0;
};

// Ray/oriented-box slab test in the box's local frame.
bool intersect_box(const Box3D& b, const Vec3& o, const Vec3& d, double& t_hit, Vec3& local) {
  const double c = std::cos(b.yaw);
  const double s = std::sin(b.yaw);
  auto to_local = [&](const Vec3& v, bool point) {
    const double dx = point ? v.x - b.x : v.x;
    const double dy = point ? v.y - b.y : v.y;
    const double dz = point ? v.z - b.z : v.z;
    return Vec3{c * dx - s * dz, dy, s * dx + c * dz};
  };
  const Vec3 lo = to_local(o, true);
  const Vec3 ld = to_local(d, false);
  const double mins[3] = {-b.l / 2, -b.h, -b.w / 2};
  const double maxs[3] = {b.l / 2, 0.0, b.w / 2};
  const double os[3] = {lo.x, lo.y, lo.z};
  const double ds[3] = {ld.x, ld.y, ld.z};
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    if (std::abs(ds[k]) < 1e-12) {
      if (os[k] < mins[k] || os[k] > maxs[k]) return false;
      continue;
    }
    double ta = (mins[k] - os[k]) / ds[k];
    double tb = (maxs[k] - os[k]) / ds[k];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  t_hit = t0;
  local = {lo.x + t0 * ld.x, lo.y + t0 * ld.y, lo.z + t0 * ld.z};
  return true;
}

Tensor render_view(std::uint64_t seed, const std::vector<Box3D>& cars, const Mat34& p, std::size_t height,
                   std::size_t width) {
  const double f = p[0];
  const double cu = p[2];
  const double cv = p[6];
  const Vec3 origin{-p[3] / f, 0.0, 0.0};
  Tensor img({1, height, width});
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t col = 0; col < width; ++col) {
      const Vec3 dir{(static_cast<double>(col) - cu) / f, (static_cast<double>(r) - cv) / f, 1.0};
      Hit hit;
      if (dir.y > 1e-9) {
        const double t = kCameraHeight / dir.y;
        hit.t = t;
        hit.value = ground_texture(seed, origin.x + t * dir.x, t * dir.z);
      }
      for (std::size_t k = 0; k < cars.size(); ++k) {
        double t = 0.0;
        Vec3 local;
        if (intersect_box(cars[k], origin, dir, t, local) && t < hit.t) {
          hit.t = t;
          hit.value = car_texture(seed, k, local.x + local.z, local.y);
        }
      }
      img(0, r, col) = std::round(std::clamp(hit.value, 0.0, 255.0));  // 8-bit levels
    }
  }
  return img;
}

}  // namespace

Frame make_synthetic_frame(std::uint64_t seed, const SyntheticSceneOptions& opts) {
  Lcg rng(seed);
  const double width = static_cast<double>(opts.width);
  const double height = static_cast<double>(opts.height);
  const double focal = 721.5377 * width / 1242.0;
  const double baseline = 0.54;
  const Mat34 pl{focal, 0, width / 2.0, 0, 0, focal, height / 2.0, 0, 0, 0, 1, 0};
  const Mat34 pr{focal, 0, width / 2.0, -focal * baseline, 0, focal, height / 2.0, 0, 0, 0, 1, 0};
  const Mat33 r0{1, 0, 0, 0, 1, 0, 0, 0, 1};

  Frame frame;
  frame.id = "000000";
  frame.rig = CameraRig(pl, pr, r0, kSyntheticVeloToCam);

  std::vector<Box3D> cars;
  for (std::size_t attempt = 0; cars.size() < opts.num_cars && attempt < 1000; ++attempt) {
    Box3D b;
    b.z = rng.uniform(8.0, 35.0);
    b.x = rng.uniform(-0.25, 0.25) * b.z;
    b.y = kCameraHeight;
    b.h = rng.uniform(1.4, 1.7);
    b.w = rng.uniform(1.5, 1.8);
    b.l = rng.uniform(3.5, 4.4);
    b.yaw = wrap_angle(rng.uniform(-std::numbers::pi, std::numbers::pi));
    const bool clear = std::ranges::none_of(cars, [&](const Box3D& o) { return std::hypot(o.x - b.x, o.z - b.z) < 6.0; });
    if (clear) cars.push_back(b);
  }

  frame.left = render_view(seed, cars, pl, opts.height, opts.width);
  frame.right = render_view(seed, cars, pr, opts.height, opts.width);

  for (const Box3D& b : cars) {
    ObjectLabel lab;
    lab.type = "Car";
    lab.box = b;
    lab.alpha = wrap_angle(b.yaw - std::atan2(b.x, b.z));
    lab.bbox = project_box_2d(b, frame.rig, width, height);
    frame.labels.push_back(lab);
  }

  // Camera-frame samples mapped back to velodyne: v = R^T (c - t).
  const Mat34& tr = kSyntheticVeloToCam;
  auto to_velo = [&](const Vec3& c, double refl) {
    const double dx = c.x - tr[3];
    const double dy = c.y - tr[7];
    const double dz = c.z - tr[11];
    return LidarPoint{static_cast<float>(tr[0] * dx + tr[4] * dy + tr[8] * dz),
                      static_cast<float>(tr[1] * dx + tr[5] * dy + tr[9] * dz),
                      static_cast<float>(tr[2] * dx + tr[6] * dy + tr[10] * dz), static_cast<float>(refl)};
  };
  for (std::size_t i = 0; i < opts.ground_points; ++i) {
    const Vec3 c{rng.uniform(-20.0, 20.0), kCameraHeight, rng.uniform(3.0, 55.0)};
    frame.points.push_back(to_velo(c, rng.uniform(0.0, 0.3)));
  }
  for (const Box3D& b : cars) {
    const double cs = std::cos(b.yaw);
    const double sn = std::sin(b.yaw);
    for (std::size_t i = 0; i < opts.points_per_car; ++i) {
      // Points on the top face and the four sides, in the box frame.
      double ox = rng.uniform(-b.l / 2, b.l / 2);
      double oz = rng.uniform(-b.w / 2, b.w / 2);
      double oy = -rng.uniform(0.0, b.h);
      switch (static_cast<int>(rng.uniform() * 5.0)) {
        case 0: oy = -b.h; break;
        case 1: ox = b.l / 2; break;
        case 2: ox = -b.l / 2; break;
        case 3: oz = b.w / 2; break;
        default: oz = -b.w / 2; break;
      }
      const Vec3 c{b.x + cs * ox + sn * oz, b.y + oy, b.z - sn * ox + cs * oz};
      frame.points.push_back(to_velo(c, rng.uniform(0.2, 0.9)));
    }
  }
  return frame;
}

}  // namespace esgn
