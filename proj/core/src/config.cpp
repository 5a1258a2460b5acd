#include "esgn/config.hpp"

#include <charconv>
#include <map>
#include <sstream>
#include <vector>

#include "esgn/error.hpp"
#include "esgn/tensor_io.hpp"

namespace esgn {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected a number, got '" + v + "'");
  }
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long u = std::stoull(v, &pos);
    if (pos != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return u;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected a non-negative integer, got '" + v + "'");
  }
}

std::vector<double> to_doubles(const std::string& key, const std::string& v, std::size_t count) {
  const auto parts = split_list(v);
  if (count != 0 && parts.size() != count) {
    throw ConfigError("config key " + key + ": expected " + std::to_string(count) + " values");
  }
  std::vector<double> out;
  for (const auto& p : parts) out.push_back(to_double(key, p));
  return out;
}

// Shortest text that parses back to the same double.
std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

void RunConfig::validate() const {
  egfg.validate();
  (void)bev_pool_factors(lidar, egfg.voxels);
  if (image_height == 0 || image_width == 0) throw ConfigError("image_height and image_width must be set");
  const std::size_t coarsest = egfg.pyramid.strides.back();
  if (image_height % coarsest != 0 || image_width % coarsest != 0) {
    throw ConfigError("image size must be divisible by the coarsest stride " + std::to_string(coarsest));
  }
  if (eval.recall_points != 11 && eval.recall_points != 40) throw ConfigError("recall_points must be 11 or 40");
}

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir) {
  std::map<std::string, std::string> kv;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    kv[trim(std::string_view(t).substr(0, eq))] = trim(std::string_view(t).substr(eq + 1));
  }

  RunConfig cfg;
  auto path_of = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };
  Range xr = cfg.egfg.voxels.x();
  Range yr = cfg.egfg.voxels.y();
  Range zr = cfg.egfg.voxels.z();
  std::array<double, 3> stereo_voxel = cfg.egfg.voxels.voxel();
  std::array<double, 3> lidar_voxel = cfg.lidar.voxel();

  for (const auto& [key, v] : kv) {
    if (key == "data_root") {
      cfg.data_root = path_of(v);
    } else if (key == "output_dir") {
      cfg.output_dir = path_of(v);
    } else if (key == "image_height") {
      cfg.image_height = to_uint(key, v);
    } else if (key == "image_width") {
      cfg.image_width = to_uint(key, v);
    } else if (key == "strides") {
      const auto s = to_doubles(key, v, kScales);
      for (std::size_t i = 0; i < kScales; ++i) cfg.egfg.pyramid.strides[i] = static_cast<std::size_t>(s[i]);
    } else if (key == "channels") {
      cfg.egfg.pyramid.channels = to_uint(key, v);
    } else if (key == "disparity_count") {
      cfg.egfg.pyramid.disparity_count = to_uint(key, v);
    } else if (key == "max_disparity_px") {
      cfg.egfg.pyramid.max_disparity_px = to_double(key, v);
    } else if (key == "kernel_size") {
      cfg.egfg.pyramid.kernel_size = to_uint(key, v);
    } else if (key == "bev_channels") {
      cfg.egfg.bev_channels = to_uint(key, v);
    } else if (key == "x_range" || key == "y_range" || key == "z_range") {
      const auto r = to_doubles(key, v, 2);
      (key == "x_range" ? xr : key == "y_range" ? yr : zr) = Range{r[0], r[1]};
    } else if (key == "voxel_size") {
      const auto s = to_doubles(key, v, 3);
      stereo_voxel = {s[0], s[1], s[2]};
    } else if (key == "lidar_voxel_size") {
      const auto s = to_doubles(key, v, 3);
      lidar_voxel = {s[0], s[1], s[2]};
    } else if (key == "seed") {
      cfg.seed = to_uint(key, v);
    } else if (key == "anchor_size") {
      const auto s = to_doubles(key, v, 3);
      cfg.anchors.h = s[0];
      cfg.anchors.w = s[1];
      cfg.anchors.l = s[2];
    } else if (key == "anchor_y") {
      cfg.anchors.y = to_double(key, v);
    } else if (key == "pos_iou") {
      cfg.matching.pos_iou = to_double(key, v);
    } else if (key == "neg_iou") {
      cfg.matching.neg_iou = to_double(key, v);
    } else if (key == "focal_alpha") {
      cfg.loss.focal_alpha = to_double(key, v);
    } else if (key == "focal_gamma") {
      cfg.loss.focal_gamma = to_double(key, v);
    } else if (key == "smooth_l1_beta") {
      cfg.loss.smooth_l1_beta = to_double(key, v);
    } else if (key == "score_threshold") {
      cfg.decode.score_threshold = to_double(key, v);
    } else if (key == "nms_iou") {
      cfg.decode.nms_iou = to_double(key, v);
    } else if (key == "max_candidates") {
      cfg.decode.max_candidates = to_uint(key, v);
    } else if (key == "max_detections") {
      cfg.decode.max_detections = to_uint(key, v);
    } else if (key == "recall_points") {
      cfg.eval.recall_points = static_cast<int>(to_uint(key, v));
    } else if (key == "eval_iou") {
      cfg.eval.iou_thresholds = to_doubles(key, v, 0);
    } else if (key == "distill_adapter") {
      if (v == "seeded") {
        cfg.adapter = AdapterKind::kSeeded;
      } else if (v == "identity") {
        cfg.adapter = AdapterKind::kIdentity;
      } else {
        throw ConfigError("distill_adapter must be 'seeded' or 'identity'");
      }
    } else if (key == "distill_norm") {
      if (v == "cells") {
        cfg.distill.norm = DistillNorm::kCells;
      } else if (v == "cell_channels") {
        cfg.distill.norm = DistillNorm::kCellChannels;
      } else {
        throw ConfigError("distill_norm must be 'cells' or 'cell_channels'");
      }
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  cfg.egfg.voxels = VoxelGridSpec(xr, yr, zr, stereo_voxel);
  cfg.lidar = VoxelGridSpec(xr, yr, zr, lidar_voxel);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  const auto bytes = read_file_bytes(path);
  return parse_run_config(std::string(bytes.begin(), bytes.end()), path.parent_path());
}

std::string serialize_run_config(const RunConfig& c) {
  std::ostringstream os;
  const auto& p = c.egfg.pyramid;
  const auto& v = c.egfg.voxels;
  os << "data_root = " << c.data_root.string() << '\n'
     << "output_dir = " << c.output_dir.string() << '\n'
     << "image_height = " << c.image_height << '\n'
     << "image_width = " << c.image_width << '\n'
     << "strides = " << p.strides[0] << ',' << p.strides[1] << ',' << p.strides[2] << '\n'
     << "channels = " << p.channels << '\n'
     << "disparity_count = " << p.disparity_count << '\n'
     << "max_disparity_px = " << num(p.max_disparity_px) << '\n'
     << "kernel_size = " << p.kernel_size << '\n'
     << "bev_channels = " << c.egfg.bev_channels << '\n'
     << "x_range = " << num(v.x().min) << ',' << num(v.x().max) << '\n'
     << "y_range = " << num(v.y().min) << ',' << num(v.y().max) << '\n'
     << "z_range = " << num(v.z().min) << ',' << num(v.z().max) << '\n'
     << "voxel_size = " << num(v.voxel()[0]) << ',' << num(v.voxel()[1]) << ',' << num(v.voxel()[2]) << '\n'
     << "lidar_voxel_size = " << num(c.lidar.voxel()[0]) << ',' << num(c.lidar.voxel()[1]) << ','
     << num(c.lidar.voxel()[2]) << '\n'
     << "seed = " << c.seed << '\n'
     << "anchor_size = " << num(c.anchors.h) << ',' << num(c.anchors.w) << ',' << num(c.anchors.l) << '\n'
     << "anchor_y = " << num(c.anchors.y) << '\n'
     << "pos_iou = " << num(c.matching.pos_iou) << '\n'
     << "neg_iou = " << num(c.matching.neg_iou) << '\n'
     << "focal_alpha = " << num(c.loss.focal_alpha) << '\n'
     << "focal_gamma = " << num(c.loss.focal_gamma) << '\n'
     << "smooth_l1_beta = " << num(c.loss.smooth_l1_beta) << '\n'
     << "score_threshold = " << num(c.decode.score_threshold) << '\n'
     << "nms_iou = " << num(c.decode.nms_iou) << '\n'
     << "max_candidates = " << c.decode.max_candidates << '\n'
     << "max_detections = " << c.decode.max_detections << '\n'
     << "recall_points = " << c.eval.recall_points << '\n'
     << "eval_iou =";
  for (std::size_t i = 0; i < c.eval.iou_thresholds.size(); ++i) {
    os << (i ? "," : " ") << num(c.eval.iou_thresholds[i]);
  }
  os << '\n'
     << "distill_adapter = " << (c.adapter == AdapterKind::kIdentity ? "identity" : "seeded") << '\n'
     << "distill_norm = " << (c.distill.norm == DistillNorm::kCellChannels ? "cell_channels" : "cells") << '\n';
  return os.str();
}

}  // namespace esgn
