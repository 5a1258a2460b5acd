#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "esgn/detect.hpp"
#include "esgn/dgfd.hpp"
#include "esgn/egfg.hpp"
#include "esgn/eval.hpp"

namespace esgn {

enum class AdapterKind { kSeeded, kIdentity };

/// Everything a CLI run needs. Loaded from a "key = value" text file; '#'
/// starts a comment. See README for the key list and defaults.
struct RunConfig {
  std::filesystem::path data_root;
  std::filesystem::path output_dir = "esgn_out";
  std::size_t image_height = 0;
  std::size_t image_width = 0;

  EgfgConfig egfg;
  VoxelGridSpec lidar = VoxelGridSpec::lidar_default();
  std::uint64_t seed = 0;

  AnchorConfig anchors;
  MatchConfig matching;
  LossConfig loss;
  DecodeConfig decode;
  EvalOptions eval;

  AdapterKind adapter = AdapterKind::kSeeded;
  DistillOptions distill;

  /// Cross-field checks (pyramid, grids, image size divisibility).
  void validate() const;
};

/// Paths in the text are resolved against base_dir when relative.
RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Writes every key with its current value in the parse_run_config format.
std::string serialize_run_config(const RunConfig& cfg);

}  // namespace esgn
