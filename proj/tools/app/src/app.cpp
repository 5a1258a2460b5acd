#include "esgn_app/app.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>

#include "esgn/config.hpp"
#include "esgn/detect.hpp"
#include "esgn/error.hpp"
#include "esgn/eval.hpp"
#include "esgn/kitti.hpp"
#include "esgn/pipeline.hpp"
#include "esgn/tensor_io.hpp"
#include "esgn/viz.hpp"
#include "esgn_app/ordered_parallel.hpp"

namespace esgn::app {

namespace fs = std::filesystem;

namespace {

/// Shortest decimal string that parses back to the same double.
std::string exact(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::uint8_t> text_bytes(const std::string& s) { return {s.begin(), s.end()}; }

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what) : std::runtime_error(what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

template <typename Fn>
auto stage(const std::string& name, Fn&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

struct CommonOptions {
  std::string config;
  std::string frames;
  std::string dump;
  std::size_t threads = 1;
};

RunConfig load_config(const std::string& path) {
  RunConfig cfg = load_run_config(path);
  if (const char* env = std::getenv("ESGN_SEED"); env != nullptr && *env != '\0') {
    std::uint64_t seed = 0;
    const std::string_view s(env);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), seed);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      throw ConfigError("ESGN_SEED must be a non-negative integer, got '" + std::string(s) + "'");
    }
    cfg.seed = seed;
  }
  cfg.validate();
  return cfg;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',' || c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<std::string> select_frames(const RunConfig& cfg, const std::string& frames) {
  if (cfg.data_root.empty() || !fs::is_directory(cfg.data_root)) {
    throw ConfigError("data_root is not a directory: " + cfg.data_root.string());
  }
  std::vector<std::string> ids = frames.empty() ? list_frame_ids(cfg.data_root) : split_csv(frames);
  if (ids.empty()) throw ConfigError("no frames found under " + (cfg.data_root / "calib").string());
  return ids;
}

std::vector<std::string> select_dumps(const std::string& dump, const std::vector<std::string>& allowed) {
  std::vector<std::string> names = split_csv(dump);
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& n : names) {
    if (!ok.contains(n)) throw ConfigError("unknown --dump tensor '" + n + "'");
  }
  return names;
}

struct FrameOutput {
  std::string id;
  std::optional<std::string> failed_stage;
  std::string error;
  std::vector<std::pair<fs::path, std::vector<std::uint8_t>>> files;
  std::string log;
  double total = 0.0;
};

/// Writes each frame's files and log in frame order; returns the exit code.
int run_frames(const std::vector<std::string>& ids, std::size_t threads,
               const std::function<void(const std::string&, FrameOutput&)>& work, std::ostream& out,
               std::ostream& err, const std::function<void(const FrameOutput&)>& on_written = {}) {
  std::size_t failures = 0;
  ordered_parallel<FrameOutput>(
      ids.size(), threads,
      [&](std::size_t i) {
        FrameOutput o;
        o.id = ids[i];
        try {
          work(ids[i], o);
        } catch (const StageError& e) {
          o.failed_stage = e.stage();
          o.error = e.what();
        } catch (const std::exception& e) {
          o.failed_stage = "unknown";
          o.error = e.what();
        }
        return o;
      },
      [&](std::size_t, FrameOutput&& o) {
        if (o.failed_stage) {
          ++failures;
          err << "error: frame " << o.id << " stage " << *o.failed_stage << ": " << o.error << '\n';
          return;
        }
        try {
          for (const auto& [path, bytes] : o.files) write_file_bytes(path, bytes);
        } catch (const std::exception& e) {
          ++failures;
          err << "error: frame " << o.id << " stage write: " << e.what() << '\n';
          return;
        }
        out << o.log;
        if (on_written) on_written(o);
      });
  out.flush();
  return failures == 0 ? kExitOk : kExitFrameFailed;
}

int cmd_pipeline(const CommonOptions& opt, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = load_config(opt.config);
  const auto dumps = select_dumps(opt.dump, pipeline_dump_names());
  const auto ids = select_frames(cfg, opt.frames);
  const Models models = Models::build(cfg);
  return run_frames(
      ids, opt.threads,
      [&](const std::string& id, FrameOutput& o) {
        const Frame frame = stage("load", [&] { return load_frame(cfg.data_root, id); });
        const StereoResult r = stage("stereo", [&] { return run_stereo(frame, cfg, models); });
        const auto named = stereo_tensors(r.trace);
        for (const auto& name : dumps) {
          o.files.emplace_back(cfg.output_dir / id / (name + ".esgt"), encode_esgt(*named.at(name)));
        }
        o.files.emplace_back(cfg.output_dir / "det" / (id + ".txt"), text_bytes(serialize_labels(r.detections)));
        o.log = "frame=" + id + " detections=" + std::to_string(r.detections.size()) + '\n';
      },
      out, err);
}

PerScale<Tensor> load_teacher(const fs::path& dir, const std::string& id) {
  const fs::path per_frame = dir / id;
  const fs::path base = fs::is_directory(per_frame) ? per_frame : dir;
  PerScale<Tensor> t;
  for (std::size_t i = 0; i < kScales; ++i) {
    const fs::path p = base / ("F_lgf" + std::to_string(i + 1) + ".esgt");
    if (!fs::exists(p)) throw FormatError("missing teacher tensor " + p.string());
    t[i] = read_esgt(p);
  }
  return t;
}

int cmd_distill(const CommonOptions& opt, const std::string& teacher_dir, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = load_config(opt.config);
  const auto dumps = select_dumps(opt.dump, distill_dump_names());
  const auto ids = select_frames(cfg, opt.frames);
  if (!teacher_dir.empty() && !fs::is_directory(teacher_dir)) {
    throw ConfigError("--teacher is not a directory: " + teacher_dir);
  }
  const Models models = Models::build(cfg);
  double grand_total = 0.0;
  std::size_t done = 0;
  const int rc = run_frames(
      ids, opt.threads,
      [&](const std::string& id, FrameOutput& o) {
        const Frame frame = stage("load", [&] { return load_frame(cfg.data_root, id); });
        if (!fs::exists(frame_paths(cfg.data_root, id).velodyne)) {
          throw StageError("load", "missing velodyne file " + frame_paths(cfg.data_root, id).velodyne.string());
        }
        std::optional<PerScale<Tensor>> teacher;
        if (!teacher_dir.empty()) teacher = stage("teacher", [&] { return load_teacher(teacher_dir, id); });
        const StereoResult s = stage("stereo", [&] { return run_stereo(frame, cfg, models); });
        const DistillResult d =
            stage("distill", [&] { return run_distill(frame, s.trace.fused, cfg, models, teacher); });
        std::map<std::string, const Tensor*> named{{"M_fg", &d.fg_mask}, {"M_sp", &d.sparse_mask}};
        for (std::size_t i = 0; i < kScales; ++i) {
          const std::string k = std::to_string(i + 1);
          named["F_gf" + k] = &s.trace.fused[i];
          named["F_lgf" + k] = &d.teacher.fused[i];
          if (!teacher) named["F_lbev" + k] = &d.teacher.bev[i];
        }
        for (const auto& name : dumps) {
          const auto it = named.find(name);
          if (it == named.end()) throw StageError("dump", name + " is not available with --teacher");
          o.files.emplace_back(cfg.output_dir / id / (name + ".esgt"), encode_esgt(*it->second));
        }
        std::string log;
        for (std::size_t i = 0; i < kScales; ++i) {
          log += "frame=" + id + " scale=" + std::to_string(i + 1) + " loss=" + exact(d.loss.per_scale[i]) + '\n';
        }
        log += "frame=" + id + " total=" + exact(d.loss.total) + " active_cells=" +
               std::to_string(d.loss.active_cells) + '\n';
        o.log = log;
        o.total = d.loss.total;
      },
      out, err,
      [&](const FrameOutput& o) {
        grand_total += o.total;
        ++done;
      });
  if (done > 0) out << "frames=" << done << " mean_total=" << exact(grand_total / static_cast<double>(done)) << '\n';
  return rc;
}

std::map<std::string, fs::path> label_files(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".txt") out[e.path().stem().string()] = e.path();
  }
  return out;
}

std::vector<ObjectLabel> read_labels(const fs::path& p) {
  const auto bytes = read_file_bytes(p);
  try {
    return parse_labels(std::string(bytes.begin(), bytes.end()));
  } catch (const ParseError& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

int cmd_eval(const std::string& gt_dir, const std::string& det_dir, const std::string& config,
             std::optional<int> recall_points, std::ostream& out, std::ostream& err) {
  EvalOptions opts;
  if (!config.empty()) opts = load_config(config).eval;
  if (recall_points) opts.recall_points = *recall_points;
  if (!fs::is_directory(gt_dir)) throw ConfigError("--gt is not a directory: " + gt_dir);
  if (!fs::is_directory(det_dir)) throw ConfigError("--det is not a directory: " + det_dir);

  const auto gt_files = label_files(gt_dir);
  const auto det_files = label_files(det_dir);
  std::size_t mismatches = 0;
  std::vector<std::vector<ObjectLabel>> gts;
  std::vector<std::vector<ObjectLabel>> dets;
  for (const auto& [stem, path] : gt_files) {
    gts.push_back(read_labels(path));
    const auto it = det_files.find(stem);
    if (it == det_files.end()) {
      ++mismatches;
      err << "warning: no detections for " << stem << "; counted as empty\n";
      dets.emplace_back();
    } else {
      dets.push_back(read_labels(it->second));
    }
  }
  for (const auto& [stem, path] : det_files) {
    if (!gt_files.contains(stem)) {
      ++mismatches;
      err << "warning: detections " << path.string() << " have no ground truth; skipped\n";
    }
  }
  const auto rows = evaluate(gts, dets, opts);
  out << format_table(rows) << format_machine(rows);
  if (mismatches > 0) {
    err << "warning: " << mismatches << " file stem mismatch(es)\n";
    return kExitStemMismatch;
  }
  return kExitOk;
}

int cmd_viz(const CommonOptions& opt, const std::string& det_dir, const std::string& out_dir, std::ostream& out,
            std::ostream& err) {
  const RunConfig cfg = load_config(opt.config);
  const auto ids = select_frames(cfg, opt.frames);
  const fs::path dets_root = det_dir.empty() ? cfg.output_dir / "det" : fs::path(det_dir);
  const fs::path target = out_dir.empty() ? cfg.output_dir / "viz" : fs::path(out_dir);
  return run_frames(
      ids, opt.threads,
      [&](const std::string& id, FrameOutput& o) {
        const Frame frame = stage("load", [&] { return load_frame(cfg.data_root, id); });
        std::vector<Box3D> dets;
        const fs::path det_path = dets_root / (id + ".txt");
        if (fs::exists(det_path)) {
          for (const auto& l : stage("load", [&] { return read_labels(det_path); })) {
            if (!l.dont_care()) dets.push_back(l.box);
          }
        }
        const auto gt = gt_boxes(frame);
        const auto ppm = stage("render", [&] { return render_ppm(frame.left, gt, dets, frame.rig); });
        std::vector<Box3D> all = gt;
        all.insert(all.end(), dets.begin(), dets.end());
        const auto ply = render_ply(points_to_camera(frame.points, frame.rig), all);
        o.files.emplace_back(target / (id + ".ppm"), ppm);
        o.files.emplace_back(target / (id + ".ply"), text_bytes(ply));
        o.log = "frame=" + id + " ppm=" + (target / (id + ".ppm")).string() + " ply=" +
                (target / (id + ".ply")).string() + '\n';
      },
      out, err);
}

int cmd_synth(const std::string& out_dir, std::size_t count, std::uint64_t seed, std::size_t height,
              std::size_t width, std::ostream& out) {
  SyntheticSceneOptions so;
  so.height = height;
  so.width = width;
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "%06zu", i);
    Frame f = make_synthetic_frame(seed + i, so);
    f.id = id;
    write_frame(out_dir, f);
  }
  RunConfig cfg;
  cfg.data_root = ".";
  cfg.output_dir = "out";
  cfg.image_height = height;
  cfg.image_width = width;
  cfg.seed = seed;
  write_file_bytes(fs::path(out_dir) / "esgn.cfg", text_bytes(serialize_run_config(cfg)));
  out << "wrote " << count << " frame(s) and esgn.cfg to " << out_dir << '\n';
  return kExitOk;
}

/// Quick in-process checks of the core identities on a synthetic frame.
int cmd_selftest(std::ostream& out, std::ostream& err) {
  std::size_t failed = 0;
  auto check = [&](const std::string& name, bool ok) {
    out << "selftest " << name << ' ' << (ok ? "ok" : "FAIL") << '\n';
    if (!ok) ++failed;
  };

  const Tensor x({2, 5, 5}, 0.5);
  check("conv_identity", conv2d(x, ConvKernel::identity(2)) == x);
  check("kernel_determinism", seeded_kernel(3, 2, 2, 3, 3).weights == seeded_kernel(3, 2, 2, 3, 3).weights);

  Box3D a;
  a.h = 1.5;
  a.w = 2.0;
  a.l = 2.0;
  Box3D b = a;
  b.x = 1.0;
  check("iou_identity", std::abs(rotated_iou_bev(a, a) - 1.0) < 1e-12);
  check("iou_offset", std::abs(rotated_iou_bev(a, b) - 1.0 / 3.0) < 1e-9);

  RunConfig cfg;
  cfg.image_height = 64;
  cfg.image_width = 128;
  const Frame frame = make_synthetic_frame(1);
  const Models models = Models::build(cfg);
  const StereoResult r1 = run_stereo(frame, cfg, models);
  const StereoResult r2 = run_stereo(frame, cfg, models);
  check("stereo_determinism", r1.trace.head_input == r2.trace.head_input);
  bool shapes = true;
  for (const Tensor& g : r1.trace.geometry) {
    shapes = shapes && g.dims() == Shape{cfg.egfg.pyramid.channels, 5, 150, 144};
  }
  check("geometry_shapes", shapes);

  std::vector<ObjectLabel> perfect = frame.labels;
  for (auto& l : perfect) l.has_score = true;
  const std::vector<std::vector<ObjectLabel>> gts{frame.labels};
  const std::vector<std::vector<ObjectLabel>> dets{perfect};
  bool all100 = true;
  for (const auto& row : evaluate(gts, dets)) all100 = all100 && (!row.ap || *row.ap == 100.0);
  check("eval_perfect", all100);

  if (failed > 0) {
    err << failed << " selftest check(s) failed\n";
    return kExitFrameFailed;
  }
  return kExitOk;
}

}  // namespace

std::vector<std::string> pipeline_dump_names() {
  std::vector<std::string> names;
  for (const auto& [name, _] : stereo_tensors(EgfgTrace{})) names.push_back(name);
  return names;
}

std::vector<std::string> distill_dump_names() {
  std::vector<std::string> names{"M_fg", "M_sp"};
  for (std::size_t i = 1; i <= kScales; ++i) {
    const std::string k = std::to_string(i);
    names.push_back("F_gf" + k);
    names.push_back("F_lgf" + k);
    names.push_back("F_lbev" + k);
  }
  return names;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App cli{"Stereo geometry pipeline: features, distillation, detection and KITTI evaluation", "esgn"};
  cli.require_subcommand(1);

  CommonOptions pipe_opt;
  auto* pipeline = cli.add_subcommand("pipeline", "Run the stereo path per frame and write detections and dumps");
  pipeline->add_option("--config", pipe_opt.config, "Run config file")->required();
  pipeline->add_option("--dump", pipe_opt.dump, "Comma-separated tensors to dump as ESGT");
  pipeline->add_option("--frames", pipe_opt.frames, "Comma-separated frame ids (default: all)");
  pipeline->add_option("--threads", pipe_opt.threads, "Frames processed concurrently")->check(CLI::PositiveNumber);

  CommonOptions dist_opt;
  std::string teacher_dir;
  auto* distill = cli.add_subcommand("distill", "Report the masked feature distillation loss per scale");
  distill->add_option("--config", dist_opt.config, "Run config file")->required();
  distill->add_option("--dump", dist_opt.dump, "Comma-separated tensors to dump as ESGT");
  distill->add_option("--frames", dist_opt.frames, "Comma-separated frame ids (default: all)");
  distill->add_option("--threads", dist_opt.threads, "Frames processed concurrently")->check(CLI::PositiveNumber);
  distill->add_option("--teacher", teacher_dir, "Directory of precomputed F_lgf{1,2,3}.esgt (optionally per frame)");

  std::string gt_dir;
  std::string det_dir;
  std::string eval_config;
  std::optional<int> recall_points;
  auto* eval = cli.add_subcommand("eval", "KITTI AP_3D / AP_BEV over label directories");
  eval->add_option("--gt", gt_dir, "Ground-truth label directory")->required();
  eval->add_option("--det", det_dir, "Detection label directory (16th column = score)")->required();
  eval->add_option("--config", eval_config, "Optional run config for eval_iou / recall_points");
  eval->add_option("--recall-points", recall_points, "Recall sample count")->check(CLI::IsMember({11, 40}));

  CommonOptions viz_opt;
  std::string viz_det;
  std::string viz_out;
  auto* viz = cli.add_subcommand("viz", "Render PPM wireframes and a PLY point/box file per frame");
  viz->add_option("--config", viz_opt.config, "Run config file")->required();
  viz->add_option("--frames", viz_opt.frames, "Comma-separated frame ids (default: all)");
  viz->add_option("--threads", viz_opt.threads, "Frames processed concurrently")->check(CLI::PositiveNumber);
  viz->add_option("--det", viz_det, "Detection directory (default: <output_dir>/det)");
  viz->add_option("--out", viz_out, "Output directory (default: <output_dir>/viz)");

  auto* selftest = cli.add_subcommand("selftest", "Run built-in consistency checks");

  std::string synth_out;
  std::size_t synth_count = 1;
  std::uint64_t synth_seed = 0;
  std::size_t synth_h = 64;
  std::size_t synth_w = 128;
  auto* synth = cli.add_subcommand("synth", "Write a synthetic KITTI-layout dataset and a matching config");
  synth->add_option("--out", synth_out, "Dataset directory")->required();
  synth->add_option("--count", synth_count, "Number of frames");
  synth->add_option("--seed", synth_seed, "Scene seed of the first frame");
  synth->add_option("--height", synth_h, "Image height");
  synth->add_option("--width", synth_w, "Image width");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    cli.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << cli.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << cli.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (pipeline->parsed()) return cmd_pipeline(pipe_opt, out, err);
    if (distill->parsed()) return cmd_distill(dist_opt, teacher_dir, out, err);
    if (eval->parsed()) return cmd_eval(gt_dir, det_dir, eval_config, recall_points, out, err);
    if (viz->parsed()) return cmd_viz(viz_opt, viz_det, viz_out, out, err);
    if (selftest->parsed()) return cmd_selftest(out, err);
    if (synth->parsed()) return cmd_synth(synth_out, synth_count, synth_seed, synth_h, synth_w, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace esgn::app
