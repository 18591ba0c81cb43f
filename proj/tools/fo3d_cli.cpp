// fo3d: command-line driver for the feature extraction, projection, distillation and
// open-vocabulary stages.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "fo3d/errors.hpp"
#include "fo3d/log.hpp"
#include "fo3d/pipeline.hpp"
#include "fo3d/selftest.hpp"
#include "fo3d/synthetic.hpp"

namespace fs = std::filesystem;
using namespace fo3d;

namespace {

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::string log_level = "info";
  int jobs = 0;
};

PipelineConfig make_config(const CommonOptions& o) {
  PipelineConfig c;
  if (!o.config.empty()) c = PipelineConfig::from_file(o.config);
  if (!o.overrides.empty()) {
    std::string text;
    for (const auto& s : o.overrides) text += s + "\n";
    c.apply(KeyValueFile::parse(text, "--set"), fs::current_path());
  }
  if (o.jobs > 0) c.jobs = o.jobs;
  c.validate();
  return c;
}

void apply_log_level(const std::string& level) {
  if (level == "debug") set_log_level(LogLevel::kDebug);
  else if (level == "info") set_log_level(LogLevel::kInfo);
  else if (level == "warning") set_log_level(LogLevel::kWarning);
  else if (level == "error") set_log_level(LogLevel::kError);
  else if (level == "off") set_log_level(LogLevel::kOff);
  else throw ConfigError("unknown log level '" + level + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void run_synth(const fs::path& out, int points_per_rect) {
  SyntheticSpec spec;
  spec.points_per_rect = points_per_rect;
  const SyntheticScene scene = make_planted_scene(spec);
  write_synthetic_scene(out / "scene", scene);
  const ViTWeights w = planted_vit_weights();
  save_vit_bundle(w, out / "weights");
  std::vector<std::array<std::uint8_t, 3>> colors;
  for (const auto& r : scene.rects) colors.push_back(r.color);
  const Tensor emb = planted_class_embeddings(w, colors);
  write_tensor(out / "embeddings.fot", emb);
  // the query asks for the last class
  const auto c = static_cast<std::size_t>(emb.dim(1));
  const auto v = emb.values<float>();
  write_tensor(out / "query.fot", Tensor::from<float>({c}, std::vector<float>(v.end() - static_cast<std::ptrdiff_t>(c), v.end())));
  write_text(out / "labels.txt",
             "# name | group | split | ignore\n"
             "red    | head   | seen\n"
             "green  | head   | seen\n"
             "blue   | common | seen\n"
             "yellow | common | unseen\n"
             "cyan   | tail   | unseen\n");
  write_text(out / "config.txt",
             "weights = weights\n"
             "embeddings = embeddings.fot\n"
             "label_set = labels.txt\n"
             "query_embedding = query.fot\n"
             "frame_stride = 1\n"
             "hidden = 32\n"
             "knn = 8\n"
             "steps = 500\n");
  std::cout << "wrote planted scene with " << scene.cloud.size() << " points and " << scene.frames.size()
            << " views to " << out.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fo3d: dense CLIP-style feature distillation into 3D point clouds"};
  app.require_subcommand(1);
  CommonOptions common;
  app.add_option("-c,--config", common.config, "key = value config file");
  app.add_option("--set", common.overrides, "config override key=value (repeatable)");
  app.add_option("--log-level", common.log_level, "debug, info, warning, error or off");
  app.add_option("-j,--jobs", common.jobs, "parallel views during extract");

  std::string scene, work, out, pointnet, pred, gt, csv;
  std::vector<std::string> scenes, works;
  std::optional<double> threshold, top_fraction;
  std::string mode;
  int synth_points = 300;

  auto* extract = app.add_subcommand("extract", "per-view pixel features");
  auto* project = app.add_subcommand("project", "multi-view target features per point");
  auto* distill = app.add_subcommand("distill", "train the point network on target features");
  auto* segment = app.add_subcommand("segment", "label points with the class embeddings");
  auto* query = app.add_subcommand("query", "mask points matching a query embedding");
  auto* pseudo = app.add_subcommand("pseudo-label", "label unseen-class points for zero-shot training");
  auto* eval = app.add_subcommand("eval", "mIoU / mAcc / hIoU report");
  auto* selftest = app.add_subcommand("selftest", "run the built-in invariant checks");
  auto* synth = app.add_subcommand("synth", "write a planted demo scene with matching weights and embeddings");

  for (auto* sc : {extract, project, segment, query, pseudo}) {
    sc->add_option("-s,--scene", scene, "scene directory")->required();
    sc->add_option("-w,--work", work, "work directory for stage outputs")->required();
  }
  for (auto* sc : {segment, query, pseudo}) {
    sc->add_option("--pointnet", pointnet, "use a trained point network instead of the projected targets");
  }
  distill->add_option("-s,--scene", scenes, "scene directory (repeatable)")->required();
  distill->add_option("-w,--work", works, "work directory per scene (repeatable)")->required();
  distill->add_option("-o,--out", out, "output directory")->required();
  query->add_option("--threshold", threshold, "absolute cosine threshold");
  query->add_option("--top-fraction", top_fraction, "fraction of points to keep");
  pseudo->add_option("--mode", mode, "restricted or full")->check(CLI::IsMember({"restricted", "full"}));
  eval->add_option("--pred", pred, "predicted labels (i32 FOT1)")->required();
  eval->add_option("--gt", gt, "ground-truth labels (i32 FOT1)")->required();
  eval->add_option("--csv", csv, "write the report as CSV");
  synth->add_option("-o,--out", out, "output directory")->required();
  synth->add_option("--points", synth_points, "points per rectangle");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    apply_log_level(common.log_level);
    if (*synth) {
      run_synth(out, synth_points);
      return 0;
    }
    if (*selftest) {
      bool ok = true;
      for (const auto& r : run_selftest()) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ")\n";
        ok = ok && r.passed;
      }
      return ok ? 0 : static_cast<int>(ExitCode::kNumeric);
    }
    PipelineConfig config = make_config(common);
    const SceneWork sw{scene, work};
    if (*extract) {
      const auto ids = cmd_extract(scene, work, config);
      std::cout << "extracted " << ids.size() << " views\n";
    } else if (*project) {
      const TargetFeatures t = cmd_project(scene, work, config);
      std::cout << t.valid_count() << " / " << t.size() << " points have target features\n";
    } else if (*distill) {
      if (scenes.size() != works.size()) throw ConfigError("distill: give one --work per --scene");
      std::vector<SceneWork> list;
      for (std::size_t i = 0; i < scenes.size(); ++i) list.push_back({scenes[i], works[i]});
      const TrainResult r = cmd_distill(list, out, config);
      if (!r.curve.empty()) std::cout << "final loss " << r.curve.back().loss << "\n";
    } else if (*segment) {
      const Segmentation s = cmd_segment(sw, config, pointnet);
      std::cout << "labeled " << s.labels.size() << " points\n";
    } else if (*query) {
      if (threshold && top_fraction) throw ConfigError("query: give --threshold or --top-fraction, not both");
      if (threshold) config.query_threshold = threshold;
      if (top_fraction) {
        config.query_threshold.reset();
        config.query_top_fraction = *top_fraction;
      }
      const auto mask = cmd_query(sw, config, pointnet);
      std::cout << std::count(mask.begin(), mask.end(), 1) << " of " << mask.size() << " points selected\n";
    } else if (*pseudo) {
      if (mode == "full") config.pseudo_mode = PseudoLabelMode::kFull;
      if (mode == "restricted") config.pseudo_mode = PseudoLabelMode::kRestricted;
      const auto labels = cmd_pseudo(sw, config, pointnet);
      std::cout << "wrote " << labels.size() << " pseudo-labels\n";
    } else if (*eval) {
      const EvalReport r = cmd_eval(pred, gt, config, csv);
      std::cout << format_report_table(r);
    }
    return 0;
  } catch (const ConfigError& e) {
    log_error(e.what());
    return static_cast<int>(ExitCode::kConfig);
  } catch (const std::invalid_argument& e) {
    log_error(e.what());
    return static_cast<int>(ExitCode::kConfig);
  } catch (const DataError& e) {
    log_error(e.what());
    return static_cast<int>(ExitCode::kData);
  } catch (const NumericError& e) {
    log_error(e.what());
    return static_cast<int>(ExitCode::kNumeric);
  } catch (const std::exception& e) {
    log_error(e.what());
    return static_cast<int>(ExitCode::kData);
  }
}
