// Command-line driver: train models on the synthetic benchmark, evaluate
// them with or without token pruning, print analytic cost breakdowns,
// export visualizations, and sweep the exit threshold.
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dtop/checkpoint.hpp"
#include "dtop/config.hpp"
#include "dtop/cost.hpp"
#include "dtop/eval.hpp"
#include "dtop/train.hpp"
#include "dtop/viz.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dtop;

namespace {

struct CliOptions {
  std::string config_path;
  std::string checkpoint;
  std::string out = "out";
  // optional overrides on top of the config file
  double p0 = -1;
  int k = -1;
  std::string method;
  std::string scheme;
  std::string boundaries;  // comma-separated layer indices
  std::string precision;
  int iterations = -1;
  std::int64_t seed = -1;
  // sweep / viz specifics
  std::string p0_list = "0.6,0.8,0.9,0.95,1.0";
  int image_index = 0;
  int count = 4;
  bool full_size = false;
  bool binary_pix = false;
};

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

RunConfig resolve_config(const CliOptions& opt) {
  RunConfig cfg;
  if (!opt.config_path.empty())
    cfg = run_config_from_json(load_json_file(opt.config_path));
  if (opt.p0 >= 0) cfg.prune.p0 = opt.p0;
  if (opt.k >= 0) cfg.prune.k = opt.k;
  if (!opt.method.empty()) cfg.prune.method = prune_method_from_name(opt.method);
  if (!opt.scheme.empty()) cfg.train.scheme = train_scheme_from_name(opt.scheme);
  if (!opt.boundaries.empty())
    cfg.model.backbone.stage_boundaries = parse_int_list(opt.boundaries);
  if (!opt.precision.empty()) cfg.precision = opt.precision;
  if (opt.iterations >= 0) cfg.train.iterations = opt.iterations;
  if (opt.seed >= 0) {
    cfg.train.seed = static_cast<std::uint64_t>(opt.seed);
    cfg.data.seed = static_cast<std::uint64_t>(opt.seed);
  }
  cfg.model.backbone.validate();
  cfg.prune.validate();
  if (cfg.precision != "f32" && cfg.precision != "f64")
    throw ConfigError("precision must be f32 or f64");
  return cfg;
}

std::vector<Sample> make_dataset(const SynthSceneConfig& cfg, int count,
                                 int base_index) {
  std::vector<Sample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i)
    out.push_back(generate_scene(cfg, base_index + i));
  return out;
}

// Evaluation images use indices far above the training range so the two
// sets never overlap.
constexpr int kEvalBase = 1 << 20;

void write_manifest(const fs::path& dir, const RunConfig& cfg,
                    const std::string& command) {
  json j = to_json(cfg);
  j["command"] = command;
  write_json_file((dir / "manifest.json").string(), j);
}

template <class S>
int run_train(const CliOptions& opt, const RunConfig& cfg) {
  fs::create_directories(opt.out);
  Model<S> model = opt.checkpoint.empty()
                       ? init_model<S>(cfg.model, cfg.train.seed)
                       : load_model<S>(opt.checkpoint);
  std::vector<Sample> train_set = make_dataset(cfg.data, cfg.train_images, 0);
  std::vector<Sample> eval_set =
      make_dataset(cfg.data, cfg.eval_images, kEvalBase);

  std::vector<double> curve = train(model, train_set, cfg.train, cfg.prune);
  const fs::path dir(opt.out);
  save_model((dir / "checkpoint.txt").string(), model);
  {
    std::ofstream f(dir / "loss.csv");
    f << "iteration,loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i)
      f << i << "," << curve[i] << "\n";
  }

  PruneConfig eval_prune = cfg.prune;
  if (cfg.train.scheme == TrainScheme::kBaseline) eval_prune.enabled = false;
  EvalReport rep = evaluate(model, eval_set, eval_prune);
  write_json_file((dir / "report.json").string(), to_json(rep));
  {
    std::ofstream f(dir / "report.csv");
    f << eval_report_csv(rep);
  }
  write_manifest(dir, cfg, "train");
  std::printf("scheme=%s iterations=%d final_loss=%.6f\n",
              train_scheme_name(cfg.train.scheme), cfg.train.iterations,
              curve.empty() ? 0.0 : curve.back());
  std::printf("eval: miou=%.4f avg_macs=%.4e\n", rep.miou, rep.avg_macs);
  std::printf("wrote %s\n", (dir / "checkpoint.txt").string().c_str());
  return 0;
}

template <class S>
int run_eval(const CliOptions& opt, const RunConfig& cfg) {
  if (opt.checkpoint.empty()) throw ConfigError("eval requires --checkpoint");
  fs::create_directories(opt.out);
  Model<S> model = load_model<S>(opt.checkpoint);
  std::vector<Sample> eval_set =
      make_dataset(cfg.data, cfg.eval_images, kEvalBase);
  EvalReport rep = evaluate(model, eval_set, cfg.prune);
  const fs::path dir(opt.out);
  write_json_file((dir / "report.json").string(), to_json(rep));
  {
    std::ofstream f(dir / "report.csv");
    f << eval_report_csv(rep);
  }
  write_manifest(dir, cfg, "eval");
  std::printf("miou=%.4f avg_macs=%.4e\n", rep.miou, rep.avg_macs);
  std::printf("exits per stage:");
  for (std::size_t m = 0; m < rep.exit_histogram.size(); ++m)
    std::printf(" stage%zu=%llu", m + 1,
                static_cast<unsigned long long>(rep.exit_histogram[m]));
  std::printf("\n");
  return 0;
}

int run_cost(const CliOptions& opt, const RunConfig& cfg) {
  CostConfig ccfg;
  if (opt.full_size) {
    ccfg.tokens = 1024;
    ccfg.dim = 768;
    ccfg.layers = 12;
    ccfg.heads = 12;
    ccfg.patch = 16;
    ccfg.classes = 150;
    ccfg.stage_boundaries = {6, 8};
    ccfg.head_types.assign(3, cfg.model.decode_head);
  } else {
    ccfg = CostConfig::from_model(cfg.model);
  }
  OccupancySchedule occ = cfg.prune.active() ? OccupancySchedule::full(ccfg)
                                             : OccupancySchedule::baseline(ccfg);
  CostReport r = model_macs(ccfg, occ);
  std::printf("%s", format_cost_report(ccfg, r).c_str());
  if (!opt.out.empty()) {
    fs::create_directories(opt.out);
    std::ofstream f(fs::path(opt.out) / "cost.csv");
    f << cost_report_csv(ccfg, r);
  }
  return 0;
}

template <class S>
int run_viz(const CliOptions& opt, const RunConfig& cfg) {
  if (opt.checkpoint.empty()) throw ConfigError("viz requires --checkpoint");
  fs::create_directories(opt.out);
  Model<S> model = load_model<S>(opt.checkpoint);
  for (int i = 0; i < opt.count; ++i) {
    const int idx = kEvalBase + opt.image_index + i;
    Sample s = generate_scene(cfg.data, idx);
    Tensor<S> image = image_tensor<S>(s, cfg.model.backbone);
    DtopResult res = dtop_forward(image, model, cfg.prune);
    const std::string prefix =
        (fs::path(opt.out) / ("image" + std::to_string(opt.image_index + i)))
            .string();
    export_visuals(s, upsample_labels(res.token_labels, cfg.model.backbone),
                   res.exits, cfg.model.backbone, prefix, opt.binary_pix);
    std::printf("wrote %s_{input,pred,stage*}\n", prefix.c_str());
  }
  write_manifest(opt.out, cfg, "viz");
  return 0;
}

template <class S>
int run_sweep(const CliOptions& opt, const RunConfig& cfg) {
  if (opt.checkpoint.empty()) throw ConfigError("sweep requires --checkpoint");
  fs::create_directories(opt.out);
  Model<S> model = load_model<S>(opt.checkpoint);
  std::vector<Sample> eval_set =
      make_dataset(cfg.data, cfg.eval_images, kEvalBase);
  std::vector<double> thresholds = parse_double_list(opt.p0_list);

  std::ostringstream csv;
  csv << "p0,miou,avg_macs\n";
  std::printf("%8s %8s %14s\n", "p0", "miou", "avg_macs");
  json rows = json::array();
  for (double p0 : thresholds) {
    PruneConfig pc = cfg.prune;
    pc.p0 = p0;
    pc.validate();
    EvalReport rep = evaluate(model, eval_set, pc);
    csv << p0 << "," << rep.miou << "," << rep.avg_macs << "\n";
    std::printf("%8.4f %8.4f %14.4e\n", p0, rep.miou, rep.avg_macs);
    rows.push_back({{"p0", p0}, {"miou", rep.miou}, {"avg_macs", rep.avg_macs}});
  }
  const fs::path dir(opt.out);
  {
    std::ofstream f(dir / "sweep.csv");
    f << csv.str();
  }
  write_json_file((dir / "sweep.json").string(), rows);
  write_manifest(dir, cfg, "sweep");
  return 0;
}

template <class Fn>
int dispatch_precision(const RunConfig& cfg, Fn&& fn) {
  if (cfg.precision == "f64") return fn(double{});
  return fn(float{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Token-pruning vision transformer for semantic segmentation"};
  app.require_subcommand(1);
  CliOptions opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "JSON run configuration");
    sub->add_option("--out", opt.out, "output directory");
    sub->add_option("--p0", opt.p0, "exit confidence threshold override");
    sub->add_option("--k", opt.k, "context tokens per category override");
    sub->add_option("--method", opt.method,
                    "pruning method: topk|remove|average|fixed_fraction");
    sub->add_option("--boundaries", opt.boundaries,
                    "comma-separated stage boundary layers");
    sub->add_option("--seed", opt.seed, "model/data seed override");
    sub->add_option("--precision", opt.precision, "f32 or f64");
    return sub;
  };

  CLI::App* train_cmd = add_common(app.add_subcommand("train", "train a model"));
  train_cmd->add_option("--scheme", opt.scheme,
                        "baseline|direct|finetune|retrain");
  train_cmd->add_option("--iterations", opt.iterations, "iteration override");
  train_cmd->add_option("--checkpoint", opt.checkpoint,
                        "starting weights (required for finetune/retrain)");

  CLI::App* eval_cmd =
      add_common(app.add_subcommand("eval", "evaluate a checkpoint"));
  eval_cmd->add_option("--checkpoint", opt.checkpoint, "trained weights")
      ->required();

  CLI::App* cost_cmd =
      add_common(app.add_subcommand("cost", "analytic MAC breakdown"));
  cost_cmd->add_flag("--full-size", opt.full_size,
                     "use the ViT-Base reference configuration");

  CLI::App* viz_cmd =
      add_common(app.add_subcommand("viz", "export prediction/exit maps"));
  viz_cmd->add_option("--checkpoint", opt.checkpoint, "trained weights")
      ->required();
  viz_cmd->add_option("--index", opt.image_index, "first evaluation image");
  viz_cmd->add_option("--count", opt.count, "number of images");
  viz_cmd->add_flag("--binary", opt.binary_pix, "binary PPM/PGM output");

  CLI::App* sweep_cmd =
      add_common(app.add_subcommand("sweep", "threshold sweep"));
  sweep_cmd->add_option("--checkpoint", opt.checkpoint, "trained weights")
      ->required();
  sweep_cmd->add_option("--p0-list", opt.p0_list,
                        "comma-separated thresholds");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = resolve_config(opt);
    if (train_cmd->parsed())
      return dispatch_precision(cfg, [&](auto s) {
        return run_train<decltype(s)>(opt, cfg);
      });
    if (eval_cmd->parsed())
      return dispatch_precision(cfg, [&](auto s) {
        return run_eval<decltype(s)>(opt, cfg);
      });
    if (cost_cmd->parsed()) return run_cost(opt, cfg);
    if (viz_cmd->parsed())
      return dispatch_precision(cfg, [&](auto s) {
        return run_viz<decltype(s)>(opt, cfg);
      });
    if (sweep_cmd->parsed())
      return dispatch_precision(cfg, [&](auto s) {
        return run_sweep<decltype(s)>(opt, cfg);
      });
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
