#include "dtop/config.hpp"

#include <fstream>

namespace dtop {

using nlohmann::json;

HeadType head_type_from_name(const std::string& name) {
  if (name == "fcn") return HeadType::kFcn;
  if (name == "atm") return HeadType::kAtm;
  throw ConfigError("unknown head type: " + name);
}

PruneMethod prune_method_from_name(const std::string& name) {
  if (name == "topk") return PruneMethod::kTopK;
  if (name == "remove") return PruneMethod::kRemove;
  if (name == "average") return PruneMethod::kAverage;
  if (name == "fixed_fraction") return PruneMethod::kFixedFraction;
  throw ConfigError("unknown prune method: " + name);
}

TrainScheme train_scheme_from_name(const std::string& name) {
  if (name == "baseline") return TrainScheme::kBaseline;
  if (name == "direct") return TrainScheme::kDirect;
  if (name == "finetune") return TrainScheme::kFinetune;
  if (name == "retrain") return TrainScheme::kRetrain;
  throw ConfigError("unknown train scheme: " + name);
}

json to_json(const ModelConfig& c) {
  return json{{"image_h", c.backbone.image_h},
              {"image_w", c.backbone.image_w},
              {"patch", c.backbone.patch},
              {"channels", c.backbone.channels},
              {"dim", c.backbone.dim},
              {"layers", c.backbone.layers},
              {"heads", c.backbone.heads},
              {"ffn_ratio", c.backbone.ffn_ratio},
              {"boundaries", c.backbone.stage_boundaries},
              {"classes", c.classes},
              {"aux_head", head_type_name(c.aux_head)},
              {"decode_head", head_type_name(c.decode_head)}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.backbone.image_h = j.value("image_h", c.backbone.image_h);
  c.backbone.image_w = j.value("image_w", c.backbone.image_w);
  c.backbone.patch = j.value("patch", c.backbone.patch);
  c.backbone.channels = j.value("channels", c.backbone.channels);
  c.backbone.dim = j.value("dim", c.backbone.dim);
  c.backbone.layers = j.value("layers", c.backbone.layers);
  c.backbone.heads = j.value("heads", c.backbone.heads);
  c.backbone.ffn_ratio = j.value("ffn_ratio", c.backbone.ffn_ratio);
  if (j.contains("boundaries"))
    c.backbone.stage_boundaries = j["boundaries"].get<std::vector<int>>();
  c.classes = j.value("classes", c.classes);
  c.aux_head = head_type_from_name(j.value("aux_head", "atm"));
  c.decode_head = head_type_from_name(j.value("decode_head", "atm"));
  c.backbone.validate();
  return c;
}

json to_json(const PruneConfig& c) {
  return json{{"enabled", c.enabled},
              {"p0", c.p0},
              {"k", c.k},
              {"method", prune_method_name(c.method)},
              {"rho", c.rho}};
}

PruneConfig prune_config_from_json(const json& j) {
  PruneConfig c;
  c.enabled = j.value("enabled", c.enabled);
  c.p0 = j.value("p0", c.p0);
  c.k = j.value("k", c.k);
  c.method = prune_method_from_name(j.value("method", "topk"));
  c.rho = j.value("rho", c.rho);
  c.validate();
  return c;
}

json to_json(const TrainConfig& c) {
  return json{{"scheme", train_scheme_name(c.scheme)},
              {"iterations", c.iterations},
              {"lr", c.lr},
              {"momentum", c.momentum},
              {"warmup_fraction", c.warmup_fraction},
              {"aux_weight", c.aux_weight},
              {"clip_norm", c.clip_norm},
              {"p0", c.p0},
              {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.scheme = train_scheme_from_name(j.value("scheme", "baseline"));
  c.iterations = j.value("iterations", c.iterations);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.aux_weight = j.value("aux_weight", c.aux_weight);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.p0 = j.value("p0", c.p0);
  c.seed = j.value("seed", c.seed);
  return c;
}

json to_json(const SynthSceneConfig& c) {
  return json{{"image", c.image},       {"classes", c.classes},
              {"cell", c.cell},         {"shapes_min", c.shapes_min},
              {"shapes_max", c.shapes_max}, {"noise", c.noise},
              {"cell_noise", c.cell_noise}, {"class_jitter", c.class_jitter},
              {"seed", c.seed}};
}

SynthSceneConfig synth_config_from_json(const json& j) {
  SynthSceneConfig c;
  c.image = j.value("image", c.image);
  c.classes = j.value("classes", c.classes);
  c.cell = j.value("cell", c.cell);
  c.shapes_min = j.value("shapes_min", c.shapes_min);
  c.shapes_max = j.value("shapes_max", c.shapes_max);
  c.noise = j.value("noise", c.noise);
  c.cell_noise = j.value("cell_noise", c.cell_noise);
  c.class_jitter = j.value("class_jitter", c.class_jitter);
  c.seed = j.value("seed", c.seed);
  return c;
}

json to_json(const RunConfig& c) {
  return json{{"model", to_json(c.model)},
              {"data", to_json(c.data)},
              {"train_images", c.train_images},
              {"eval_images", c.eval_images},
              {"train", to_json(c.train)},
              {"prune", to_json(c.prune)},
              {"precision", c.precision}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j["model"]);
  if (j.contains("data")) c.data = synth_config_from_json(j["data"]);
  c.train_images = j.value("train_images", c.train_images);
  c.eval_images = j.value("eval_images", c.eval_images);
  if (j.contains("train")) c.train = train_config_from_json(j["train"]);
  if (j.contains("prune")) c.prune = prune_config_from_json(j["prune"]);
  c.precision = j.value("precision", c.precision);
  if (c.precision != "f32" && c.precision != "f64")
    throw ConfigError("precision must be f32 or f64");
  return c;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return json::parse(in, nullptr, true, /*ignore_comments=*/true);
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write file: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace dtop
