#pragma once

#include <string>

#include <json.hpp>

#include "dtop/engine.hpp"
#include "dtop/model.hpp"
#include "dtop/synth.hpp"

namespace dtop {

enum class TrainScheme { kBaseline, kDirect, kFinetune, kRetrain };

inline const char* train_scheme_name(TrainScheme s) {
  switch (s) {
    case TrainScheme::kBaseline: return "baseline";
    case TrainScheme::kDirect: return "direct";
    case TrainScheme::kFinetune: return "finetune";
    case TrainScheme::kRetrain: return "retrain";
  }
  return "?";
}

struct TrainConfig {
  TrainScheme scheme = TrainScheme::kBaseline;
  int iterations = 800;
  double lr = 0.05;
  double momentum = 0.9;
  double warmup_fraction = 0.05;
  double aux_weight = 1.0;  // per-stage auxiliary loss weight
  double clip_norm = 1.0;   // global gradient-norm clip; <= 0 disables
  double p0 = 0.95;         // pruning threshold during finetune/retrain
  std::uint64_t seed = 1;
};

// Fully resolved run configuration; every run echoes it into a manifest.
struct RunConfig {
  ModelConfig model;
  SynthSceneConfig data;
  int train_images = 512;
  int eval_images = 128;
  TrainConfig train;
  PruneConfig prune;
  std::string precision = "f32";  // "f32" or "f64"
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const PruneConfig& c);
PruneConfig prune_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const SynthSceneConfig& c);
SynthSceneConfig synth_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

// Parses JSON with // and /* */ comments permitted.
nlohmann::json load_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);

HeadType head_type_from_name(const std::string& name);
PruneMethod prune_method_from_name(const std::string& name);
TrainScheme train_scheme_from_name(const std::string& name);

}  // namespace dtop
