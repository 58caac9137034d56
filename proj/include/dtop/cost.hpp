#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dtop/model.hpp"

namespace dtop {

// Mirrors the model configuration for closed-form accounting. Never
// executes numerically, so full-size configs are cheap to evaluate.
struct CostConfig {
  int tokens = 64;     // N
  int dim = 64;        // C
  int layers = 6;      // L
  int heads = 4;
  int ffn_ratio = 4;
  int patch = 4;
  int channels = 3;
  int classes = 4;     // K
  std::vector<int> stage_boundaries;
  std::vector<HeadType> head_types;  // one per stage

  int stages() const { return static_cast<int>(stage_boundaries.size()) + 1; }
  void validate() const;

  static CostConfig from_model(const ModelConfig& m);
};

// Per-layer active token counts plus per-stage head input counts.
// A zero entry means the layer/head was skipped.
struct OccupancySchedule {
  std::vector<int> layers;
  std::vector<int> heads;

  static OccupancySchedule full(const CostConfig& cfg);
  // Baseline with only the decode head executed (pruning disabled).
  static OccupancySchedule baseline(const CostConfig& cfg);
};

struct CostReport {
  std::vector<std::uint64_t> layer_macs;  // length L
  std::uint64_t patch_embed_macs = 0;
  std::vector<std::uint64_t> head_macs;   // length M
  std::uint64_t total = 0;
};

// MACs for one transformer layer over n active tokens:
// 4nC^2 (QKV + output projections) + 2n^2 C (scores + weighted values)
// + 2 * ffn_ratio * nC^2 (FFN). Layer norm, softmax, GELU, biases and
// residuals are excluded; they are sub-1% of totals.
std::uint64_t layer_macs(int n, int dim, int heads, int ffn_ratio);

std::uint64_t patch_embed_macs(int tokens, int dim, int channels, int patch);

// FCN: nCK. ATM-lite: 2KnC attention + 2(K+n)C^2 projections + K^2 C
// classifier.
std::uint64_t head_macs(HeadType type, int n, int dim, int classes);

CostReport model_macs(const CostConfig& cfg, const OccupancySchedule& occ);

double dataset_average(const std::vector<CostReport>& reports);

std::string format_cost_report(const CostConfig& cfg, const CostReport& r);
std::string cost_report_csv(const CostConfig& cfg, const CostReport& r);

}  // namespace dtop
