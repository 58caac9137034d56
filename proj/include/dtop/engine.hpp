#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "dtop/model.hpp"

namespace dtop {

struct MergeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InternalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class PruneMethod { kTopK, kRemove, kAverage, kFixedFraction };

inline const char* prune_method_name(PruneMethod m) {
  switch (m) {
    case PruneMethod::kTopK: return "topk";
    case PruneMethod::kRemove: return "remove";
    case PruneMethod::kAverage: return "average";
    case PruneMethod::kFixedFraction: return "fixed_fraction";
  }
  return "?";
}

struct PruneConfig {
  bool enabled = true;
  double p0 = 0.95;  // p0 == 1.0 means pruning disabled (baseline)
  int k = 5;         // context tokens kept per present category
  PruneMethod method = PruneMethod::kTopK;
  double rho = 0.35;  // fixed_fraction only

  bool active() const { return enabled && p0 < 1.0; }

  void validate() const {
    if (!(p0 > 0.0 && p0 <= 1.0)) throw ConfigError("p0 must be in (0, 1]");
    if (k < 0) throw ConfigError("k must be non-negative");
    if (method == PruneMethod::kFixedFraction && !(rho >= 0.0 && rho <= 1.0))
      throw ConfigError("rho must be in [0, 1]");
  }
};

struct ExitRecord {
  int origin_index = 0;  // grid position in [0, N)
  int stage = 0;
  int label = 0;
  double confidence = 0.0;
};

struct StageStats {
  int stage = 0;
  int active_before = 0;  // real (grid-mapped) tokens entering the stage
  int exited = 0;
  int retained_context = 0;
  int active_after = 0;  // active_before - exited
};

// Easy = confidence >= p0 over active rows; p0 == 1.0 degenerates to the
// baseline (empty easy set). Synthetic rows are never graded easy.
template <class S>
std::pair<std::vector<int>, std::vector<int>> grade(
    const AuxPrediction<S>& pred, const std::vector<int>& origin, double p0) {
  if (!(p0 > 0.0 && p0 <= 1.0)) throw ConfigError("p0 must be in (0, 1]");
  std::vector<int> easy, hard;
  const int n = pred.rows();
  for (int i = 0; i < n; ++i) {
    const bool is_easy = p0 < 1.0 && origin[i] >= 0 &&
                         static_cast<double>(pred.confidence[i]) >= p0;
    (is_easy ? easy : hard).push_back(i);
  }
  return {easy, hard};
}

// For each category present among the easy tokens' argmax labels, keep the
// min(k, count) highest-confidence tokens. Ties break toward lower origin.
template <class S>
std::vector<int> retain_context(const std::vector<int>& easy,
                                const AuxPrediction<S>& pred,
                                const std::vector<int>& origin, int k) {
  std::map<int, std::vector<int>> by_class;
  for (int i : easy) by_class[pred.argmax[i]].push_back(i);
  std::vector<int> retained;
  for (auto& [cls, members] : by_class) {
    std::stable_sort(members.begin(), members.end(), [&](int a, int b) {
      if (pred.confidence[a] != pred.confidence[b])
        return pred.confidence[a] > pred.confidence[b];
      return origin[a] < origin[b];
    });
    const int take = std::min<int>(k, static_cast<int>(members.size()));
    retained.insert(retained.end(), members.begin(), members.begin() + take);
  }
  std::sort(retained.begin(), retained.end());
  return retained;
}

template <class S>
struct PruneStepResult {
  TokenState<S> tokens;
  std::vector<ExitRecord> exits;
  StageStats stats;
};

template <class S>
PruneStepResult<S> prune_step(const TokenState<S>& tokens,
                              const AuxPrediction<S>& pred,
                              const PruneConfig& cfg, int stage) {
  if (pred.rows() != tokens.active())
    throw InternalError("prune_step: prediction/token row mismatch");
  cfg.validate();

  PruneStepResult<S> res;
  res.stats.stage = stage;
  res.stats.active_before = tokens.real_active();

  if (!cfg.active()) {
    res.tokens = tokens;
    res.stats.active_after = res.stats.active_before;
    return res;
  }

  std::vector<int> exit_rows;
  int retained_count = 0;
  if (cfg.method == PruneMethod::kFixedFraction) {
    std::vector<int> real_rows;
    for (int i = 0; i < tokens.active(); ++i)
      if (tokens.origin[i] >= 0) real_rows.push_back(i);
    const int want = static_cast<int>(
        std::ceil(cfg.rho * static_cast<double>(real_rows.size())));
    std::stable_sort(real_rows.begin(), real_rows.end(), [&](int a, int b) {
      if (pred.confidence[a] != pred.confidence[b])
        return pred.confidence[a] > pred.confidence[b];
      return tokens.origin[a] < tokens.origin[b];
    });
    exit_rows.assign(real_rows.begin(),
                     real_rows.begin() + std::min<int>(want, real_rows.size()));
    std::sort(exit_rows.begin(), exit_rows.end());
  } else {
    auto [easy, hard] = grade(pred, tokens.origin, cfg.p0);
    (void)hard;
    if (cfg.method == PruneMethod::kTopK) {
      std::vector<int> retained =
          retain_context(easy, pred, tokens.origin, cfg.k);
      retained_count = static_cast<int>(retained.size());
      std::set_difference(easy.begin(), easy.end(), retained.begin(),
                          retained.end(), std::back_inserter(exit_rows));
    } else {
      exit_rows = easy;  // remove and average both exit the full easy set
    }
  }

  std::vector<char> exiting(tokens.active(), 0);
  for (int i : exit_rows) exiting[i] = 1;

  for (int i : exit_rows)
    res.exits.push_back({tokens.origin[i], stage, pred.argmax[i],
                         static_cast<double>(pred.confidence[i])});

  std::vector<int> keep;
  for (int i = 0; i < tokens.active(); ++i)
    if (!exiting[i]) keep.push_back(i);

  TokenState<S> out;
  out.total = tokens.total;
  std::vector<Tensor<S>> feature_parts;
  if (!keep.empty()) {
    feature_parts.push_back(gather_rows(tokens.features, keep));
    for (int i : keep) out.origin.push_back(tokens.origin[i]);
  }

  if (cfg.method == PruneMethod::kAverage) {
    // One synthetic context token per exited class: the mean of that
    // class's exited features. Carries no origin, never merges.
    std::map<int, std::vector<int>> exited_by_class;
    for (int i : exit_rows) exited_by_class[pred.argmax[i]].push_back(i);
    for (auto& [cls, members] : exited_by_class) {
      feature_parts.push_back(mean_rows(gather_rows(tokens.features, members)));
      out.origin.push_back(-1);
    }
  }

  if (!feature_parts.empty())
    out.features = feature_parts.size() == 1 ? feature_parts[0]
                                             : concat_rows(feature_parts);
  else
    out.features = Tensor<S>({0, tokens.features.cols()});

  res.stats.exited = static_cast<int>(exit_rows.size());
  res.stats.retained_context = retained_count;
  res.stats.active_after = res.stats.active_before - res.stats.exited;
  res.tokens = std::move(out);
  return res;
}

// Dense token-label map: exit labels for exited tokens, final-stage argmax
// for survivors. Every grid position must be covered exactly once.
template <class S>
std::vector<int> merge(const std::vector<ExitRecord>& exits,
                       const AuxPrediction<S>& final_pred,
                       const TokenState<S>& final_tokens, int total) {
  std::vector<int> labels(total, -1);
  for (const auto& e : exits) {
    if (e.origin_index < 0 || e.origin_index >= total)
      throw MergeError("merge: exit origin out of range");
    if (labels[e.origin_index] != -1)
      throw MergeError("merge: origin assigned twice");
    labels[e.origin_index] = e.label;
  }
  for (int i = 0; i < final_tokens.active(); ++i) {
    const int o = final_tokens.origin[i];
    if (o < 0) continue;  // synthetic context token
    if (o >= total) throw MergeError("merge: origin out of range");
    if (labels[o] != -1) throw MergeError("merge: origin assigned twice");
    labels[o] = final_pred.argmax[i];
  }
  for (int i = 0; i < total; ++i)
    if (labels[i] == -1) throw MergeError("merge: coverage gap");
  return labels;
}

struct DtopResult {
  std::vector<int> token_labels;       // length N
  std::vector<StageStats> stats;       // one per stage executed
  std::vector<ExitRecord> exits;
  std::vector<int> layer_occupancy;    // length L; 0 = layer skipped
  std::vector<int> head_occupancy;     // length M; 0 = head skipped
};

// Full staged pass: run_stage -> aux head -> prune_step per stage, final
// head on survivors, merge into the dense token-label map. With pruning
// disabled (or p0 == 1.0) this is the unstaged forward plus decode head,
// bit for bit.
template <class S>
DtopResult dtop_forward(const Tensor<S>& image, const Model<S>& model,
                        const PruneConfig& cfg) {
  const auto& bcfg = model.cfg.backbone;
  const int L = bcfg.layers, M = bcfg.stages();
  DtopResult res;
  res.layer_occupancy.assign(L, 0);
  res.head_occupancy.assign(M, 0);

  TokenState<S> st = add_positional(patch_embed(image, model.backbone),
                                    model.backbone.pos);

  if (!cfg.active()) {
    for (int l = 0; l < L; ++l) res.layer_occupancy[l] = st.active();
    st = run_all_layers(st, model.backbone);
    AuxPrediction<S> pred = head_forward(st, model.heads.back());
    res.head_occupancy[M - 1] = st.active();
    res.token_labels = merge(res.exits, pred, st, st.total);
    for (int m = 1; m <= M; ++m) {
      StageStats s;
      s.stage = m;
      s.active_before = s.active_after = st.total;
      res.stats.push_back(s);
    }
    return res;
  }

  for (int m = 1; m <= M; ++m) {
    if (st.real_active() == 0) break;
    auto [lo, hi] = bcfg.stage_range(m);
    for (int l = lo; l < hi; ++l) res.layer_occupancy[l] = st.active();
    st = run_stage(st, model.backbone, m);
    AuxPrediction<S> pred = head_forward(st, model.heads[m - 1]);
    res.head_occupancy[m - 1] = st.active();
    if (m < M) {
      auto step = prune_step(st, pred, cfg, m);
      res.exits.insert(res.exits.end(), step.exits.begin(), step.exits.end());
      res.stats.push_back(step.stats);
      st = std::move(step.tokens);
    } else {
      StageStats s;
      s.stage = m;
      s.active_before = s.active_after = st.real_active();
      res.stats.push_back(s);
      res.token_labels = merge(res.exits, pred, st, st.total);
    }
  }

  if (res.token_labels.empty()) {
    // Everything exited before the final stage.
    AuxPrediction<S> empty_pred;
    empty_pred.probs = Tensor<S>({0, model.cfg.classes});
    TokenState<S> empty_tokens;
    empty_tokens.features = Tensor<S>({0, bcfg.dim});
    empty_tokens.total = st.total;
    res.token_labels = merge(res.exits, empty_pred, empty_tokens, st.total);
  }
  return res;
}

// Upsample a token-label map to pixels (each token covers a P x P block).
inline std::vector<int> upsample_labels(const std::vector<int>& token_labels,
                                        const BackboneConfig& cfg) {
  std::vector<int> px(static_cast<std::size_t>(cfg.image_h) * cfg.image_w);
  const int gw = cfg.grid_w(), P = cfg.patch;
  for (int y = 0; y < cfg.image_h; ++y)
    for (int x = 0; x < cfg.image_w; ++x)
      px[static_cast<std::size_t>(y) * cfg.image_w + x] =
          token_labels[(y / P) * gw + (x / P)];
  return px;
}

}  // namespace dtop
