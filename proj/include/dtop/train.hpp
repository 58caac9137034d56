#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dtop/config.hpp"
#include "dtop/engine.hpp"
#include "dtop/synth.hpp"

namespace dtop {

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class S>
Tensor<S> image_tensor(const Sample& sample, const BackboneConfig& cfg) {
  Tensor<S> img({cfg.channels, cfg.image_h, cfg.image_w});
  for (std::size_t i = 0; i < sample.image.size(); ++i)
    (*img.data)[i] = static_cast<S>(sample.image[i]);
  return img;
}

// Decode-head loss plus weighted per-stage auxiliary losses. When pruning
// is active, each stage's auxiliary loss covers only tokens still active at
// that stage, so an exited token contributes loss exactly once, at its exit
// stage. Must run under an active tape for training.
template <class S>
S staged_loss(Model<S>& model, const Tensor<S>& image,
              const std::vector<int>& token_lab, const PruneConfig& prune,
              double aux_weight, Tensor<S>* loss_out) {
  const int M = model.stages();
  TokenState<S> st = add_positional(patch_embed(image, model.backbone),
                                    model.backbone.pos);
  std::vector<Tensor<S>> losses;
  for (int m = 1; m <= M; ++m) {
    if (st.real_active() == 0) break;
    st = run_stage(st, model.backbone, m);
    AuxPrediction<S> pred = head_forward(st, model.heads[m - 1]);
    std::vector<int> labels(st.active());
    for (int i = 0; i < st.active(); ++i)
      labels[i] = st.origin[i] >= 0 ? token_lab[st.origin[i]] : -1;
    Tensor<S> l = head_loss(pred, labels, -1);
    losses.push_back(m == M ? l : scale(l, static_cast<S>(aux_weight)));
    if (m < M && prune.active()) {
      auto step = prune_step(st, pred, prune, m);
      st = std::move(step.tokens);
    }
  }
  Tensor<S> total = losses[0];
  for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
  if (loss_out) *loss_out = total;
  return (*total.data)[0];
}

template <class S>
struct SgdMomentum {
  double lr = 0.05;
  double momentum = 0.9;
  std::vector<std::vector<S>> velocity;

  void init(const ParamList<S>& params) {
    velocity.clear();
    for (auto& [name, t] : params) velocity.emplace_back(t->numel(), S(0));
  }

  void step(const ParamList<S>& params, double lr_now) {
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor<S>* t = params[p].second;
      for (std::size_t i = 0; i < t->numel(); ++i) {
        velocity[p][i] = static_cast<S>(momentum) * velocity[p][i] +
                         (*t->grad)[i];
        (*t->data)[i] -= static_cast<S>(lr_now) * velocity[p][i];
      }
    }
  }
};

template <class S>
void clip_grad_norm(const ParamList<S>& params, double max_norm) {
  double sq = 0;
  for (auto& [name, t] : params)
    for (S g : *t->grad) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const S scale = static_cast<S>(max_norm / norm);
  for (auto& [name, t] : params)
    for (S& g : *t->grad) g *= scale;
}

// Trains in place; returns the per-iteration loss curve. Scheme contracts:
// baseline trains everything with pruning off, finetune freezes the
// backbone and prunes with train.p0, retrain updates everything with
// pruning on, direct performs no updates at all.
template <class S>
std::vector<double> train(Model<S>& model, const std::vector<Sample>& data,
                          const TrainConfig& cfg, const PruneConfig& prune_in) {
  std::vector<double> curve;
  if (cfg.scheme == TrainScheme::kDirect) return curve;
  if (data.empty()) throw ConfigError("train: empty dataset");

  PruneConfig prune = prune_in;
  if (cfg.scheme == TrainScheme::kBaseline) {
    prune.enabled = false;
  } else {
    prune.enabled = true;
    prune.p0 = cfg.p0;
  }

  ParamList<S> trainable;
  if (cfg.scheme == TrainScheme::kFinetune) {
    for (int s = 0; s < model.stages(); ++s) {
      auto hp = head_params(model.heads[s], s + 1);
      trainable.insert(trainable.end(), hp.begin(), hp.end());
    }
  } else {
    trainable = model_params(model);
  }
  for (auto& [name, t] : trainable) t->set_requires_grad(true);

  SgdMomentum<S> opt;
  opt.lr = cfg.lr;
  opt.momentum = cfg.momentum;
  opt.init(trainable);

  const int warmup =
      std::max(1, static_cast<int>(cfg.warmup_fraction * cfg.iterations));
  const auto& bcfg = model.cfg.backbone;

  std::vector<std::vector<int>> tok_labels(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    tok_labels[i] =
        token_labels(data[i].labels, bcfg.image_h, bcfg.image_w, bcfg.patch);

  for (int it = 0; it < cfg.iterations; ++it) {
    const std::size_t idx = static_cast<std::size_t>(it) % data.size();
    Tensor<S> image = image_tensor<S>(data[idx], bcfg);
    GradTape<S> tape;
    Tensor<S> loss;
    {
      TapeScope<S> scope(tape);
      staged_loss(model, image, tok_labels[idx], prune, cfg.aux_weight, &loss);
      const double lv = static_cast<double>((*loss.data)[0]);
      if (!std::isfinite(lv))
        throw DivergenceError("train: non-finite loss at iteration " +
                              std::to_string(it) + " (image " +
                              std::to_string(idx) + ")");
      curve.push_back(lv);
      tape.backward(loss);
    }
    if (cfg.clip_norm > 0) clip_grad_norm(trainable, cfg.clip_norm);
    // linear warmup then cosine decay to 1% of the peak rate
    double lr_now;
    if (it < warmup) {
      lr_now = cfg.lr * (it + 1) / warmup;
    } else {
      const double t = static_cast<double>(it - warmup) /
                       std::max(1, cfg.iterations - warmup);
      lr_now = cfg.lr * (0.01 + 0.99 * 0.5 * (1.0 + std::cos(t * 3.14159265358979)));
    }
    opt.step(trainable, lr_now);
    for (auto& [name, t] : trainable) t->zero_grad();
  }
  for (auto& [name, t] : trainable) t->requires_grad = false;
  return curve;
}

}  // namespace dtop
