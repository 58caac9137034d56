#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dtop/backbone.hpp"
#include "dtop/heads.hpp"

namespace dtop {

enum class HeadType { kFcn, kAtm };

inline const char* head_type_name(HeadType t) {
  return t == HeadType::kFcn ? "fcn" : "atm";
}

struct ModelConfig {
  BackboneConfig backbone;
  int classes = 4;
  HeadType aux_head = HeadType::kAtm;     // stages 1..M-1
  HeadType decode_head = HeadType::kAtm;  // stage M
};

// Backbone plus one head per stage; each head owns its parameters.
template <class S>
struct Model {
  ModelConfig cfg;
  Backbone<S> backbone;
  std::vector<HeadWeights<S>> heads;  // size M, heads[M-1] is the decoder

  int stages() const { return cfg.backbone.stages(); }
};

template <class S>
Model<S> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Model<S> m;
  m.cfg = cfg;
  m.backbone = init_backbone<S>(cfg.backbone, rng);
  const int M = cfg.backbone.stages();
  for (int s = 0; s < M; ++s) {
    const HeadType t = (s == M - 1) ? cfg.decode_head : cfg.aux_head;
    if (t == HeadType::kFcn)
      m.heads.emplace_back(init_fcn_head<S>(cfg.backbone.dim, cfg.classes, rng));
    else
      m.heads.emplace_back(init_atm_head<S>(cfg.backbone.dim, cfg.classes, rng));
  }
  return m;
}

template <class S>
using ParamList = std::vector<std::pair<std::string, Tensor<S>*>>;

template <class S>
ParamList<S> backbone_params(Backbone<S>& bb) {
  ParamList<S> p;
  p.emplace_back("backbone.patch.w", &bb.patch_w);
  p.emplace_back("backbone.patch.b", &bb.patch_b);
  p.emplace_back("backbone.pos", &bb.pos);
  for (std::size_t l = 0; l < bb.layers.size(); ++l) {
    auto& w = bb.layers[l];
    const std::string pre = "backbone.layer" + std::to_string(l) + ".";
    p.emplace_back(pre + "wq", &w.wq);
    p.emplace_back(pre + "bq", &w.bq);
    p.emplace_back(pre + "wk", &w.wk);
    p.emplace_back(pre + "bk", &w.bk);
    p.emplace_back(pre + "wv", &w.wv);
    p.emplace_back(pre + "bv", &w.bv);
    p.emplace_back(pre + "wo", &w.wo);
    p.emplace_back(pre + "bo", &w.bo);
    p.emplace_back(pre + "w1", &w.w1);
    p.emplace_back(pre + "b1", &w.b1);
    p.emplace_back(pre + "w2", &w.w2);
    p.emplace_back(pre + "b2", &w.b2);
    p.emplace_back(pre + "ln1_g", &w.ln1_g);
    p.emplace_back(pre + "ln1_b", &w.ln1_b);
    p.emplace_back(pre + "ln2_g", &w.ln2_g);
    p.emplace_back(pre + "ln2_b", &w.ln2_b);
  }
  return p;
}

template <class S>
ParamList<S> head_params(HeadWeights<S>& head, int stage) {
  ParamList<S> p;
  const std::string pre = "head.stage" + std::to_string(stage) + ".";
  if (auto* f = std::get_if<FcnHead<S>>(&head)) {
    p.emplace_back(pre + "w", &f->w);
    p.emplace_back(pre + "b", &f->b);
  } else {
    auto& a = std::get<AtmLiteHead<S>>(head);
    p.emplace_back(pre + "cls", &a.class_tokens);
    p.emplace_back(pre + "wq", &a.wq);
    p.emplace_back(pre + "bq", &a.bq);
    p.emplace_back(pre + "wk", &a.wk);
    p.emplace_back(pre + "bk", &a.bk);
    p.emplace_back(pre + "wv", &a.wv);
    p.emplace_back(pre + "bv", &a.bv);
    p.emplace_back(pre + "wo", &a.wo);
    p.emplace_back(pre + "bo", &a.bo);
    p.emplace_back(pre + "wc", &a.wc);
    p.emplace_back(pre + "bc", &a.bc);
    p.emplace_back(pre + "temp", &a.temp);
  }
  return p;
}

template <class S>
ParamList<S> model_params(Model<S>& m) {
  ParamList<S> p = backbone_params(m.backbone);
  for (int s = 0; s < m.stages(); ++s) {
    auto hp = head_params(m.heads[s], s + 1);
    p.insert(p.end(), hp.begin(), hp.end());
  }
  return p;
}

// Deep copy: the copied model owns fresh parameter storage, so training one
// copy leaves the other untouched.
template <class S>
Model<S> clone_model(Model<S>& m) {
  Model<S> c = m;
  ParamList<S> src = model_params(m), dst = model_params(c);
  for (std::size_t i = 0; i < src.size(); ++i) {
    Tensor<S>* t = dst[i].second;
    *t = Tensor<S>(src[i].second->shape);
    *t->data = *src[i].second->data;
  }
  return c;
}

// Unstaged reference path: all L layers then the decode head.
template <class S>
AuxPrediction<S> plain_forward(const Tensor<S>& image, const Model<S>& m,
                               TokenState<S>* final_tokens = nullptr) {
  TokenState<S> st = add_positional(patch_embed(image, m.backbone),
                                    m.backbone.pos);
  st = run_all_layers(st, m.backbone);
  if (final_tokens) *final_tokens = st;
  return head_forward(st, m.heads.back());
}

}  // namespace dtop
