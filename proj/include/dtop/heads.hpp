#pragma once

#include <cmath>
#include <variant>
#include <vector>

#include "dtop/backbone.hpp"
#include "dtop/tensor.hpp"

namespace dtop {

struct LabelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Per-token class distributions P_m with derived max confidence p_{m,n}
// and argmax labels (lowest-index tie-break).
template <class S>
struct AuxPrediction {
  Tensor<S> probs;            // [n_active x K]
  std::vector<S> confidence;  // max over classes per row
  std::vector<int> argmax;    // argmax per row

  int classes() const { return probs.cols(); }
  int rows() const { return probs.rows(); }
};

template <class S>
void finalize_prediction(AuxPrediction<S>& pred) {
  const int n = pred.probs.rows(), k = pred.probs.cols();
  pred.confidence.resize(n);
  pred.argmax.resize(n);
  for (int i = 0; i < n; ++i) {
    S best = pred.probs.at(i, 0);
    int arg = 0;
    for (int j = 1; j < k; ++j) {
      if (pred.probs.at(i, j) > best) {
        best = pred.probs.at(i, j);
        arg = j;
      }
    }
    pred.confidence[i] = best;
    pred.argmax[i] = arg;
  }
}

template <class S>
struct FcnHead {
  Tensor<S> w;  // [C x K]
  Tensor<S> b;  // [K]
};

// One cross-attention block: class tokens query the encoder tokens. The
// pre-softmax similarity matrix doubles as the mask source.
template <class S>
struct AtmLiteHead {
  Tensor<S> class_tokens;  // [K x C]
  Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<S> wc;    // classifier [C x K]
  Tensor<S> bc;    // [K]
  Tensor<S> temp;  // mask temperature, [1], init 1/sqrt(C)
};

template <class S>
using HeadWeights = std::variant<FcnHead<S>, AtmLiteHead<S>>;

template <class S>
FcnHead<S> init_fcn_head(int dim, int classes, std::mt19937_64& rng) {
  FcnHead<S> h;
  h.w = randn<S>({dim, classes}, rng,
                 static_cast<S>(std::sqrt(2.0 / (dim + classes))));
  h.b = zeros<S>({classes});
  return h;
}

template <class S>
AtmLiteHead<S> init_atm_head(int dim, int classes, std::mt19937_64& rng) {
  const S wstd = static_cast<S>(std::sqrt(2.0 / (dim + dim)));
  AtmLiteHead<S> h;
  h.class_tokens = randn<S>({classes, dim}, rng, S(0.02));
  h.wq = randn<S>({dim, dim}, rng, wstd);
  h.bq = zeros<S>({dim});
  h.wk = randn<S>({dim, dim}, rng, wstd);
  h.bk = zeros<S>({dim});
  h.wv = randn<S>({dim, dim}, rng, wstd);
  h.bv = zeros<S>({dim});
  h.wo = randn<S>({dim, dim}, rng, wstd);
  h.bo = zeros<S>({dim});
  h.wc = randn<S>({dim, classes}, rng,
                  static_cast<S>(std::sqrt(2.0 / (dim + classes))));
  h.bc = zeros<S>({classes});
  h.temp = full<S>({1}, static_cast<S>(1.0 / std::sqrt(double(dim))));
  return h;
}

template <class S>
AuxPrediction<S> fcn_forward(const TokenState<S>& tokens,
                             const FcnHead<S>& w) {
  AuxPrediction<S> pred;
  pred.probs = softmax_rows(
      add_row_bias(matmul(tokens.features, w.w), w.b));
  finalize_prediction(pred);
  return pred;
}

// Class tokens cross-attend to the encoder tokens. Updated class tokens
// give per-class sigmoid scores c; the raw similarity matrix, softmaxed
// over classes per token column with temperature, gives masks M. Per-token
// scores c .* M are renormalized into distributions so the confidence
// criterion applies uniformly to both head types.
template <class S>
AuxPrediction<S> atm_forward(const TokenState<S>& tokens,
                             const AtmLiteHead<S>& w) {
  const Tensor<S>& x = tokens.features;
  const int C = x.cols();
  const S attn_scale = static_cast<S>(1.0 / std::sqrt(double(C)));

  Tensor<S> q = add_row_bias(matmul(w.class_tokens, w.wq), w.bq);  // [K x C]
  Tensor<S> k = add_row_bias(matmul(x, w.wk), w.bk);               // [n x C]
  Tensor<S> v = add_row_bias(matmul(x, w.wv), w.bv);               // [n x C]
  Tensor<S> sim = matmul(q, transpose(k));                         // [K x n]

  Tensor<S> attn = softmax_rows(scale(sim, attn_scale));
  Tensor<S> updated =
      add(w.class_tokens, add_row_bias(matmul(matmul(attn, v), w.wo), w.bo));

  // Class k's score is the k-th classifier output on class token k.
  Tensor<S> cls_logits = add_row_bias(matmul(updated, w.wc), w.bc);  // [K x K]
  Tensor<S> cls_prob = sigmoid(diag(cls_logits));                    // [K]

  // Masks: softmax over classes per token column.
  Tensor<S> masks =
      transpose(softmax_rows(transpose(scale_by(sim, w.temp))));  // [K x n]

  Tensor<S> scored = scale_rows(masks, cls_prob);  // [K x n]
  AuxPrediction<S> pred;
  pred.probs = normalize_rows(transpose(scored));  // [n x K]
  finalize_prediction(pred);
  return pred;
}

template <class S>
AuxPrediction<S> head_forward(const TokenState<S>& tokens,
                              const HeadWeights<S>& w) {
  if (std::holds_alternative<FcnHead<S>>(w))
    return fcn_forward(tokens, std::get<FcnHead<S>>(w));
  return atm_forward(tokens, std::get<AtmLiteHead<S>>(w));
}

// Cross-entropy on log(probs) against per-token labels; rows labeled
// ignore_index (synthetic context tokens) are skipped.
template <class S>
Tensor<S> head_loss(const AuxPrediction<S>& pred,
                    const std::vector<int>& labels, int ignore_index = -1) {
  for (int lb : labels)
    if (lb != ignore_index && (lb < 0 || lb >= pred.classes()))
      throw LabelError("head_loss: label out of range");
  return nll_rows(pred.probs, labels, ignore_index);
}

}  // namespace dtop
