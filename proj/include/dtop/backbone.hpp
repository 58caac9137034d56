#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "dtop/tensor.hpp"

namespace dtop {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BackboneConfig {
  int image_h = 32;
  int image_w = 32;
  int patch = 4;
  int channels = 3;
  int dim = 64;
  int layers = 6;
  int heads = 4;
  int ffn_ratio = 4;
  std::vector<int> stage_boundaries = {3, 4};  // l_1 < ... < l_{M-1} < L

  int grid_h() const { return image_h / patch; }
  int grid_w() const { return image_w / patch; }
  int tokens() const { return grid_h() * grid_w(); }
  int patch_dim() const { return channels * patch * patch; }
  int stages() const { return static_cast<int>(stage_boundaries.size()) + 1; }

  // Layer range (exclusive, inclusive] for stage m in [1, M].
  std::pair<int, int> stage_range(int m) const {
    const int M = stages();
    if (m < 1 || m > M) throw ConfigError("stage index out of range");
    const int lo = m == 1 ? 0 : stage_boundaries[m - 2];
    const int hi = m == M ? layers : stage_boundaries[m - 1];
    return {lo, hi};
  }

  void validate() const {
    if (image_h % patch != 0 || image_w % patch != 0)
      throw ConfigError("image size must be divisible by patch size");
    if (dim % heads != 0)
      throw ConfigError("embedding dim must be divisible by head count");
    int prev = 0;
    for (int b : stage_boundaries) {
      if (b < 1 || b > layers - 1)
        throw ConfigError("stage boundary outside [1, L-1]");
      if (b <= prev) throw ConfigError("stage boundaries must be increasing");
      prev = b;
    }
  }
};

// Active token features plus the mapping back to original grid positions.
// origin[i] == -1 marks a synthetic context token (Average pruning method);
// such rows never exit and never appear in the merged map.
template <class S>
struct TokenState {
  Tensor<S> features;        // [n_active x C]
  std::vector<int> origin;   // length n_active
  int total = 0;             // N = HW / P^2

  int active() const { return features.rows(); }
  int real_active() const {
    int c = 0;
    for (int o : origin)
      if (o >= 0) ++c;
    return c;
  }
};

template <class S>
struct LayerWeights {
  Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;  // attention projections
  Tensor<S> w1, b1, w2, b2;                  // FFN
  Tensor<S> ln1_g, ln1_b, ln2_g, ln2_b;
};

template <class S>
struct Backbone {
  BackboneConfig cfg;
  Tensor<S> patch_w;  // [3P^2 x C]
  Tensor<S> patch_b;  // [C]
  Tensor<S> pos;      // [N x C], indexed through origin
  std::vector<LayerWeights<S>> layers;
};

template <class S>
LayerWeights<S> init_layer_weights(const BackboneConfig& cfg,
                                   std::mt19937_64& rng) {
  const int C = cfg.dim, F = cfg.ffn_ratio * cfg.dim;
  const S wstd = static_cast<S>(std::sqrt(2.0 / (C + C)));
  const S fstd1 = static_cast<S>(std::sqrt(2.0 / (C + F)));
  LayerWeights<S> w;
  w.wq = randn<S>({C, C}, rng, wstd);
  w.bq = zeros<S>({C});
  w.wk = randn<S>({C, C}, rng, wstd);
  w.bk = zeros<S>({C});
  w.wv = randn<S>({C, C}, rng, wstd);
  w.bv = zeros<S>({C});
  w.wo = randn<S>({C, C}, rng, wstd);
  w.bo = zeros<S>({C});
  w.w1 = randn<S>({C, F}, rng, fstd1);
  w.b1 = zeros<S>({F});
  w.w2 = randn<S>({F, C}, rng, fstd1);
  w.b2 = zeros<S>({C});
  w.ln1_g = full<S>({C}, S(1));
  w.ln1_b = zeros<S>({C});
  w.ln2_g = full<S>({C}, S(1));
  w.ln2_b = zeros<S>({C});
  return w;
}

template <class S>
Backbone<S> init_backbone(const BackboneConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  Backbone<S> b;
  b.cfg = cfg;
  const int pd = cfg.patch_dim();
  b.patch_w =
      randn<S>({pd, cfg.dim}, rng, static_cast<S>(std::sqrt(2.0 / (pd + cfg.dim))));
  b.patch_b = zeros<S>({cfg.dim});
  b.pos = randn<S>({cfg.tokens(), cfg.dim}, rng, S(0.02));
  for (int l = 0; l < cfg.layers; ++l)
    b.layers.push_back(init_layer_weights<S>(cfg, rng));
  return b;
}

// Linear projection of flattened P x P patches, row-major grid order.
// image: [3 x H x W] flattened row-major.
template <class S>
TokenState<S> patch_embed(const Tensor<S>& image, const Backbone<S>& bb) {
  const auto& cfg = bb.cfg;
  if (image.shape != std::vector<int>{cfg.channels, cfg.image_h, cfg.image_w})
    throw ConfigError("patch_embed: image dimensions do not match config");
  const int gh = cfg.grid_h(), gw = cfg.grid_w(), P = cfg.patch;
  const int N = cfg.tokens(), pd = cfg.patch_dim();
  Tensor<S> patches({N, pd});
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      const int t = gy * gw + gx;
      int col = 0;
      for (int c = 0; c < cfg.channels; ++c)
        for (int py = 0; py < P; ++py)
          for (int px = 0; px < P; ++px) {
            const int y = gy * P + py, x = gx * P + px;
            patches.at(t, col++) =
                image.at(c * cfg.image_h * cfg.image_w + y * cfg.image_w + x);
          }
    }
  TokenState<S> st;
  st.features = add_row_bias(matmul(patches, bb.patch_w), bb.patch_b);
  st.origin.resize(N);
  for (int i = 0; i < N; ++i) st.origin[i] = i;
  st.total = N;
  return st;
}

// Positional rows follow tokens through pruning via origin; synthetic
// tokens (origin < 0) receive no positional term.
template <class S>
TokenState<S> add_positional(const TokenState<S>& tokens,
                             const Tensor<S>& pos_table) {
  if (pos_table.rows() != tokens.total)
    throw ConfigError("add_positional: table must have N rows");
  std::vector<int> idx;
  idx.reserve(tokens.origin.size());
  bool any_synth = false;
  for (int o : tokens.origin) {
    if (o < 0) {
      any_synth = true;
      idx.push_back(0);
    } else {
      idx.push_back(o);
    }
  }
  Tensor<S> rows = gather_rows(pos_table, idx);
  if (any_synth) {
    Tensor<S> mask({tokens.active()});
    for (int i = 0; i < tokens.active(); ++i)
      mask.at(i) = tokens.origin[i] < 0 ? S(0) : S(1);
    rows = scale_rows(rows, mask);
  }
  TokenState<S> out = tokens;
  out.features = add(tokens.features, rows);
  return out;
}

// One Eq.-1 unit: Z' = MHSA(LN(Z)) + Z; out = FFN(LN(Z')) + Z'.
// Attention is computed over exactly the active rows.
template <class S>
TokenState<S> layer_forward(const TokenState<S>& tokens,
                            const LayerWeights<S>& w, int heads) {
  const Tensor<S>& x = tokens.features;
  const int C = x.cols();
  const int dh = C / heads;
  const S scale_factor = static_cast<S>(1.0 / std::sqrt(double(dh)));

  Tensor<S> a = layer_norm(x, w.ln1_g, w.ln1_b, S(1e-5));
  Tensor<S> q = add_row_bias(matmul(a, w.wq), w.bq);
  Tensor<S> k = add_row_bias(matmul(a, w.wk), w.bk);
  Tensor<S> v = add_row_bias(matmul(a, w.wv), w.bv);

  std::vector<Tensor<S>> head_outs;
  head_outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Tensor<S> qh = slice_cols(q, h * dh, dh);
    Tensor<S> kh = slice_cols(k, h * dh, dh);
    Tensor<S> vh = slice_cols(v, h * dh, dh);
    Tensor<S> scores = scale(matmul(qh, transpose(kh)), scale_factor);
    Tensor<S> attn = softmax_rows(scores);
    head_outs.push_back(matmul(attn, vh));
  }
  Tensor<S> merged = heads == 1 ? head_outs[0] : concat_cols(head_outs);
  Tensor<S> attn_out = add_row_bias(matmul(merged, w.wo), w.bo);
  Tensor<S> z = add(x, attn_out);

  Tensor<S> b = layer_norm(z, w.ln2_g, w.ln2_b, S(1e-5));
  Tensor<S> f1 = gelu(add_row_bias(matmul(b, w.w1), w.b1));
  Tensor<S> f2 = add_row_bias(matmul(f1, w.w2), w.b2);

  TokenState<S> out = tokens;
  out.features = add(z, f2);
  return out;
}

// Applies layers (l_{m-1}, l_m] in order; l_0 = 0, l_M = L.
template <class S>
TokenState<S> run_stage(const TokenState<S>& tokens, const Backbone<S>& bb,
                        int stage_index) {
  auto [lo, hi] = bb.cfg.stage_range(stage_index);
  TokenState<S> st = tokens;
  for (int l = lo; l < hi; ++l)
    st = layer_forward(st, bb.layers[l], bb.cfg.heads);
  return st;
}

template <class S>
TokenState<S> run_all_layers(const TokenState<S>& tokens,
                             const Backbone<S>& bb) {
  TokenState<S> st = tokens;
  for (int l = 0; l < bb.cfg.layers; ++l)
    st = layer_forward(st, bb.layers[l], bb.cfg.heads);
  return st;
}

}  // namespace dtop
