#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "dtop/heads.hpp"
#include "dtop/model.hpp"
#include "gradcheck.hpp"

using namespace dtop;
using T = Tensor<double>;

namespace {

TokenState<double> random_tokens(int n, int C, std::mt19937_64& rng) {
  TokenState<double> st;
  st.features = randn<double>({n, C}, rng, 1.0);
  st.total = n;
  for (int i = 0; i < n; ++i) st.origin.push_back(i);
  return st;
}

// Explicit loop-by-loop replay of the ATM-lite pipeline: cross-attention,
// sigmoid class scores, temperature-scaled class softmax masks, product,
// renormalize.
std::vector<double> atm_oracle(const TokenState<double>& st,
                               const AtmLiteHead<double>& w) {
  const int n = st.active(), C = st.features.cols();
  const int K = w.class_tokens.rows();
  auto proj = [&](const T& in, const T& wm, const T& bm) {
    std::vector<double> out(static_cast<std::size_t>(in.rows()) * wm.cols());
    for (int i = 0; i < in.rows(); ++i)
      for (int j = 0; j < wm.cols(); ++j) {
        double acc = bm.at(j);
        for (int k = 0; k < wm.rows(); ++k) acc += in.at(i, k) * wm.at(k, j);
        out[i * wm.cols() + j] = acc;
      }
    return out;
  };
  auto q = proj(w.class_tokens, w.wq, w.bq);
  auto kk = proj(st.features, w.wk, w.bk);
  auto v = proj(st.features, w.wv, w.bv);

  std::vector<double> sim(static_cast<std::size_t>(K) * n);
  for (int a = 0; a < K; ++a)
    for (int j = 0; j < n; ++j) {
      double s = 0;
      for (int d = 0; d < C; ++d) s += q[a * C + d] * kk[j * C + d];
      sim[a * n + j] = s;
    }

  // attention rows (over tokens), scaled by 1/sqrt(C)
  std::vector<double> ctx(static_cast<std::size_t>(K) * C, 0.0);
  for (int a = 0; a < K; ++a) {
    double mx = -1e300;
    for (int j = 0; j < n; ++j)
      mx = std::max(mx, sim[a * n + j] / std::sqrt(double(C)));
    double denom = 0;
    std::vector<double> e(n);
    for (int j = 0; j < n; ++j) {
      e[j] = std::exp(sim[a * n + j] / std::sqrt(double(C)) - mx);
      denom += e[j];
    }
    for (int d = 0; d < C; ++d)
      for (int j = 0; j < n; ++j) ctx[a * C + d] += e[j] / denom * v[j * C + d];
  }
  // output projection + residual class tokens
  std::vector<double> updated(static_cast<std::size_t>(K) * C);
  for (int a = 0; a < K; ++a)
    for (int d = 0; d < C; ++d) {
      double acc = w.bo.at(d);
      for (int e2 = 0; e2 < C; ++e2) acc += ctx[a * C + e2] * w.wo.at(e2, d);
      updated[a * C + d] = w.class_tokens.at(a, d) + acc;
    }
  // class score k = sigmoid of classifier output k on class token k
  std::vector<double> cls(K);
  for (int a = 0; a < K; ++a) {
    double acc = w.bc.at(a);
    for (int d = 0; d < C; ++d) acc += updated[a * C + d] * w.wc.at(d, a);
    cls[a] = 1.0 / (1.0 + std::exp(-acc));
  }
  // per-token-column softmax over classes of temperature-scaled sim
  const double tau = w.temp.at(0);
  std::vector<double> probs(static_cast<std::size_t>(n) * K);
  for (int j = 0; j < n; ++j) {
    double mx = -1e300;
    for (int a = 0; a < K; ++a) mx = std::max(mx, sim[a * n + j] * tau);
    double denom = 0;
    std::vector<double> mask(K);
    for (int a = 0; a < K; ++a) {
      mask[a] = std::exp(sim[a * n + j] * tau - mx);
      denom += mask[a];
    }
    double total = 0;
    for (int a = 0; a < K; ++a) {
      mask[a] = cls[a] * mask[a] / denom;
      total += mask[a];
    }
    for (int a = 0; a < K; ++a) probs[j * K + a] = mask[a] / total;
  }
  return probs;
}

}  // namespace

TEST_CASE("fcn head: zero weights give uniform probabilities") {
  std::mt19937_64 rng(1);
  TokenState<double> st = random_tokens(6, 8, rng);
  FcnHead<double> h;
  h.w = zeros<double>({8, 4});
  h.b = zeros<double>({4});
  AuxPrediction<double> pred = fcn_forward(st, h);
  for (int i = 0; i < 6; ++i) {
    CHECK(pred.confidence[i] == doctest::Approx(0.25));
    for (int j = 0; j < 4; ++j)
      CHECK(pred.probs.at(i, j) == doctest::Approx(0.25));
  }
}

TEST_CASE("fcn head: saturated logit margin") {
  TokenState<double> st;
  st.features = T({1, 1}, {1.0});
  st.origin = {0};
  st.total = 1;
  FcnHead<double> h;
  h.w = zeros<double>({1, 4});
  h.b = T({4}, {0.0, 0.0, 25.0, 0.0});
  AuxPrediction<double> pred = fcn_forward(st, h);
  CHECK(pred.confidence[0] > 0.999);
  CHECK(pred.argmax[0] == 2);
}

TEST_CASE("fcn head matches exp-normalize oracle") {
  std::mt19937_64 rng(2);
  TokenState<double> st = random_tokens(5, 8, rng);
  FcnHead<double> h = init_fcn_head<double>(8, 3, rng);
  AuxPrediction<double> pred = fcn_forward(st, h);
  for (int i = 0; i < 5; ++i) {
    long double denom = 0;
    std::vector<long double> logits(3);
    for (int j = 0; j < 3; ++j) {
      long double acc = h.b.at(j);
      for (int d = 0; d < 8; ++d) acc += st.features.at(i, d) * h.w.at(d, j);
      logits[j] = acc;
    }
    for (int j = 0; j < 3; ++j) denom += expl(logits[j]);
    for (int j = 0; j < 3; ++j)
      CHECK(std::abs(pred.probs.at(i, j) - (double)(expl(logits[j]) / denom)) <
            1e-9);
  }
}

TEST_CASE("atm head: K=1 yields confidence exactly 1.0") {
  std::mt19937_64 rng(3);
  TokenState<double> st = random_tokens(7, 8, rng);
  AtmLiteHead<double> h = init_atm_head<double>(8, 1, rng);
  AuxPrediction<double> pred = atm_forward(st, h);
  for (int i = 0; i < 7; ++i) {
    CHECK(pred.confidence[i] == 1.0);
    CHECK(pred.argmax[i] == 0);
    CHECK(pred.probs.at(i, 0) == 1.0);
  }
}

TEST_CASE("atm head: identical tokens get identical rows") {
  std::mt19937_64 rng(4);
  AtmLiteHead<double> h = init_atm_head<double>(8, 3, rng);
  T row = randn<double>({1, 8}, rng, 1.0);
  TokenState<double> st;
  st.features = concat_rows<double>({row, row, row, row});
  st.origin = {0, 1, 2, 3};
  st.total = 4;
  AuxPrediction<double> pred = atm_forward(st, h);
  for (int i = 1; i < 4; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(pred.probs.at(i, j) == doctest::Approx(pred.probs.at(0, j)));
}

TEST_CASE("atm head matches straight-line oracle") {
  std::mt19937_64 rng(5);
  TokenState<double> st = random_tokens(4, 8, rng);
  AtmLiteHead<double> h = init_atm_head<double>(8, 3, rng);
  AuxPrediction<double> pred = atm_forward(st, h);
  std::vector<double> expect = atm_oracle(st, h);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(std::abs(pred.probs.at(i, j) - expect[i * 3 + j]) < 1e-9);
}

TEST_CASE("prediction rows are valid distributions") {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 10; ++t) {
    TokenState<double> st = random_tokens(9, 16, rng);
    AtmLiteHead<double> ah = init_atm_head<double>(16, 5, rng);
    FcnHead<double> fh = init_fcn_head<double>(16, 5, rng);
    for (const auto& pred : {atm_forward(st, ah), fcn_forward(st, fh)}) {
      for (int i = 0; i < 9; ++i) {
        double sum = 0;
        for (int j = 0; j < 5; ++j) {
          CHECK(pred.probs.at(i, j) >= 0.0);
          CHECK(pred.probs.at(i, j) <= 1.0);
          sum += pred.probs.at(i, j);
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
        CHECK(pred.confidence[i] == pred.probs.at(i, pred.argmax[i]));
      }
    }
  }
}

TEST_CASE("heads are permutation equivariant") {
  std::mt19937_64 rng(7);
  const int n = 8, C = 8, K = 3;
  TokenState<double> st = random_tokens(n, C, rng);
  std::vector<int> perm{3, 1, 7, 0, 5, 2, 6, 4}, inv(n);
  for (int i = 0; i < n; ++i) inv[perm[i]] = i;
  TokenState<double> permuted;
  permuted.features = gather_rows(st.features, perm);
  permuted.total = n;
  for (int i : perm) permuted.origin.push_back(st.origin[i]);

  AtmLiteHead<double> ah = init_atm_head<double>(C, K, rng);
  FcnHead<double> fh = init_fcn_head<double>(C, K, rng);
  auto check_equiv = [&](const AuxPrediction<double>& a,
                         const AuxPrediction<double>& b) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < K; ++j)
        CHECK(std::abs(a.probs.at(i, j) - b.probs.at(inv[i], j)) < 1e-12);
  };
  check_equiv(atm_forward(st, ah), atm_forward(permuted, ah));
  check_equiv(fcn_forward(st, fh), fcn_forward(permuted, fh));
}

TEST_CASE("heads at different stages have disjoint parameters") {
  ModelConfig cfg;
  cfg.backbone.dim = 16;
  cfg.backbone.layers = 6;
  cfg.backbone.heads = 4;
  cfg.backbone.stage_boundaries = {3, 4};
  cfg.classes = 4;
  Model<double> m = init_model<double>(cfg, 42);
  std::mt19937_64 rng(8);
  TokenState<double> st = random_tokens(5, 16, rng);

  AuxPrediction<double> before = head_forward(st, m.heads[1]);
  // trash every parameter of head 0
  for (auto& [name, t] : head_params(m.heads[0], 1))
    std::fill(t->data->begin(), t->data->end(), 123.0);
  AuxPrediction<double> after = head_forward(st, m.heads[1]);
  for (std::size_t i = 0; i < before.probs.numel(); ++i)
    CHECK(before.probs.at(static_cast<int>(i)) ==
          after.probs.at(static_cast<int>(i)));
}

TEST_CASE("head_loss values and label validation") {
  AuxPrediction<double> pred;
  pred.probs = T({2, 4}, {1 - 3e-12, 1e-12, 1e-12, 1e-12,  //
                          0.25, 0.25, 0.25, 0.25});
  finalize_prediction(pred);
  T near_zero = head_loss(pred, {0, -1});
  CHECK(std::abs((*near_zero.data)[0]) < 1e-9);
  T ln4 = head_loss(pred, {-1, 2});
  CHECK((*ln4.data)[0] == doctest::Approx(std::log(4.0)));
  CHECK_THROWS_AS(head_loss(pred, {0, 7}), LabelError);
}

TEST_CASE("head loss gradients w.r.t. head weights match finite differences") {
  std::mt19937_64 rng(9);
  TokenState<double> st = random_tokens(5, 8, rng);
  std::vector<int> labels{0, 2, 1, 2, 0};

  FcnHead<double> fh = init_fcn_head<double>(8, 3, rng);
  CHECK(dtop::testing::grad_check({&fh.w, &fh.b}, [&]() {
          return head_loss(fcn_forward(st, fh), labels);
        }) < 1e-4);

  AtmLiteHead<double> ah = init_atm_head<double>(8, 3, rng);
  CHECK(dtop::testing::grad_check(
            {&ah.class_tokens, &ah.wq, &ah.wv, &ah.wc, &ah.temp},
            [&]() { return head_loss(atm_forward(st, ah), labels); }) < 1e-4);
}
