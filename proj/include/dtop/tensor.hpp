#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dtop {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IndexError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Multiply-accumulate counter, incremented inside matmul only.
// Thread-local so parallel per-image passes can keep private counts.
inline thread_local std::uint64_t g_mac_count = 0;

inline void reset_mac_count() { g_mac_count = 0; }
inline std::uint64_t mac_count() { return g_mac_count; }

inline std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

template <class S>
class GradTape;

// Dense row-major tensor. Values are immutable once produced by an op;
// only leaf parameters are mutated in place (by the optimizer, between
// tape lifetimes).
template <class S>
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<S>> data;
  std::shared_ptr<std::vector<S>> grad;  // same length as data when present
  bool requires_grad = false;

  Tensor() : data(std::make_shared<std::vector<S>>()) {}

  explicit Tensor(std::vector<int> sh)
      : shape(std::move(sh)),
        data(std::make_shared<std::vector<S>>(shape_numel(shape), S(0))) {}

  Tensor(std::vector<int> sh, std::vector<S> values)
      : shape(std::move(sh)),
        data(std::make_shared<std::vector<S>>(std::move(values))) {
    if (data->size() != shape_numel(shape))
      throw ShapeError("tensor data length does not match shape");
  }

  std::size_t numel() const { return data->size(); }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  S& at(int i) { return (*data)[static_cast<std::size_t>(i)]; }
  S at(int i) const { return (*data)[static_cast<std::size_t>(i)]; }
  S& at(int r, int c) { return (*data)[static_cast<std::size_t>(r) * cols() + c]; }
  S at(int r, int c) const {
    return (*data)[static_cast<std::size_t>(r) * cols() + c];
  }

  void set_requires_grad(bool rg = true) {
    requires_grad = rg;
    if (rg && !grad) grad = std::make_shared<std::vector<S>>(numel(), S(0));
  }

  void alloc_grad() {
    if (!grad) grad = std::make_shared<std::vector<S>>(numel(), S(0));
  }

  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), S(0));
  }

  bool all_finite() const {
    for (S v : *data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

template <class S>
Tensor<S> zeros(std::vector<int> shape) {
  return Tensor<S>(std::move(shape));
}

template <class S>
Tensor<S> full(std::vector<int> shape, S value) {
  Tensor<S> t(std::move(shape));
  std::fill(t.data->begin(), t.data->end(), value);
  return t;
}

template <class S>
Tensor<S> identity(int n) {
  Tensor<S> t({n, n});
  for (int i = 0; i < n; ++i) t.at(i, i) = S(1);
  return t;
}

template <class S>
Tensor<S> randn(std::vector<int> shape, std::mt19937_64& rng, S stddev) {
  Tensor<S> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (auto& v : *t.data) v = static_cast<S>(dist(rng));
  return t;
}

// Records backward closures in forward order; backward() replays them in
// reverse. One tape per image/loss; construction and replay are
// single-threaded.
template <class S>
class GradTape {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

  std::size_t size() const { return nodes_.size(); }

  void backward(Tensor<S>& loss) {
    if (loss.numel() != 1)
      throw ShapeError("backward expects a scalar loss tensor");
    loss.alloc_grad();
    (*loss.grad)[0] = S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  static GradTape*& active() {
    static thread_local GradTape* tape = nullptr;
    return tape;
  }

 private:
  std::vector<std::function<void()>> nodes_;
};

// RAII activation of a tape for the enclosing scope.
template <class S>
class TapeScope {
 public:
  explicit TapeScope(GradTape<S>& tape) : prev_(GradTape<S>::active()) {
    GradTape<S>::active() = &tape;
  }
  ~TapeScope() { GradTape<S>::active() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape<S>* prev_;
};

namespace detail {

template <class S>
bool track(const Tensor<S>& a) {
  return GradTape<S>::active() != nullptr && a.requires_grad;
}

template <class S>
void mark_output(Tensor<S>& out) {
  out.requires_grad = true;
  out.alloc_grad();
}

}  // namespace detail

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0])
    throw ShapeError("matmul: incompatible shapes");
  const int m = a.shape[0], p = a.shape[1], n = b.shape[1];
  Tensor<S> out({m, n});
  const S* A = a.data->data();
  const S* B = b.data->data();
  S* C = out.data->data();
  for (int i = 0; i < m; ++i) {
    for (int k = 0; k < p; ++k) {
      const S aik = A[i * p + k];
      const S* brow = B + static_cast<std::size_t>(k) * n;
      S* crow = C + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  g_mac_count += static_cast<std::uint64_t>(m) * p * n;

  auto* tape = GradTape<S>::active();
  if (tape && (a.requires_grad || b.requires_grad)) {
    detail::mark_output(out);
    tape->record([a, b, out, m, p, n]() {
      const S* G = out.grad->data();
      if (a.requires_grad) {
        S* dA = a.grad->data();
        const S* B = b.data->data();
        for (int i = 0; i < m; ++i)
          for (int k = 0; k < p; ++k) {
            S acc = 0;
            for (int j = 0; j < n; ++j) acc += G[i * n + j] * B[k * n + j];
            dA[i * p + k] += acc;
          }
      }
      if (b.requires_grad) {
        S* dB = b.grad->data();
        const S* A = a.data->data();
        for (int k = 0; k < p; ++k)
          for (int j = 0; j < n; ++j) {
            S acc = 0;
            for (int i = 0; i < m; ++i) acc += A[i * p + k] * G[i * n + j];
            dB[k * n + j] += acc;
          }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> transpose(const Tensor<S>& x) {
  if (x.shape.size() != 2) throw ShapeError("transpose: rank-2 tensor required");
  const int r = x.shape[0], c = x.shape[1];
  Tensor<S> out({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(j, i) = x.at(i, j);
  auto* tape = GradTape<S>::active();
  if (tape && x.requires_grad) {
    detail::mark_output(out);
    tape->record([x, out, r, c]() {
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          (*x.grad)[static_cast<std::size_t>(i) * c + j] +=
              (*out.grad)[static_cast<std::size_t>(j) * r + i];
    });
  }
  return out;
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape != b.shape) throw ShapeError("add: shape mismatch");
  Tensor<S> out(a.shape);
  for (std::size_t i = 0; i < a.numel(); ++i)
    (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  auto* tape = GradTape<S>::active();
  if (tape && (a.requires_grad || b.requires_grad)) {
    detail::mark_output(out);
    tape->record([a, b, out]() {
      for (std::size_t i = 0; i < out.numel(); ++i) {
        if (a.requires_grad) (*a.grad)[i] += (*out.grad)[i];
        if (b.requires_grad) (*b.grad)[i] += (*out.grad)[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape != b.shape) throw ShapeError("mul: shape mismatch");
  Tensor<S> out(a.shape);
  for (std::size_t i = 0; i < a.numel(); ++i)
    (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
  auto* tape = GradTape<S>::active();
  if (tape && (a.requires_grad || b.requires_grad)) {
    detail::mark_output(out);
    tape->record([a, b, out]() {
      for (std::size_t i = 0; i < out.numel(); ++i) {
        if (a.requires_grad) (*a.grad)[i] += (*out.grad)[i] * (*b.data)[i];
        if (b.requires_grad) (*b.grad)[i] += (*out.grad)[i] * (*a.data)[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& x, S c) {
  Tensor<S> out(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) (*out.data)[i] = (*x.data)[i] * c;
  auto* tape = GradTape<S>::active();
  if (tape && x.requires_grad) {
    detail::mark_output(out);
    tape->record([x, out, c]() {
      for (std::size_t i = 0; i < x.numel(); ++i)
        (*x.grad)[i] += (*out.grad)[i] * c;
    });
  }
  return out;
}

// Scale every element of x by a learnable 1-element tensor.
template <class S>
Tensor<S> scale_by(const Tensor<S>& x, const Tensor<S>& t) {
  if (t.numel() != 1) throw ShapeError("scale_by: scalar tensor required");
  const S c = (*t.data)[0];
  Tensor<S> out(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) (*out.data)[i] = (*x.data)[i] * c;
  auto* tape = GradTape<S>::active();
  if (tape && (x.requires_grad || t.requires_grad)) {
    detail::mark_output(out);
    tape->record([x, t, out, c]() {
      for (std::size_t i = 0; i < x.numel(); ++i) {
        if (x.requires_grad) (*x.grad)[i] += (*out.grad)[i] * c;
        if (t.requires_grad) (*t.grad)[0] += (*out.grad)[i] * (*x.data)[i];
      }
    });
  }
  return out;
}

// x: [n x d], bias: [d]; adds bias to every row.
template <class S>
Tensor<S> add_row_bias(const Tensor<S>& x, const Tensor<S>& bias) {
  const int n = x.rows(), d = x.cols();
  if (static_cast<int>(bias.numel()) != d)
    throw ShapeError("add_row_bias: bias length must equal column count");
  Tensor<S> out(x.shape);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = x.at(i, j) + bias.at(j);
  auto* tape = GradTape<S>::active();
  if (tape && (x.requires_grad || bias.requires_grad)) {
    detail::mark_output(out);
    tape->record([x, bias, out, n, d]() {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
          const S g = (*out.grad)[static_cast<std::size_t>(i) * d + j];
          if (x.requires_grad)
            (*x.grad)[static_cast<std::size_t>(i) * d + j] += g;
          if (bias.requires_grad) (*bias.grad)[j] += g;
        }
    });
  }
  return out;
}

template <class S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
  const int n = x.rows(), d = x.cols();
  if (d < 1) throw ShapeError("softmax_rows: empty rows");
  Tensor<S> out(x.shape);
  for (int i = 0; i < n; ++i) {
    S mx = x.at(i, 0);
    for (int j = 1; j < d; ++j) mx = std::max(mx, x.at(i, j));
    S sum = 0;
    for (int j = 0; j < d; ++j) {
      const S e = std::exp(x.at(i, j) - mx);
      out.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < d; ++j) out.at(i, j) /= sum;
  }
  auto* tape = GradTape<S>::active();
  if (tape && x.requires_grad) {
    detail::mark_output(out);
    tape->record([x, out, n, d]() {
      for (int i = 0; i < n; ++i) {
        S dot = 0;
        for (int j = 0; j < d; ++j)
          dot += (*out.grad)[static_cast<std::size_t>(i) * d + j] *
                 out.at(i, j);
        for (int j = 0; j < d; ++j)
          (*x.grad)[static_cast<std::size_t>(i) * d + j] +=
              out.at(i, j) *
              ((*out.grad)[static_cast<std::size_t>(i) * d + j] - dot);
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma,
                     const Tensor<S>& beta, S eps) {
  const int n = x.rows(), d = x.cols();
  if (static_cast<int>(gamma.numel()) != d ||
      static_cast<int>(beta.numel()) != d)
    throw ShapeError("layer_norm: affine parameter length mismatch");
  if (eps <= S(0)) throw ShapeError("layer_norm: eps must be positive");
  Tensor<S> out(x.shape);
  Tensor<S> xhat(x.shape);  // kept for backward
  std::vector<S> inv_std(n);
  for (int i = 0; i < n; ++i) {
    S mean = 0;
    for (int j = 0; j < d; ++j) mean += x.at(i, j);
    mean /= S(d);
    S var = 0;
    for (int j = 0; j < d; ++j) {
      const S c = x.at(i, j) - mean;
      var += c * c;
    }
    var /= S(d);
    const S istd = S(1) / std::sqrt(var + eps);
    inv_std[i] = istd;
    for (int j = 0; j < d; ++j) {
      const S h = (x.at(i, j) - mean) * istd;
      xhat.at(i, j) = h;
      out.at(i, j) = h * gamma.at(j) + beta.at(j);
    }
  }
  auto* tape = GradTape<S>::active();
  if (tape &&
      (x.requires_grad || gamma.requires_grad || beta.requires_grad)) {
    detail::mark_output(out);
    tape->record([x, gamma, beta, out, xhat, inv_std, n, d]() {
      for (int i = 0; i < n; ++i) {
        S sum_g = 0, sum_gh = 0;
        for (int j = 0; j < d; ++j) {
          const S g = (*out.grad)[static_cast<std::size_t>(i) * d + j];
          const S gg = g * gamma.at(j);
          sum_g += gg;
          sum_gh += gg * xhat.at(i, j);
          if (gamma.requires_grad) (*gamma.grad)[j] += g * xhat.at(i, j);
          if (beta.requires_grad) (*beta.grad)[j] += g;
        }
        if (x.requires_grad) {
          for (int j = 0; j < d; ++j) {
            const S g = (*out.grad)[static_cast<std::size_t>(i) * d + j];
            const S gg = g * gamma.at(j);
            (*x.grad)[static_cast<std::size_t>(i) * d + j] +=
                inv_std[i] *
                (gg - sum_g / S(d) - xhat.at(i, j) * sum_gh / S(d));
          }
        }
      }
    });
  }
  return out;
}

// Exact GELU, x * Phi(x) via erf.
template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
  Tensor<S> out(x.shape);
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = static_cast<double>((*x.data)[i]);
    (*out.data)[i] = static_cast<S>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  }
  auto* tape = GradTape<S>::active();
  if (tape && x.requires_grad) {
    detail::mark_output(out);
    tape->record([x, out]() {
      for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = static_cast<double>((*x.data)[i]);
        const double phi = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        (*x.grad)[i] += (*out.grad)[i] * static_cast<S>(phi + v * pdf);
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  Tensor<S> out(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const S v = (*x.data)[i];
    (*out.data)[i] =
        v >= S(0) ? S(1) / (S(1) + std::exp(-v))
                  : std::exp(v) / (S(1) + std::exp(v));
  }
  auto* tape = GradTape<S>::active();
  if (tape && x.requires_grad) {
    detail::mark_output(out);
    tape->record([x, out]() {
      for (std::size_t i = 0; i < x.numel(); ++i) {
        const S y = (*out.data)[i];
        (*x.grad)[i] += (*out.grad)[i] * y * (S(1) - y);
      }
    });
  }
  return out;
}

// Rows of x selected by idx; duplicates allowed. Backward scatter-adds.
template <class S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<int>& idx) {
  const int n = x.rows(), d = x.cols();
  for (int i : idx)
    if (i < 0 || i >= n) throw IndexError("gather_rows: index out of range");
  Tensor<S> out({static_cast<int>(idx.size()), d});
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (int j = 0; j < d; ++j) out.at(static_cast<int>(r), j) = x.at(idx[r], j);
  auto* tape = GradTape<S>::active();
  if (tape && x.requires_grad) {
    detail::mark_output(out);
    tape->record([x, out, idx, d]() {
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (int j = 0; j < d; ++j)
          (*x.grad)[static_cast<std::size_t>(idx[r]) * d + j] +=
              (*out.grad)[r * d + j];
    });
  }
  return out;
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& x, int start, int len) {
  const int n = x.rows(), d = x.cols();
  if (start < 0 || len < 0 || start + len > d)
    throw ShapeError("slice_cols: range out of bounds");
  Tensor<S> out({n, len});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < len; ++j) out.at(i, j) = x.at(i, start + j);
  auto* tape = GradTape<S>::active();
  if (tape && x.requires_grad) {
    detail::mark_output(out);
    tape->record([x, out, start, len, n, d]() {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < len; ++j)
          (*x.grad)[static_cast<std::size_t>(i) * d + start + j] +=
              (*out.grad)[static_cast<std::size_t>(i) * len + j];
    });
  }
  return out;
}

template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: empty input");
  const int n = parts[0].rows();
  int d = 0;
  for (const auto& p : parts) {
    if (p.rows() != n) throw ShapeError("concat_cols: row count mismatch");
    d += p.cols();
  }
  Tensor<S> out({n, d});
  int off = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.at(i, j);
    off += p.cols();
  }
  auto* tape = GradTape<S>::active();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad;
  if (tape && any) {
    detail::mark_output(out);
    tape->record([parts, out, n, d]() {
      int off = 0;
      for (const auto& p : parts) {
        if (p.requires_grad) {
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < p.cols(); ++j)
              (*p.grad)[static_cast<std::size_t>(i) * p.cols() + j] +=
                  (*out.grad)[static_cast<std::size_t>(i) * d + off + j];
        }
        off += p.cols();
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: empty input");
  const int d = parts[0].cols();
  int n = 0;
  for (const auto& p : parts) {
    if (p.cols() != d) throw ShapeError("concat_rows: column count mismatch");
    n += p.rows();
  }
  Tensor<S> out({n, d});
  int off = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < p.rows(); ++i)
      for (int j = 0; j < d; ++j) out.at(off + i, j) = p.at(i, j);
    off += p.rows();
  }
  auto* tape = GradTape<S>::active();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad;
  if (tape && any) {
    detail::mark_output(out);
    tape->record([parts, out, d]() {
      int off = 0;
      for (const auto& p : parts) {
        if (p.requires_grad) {
          for (int i = 0; i < p.rows(); ++i)
            for (int j = 0; j < d; ++j)
              (*p.grad)[static_cast<std::size_t>(i) * d + j] +=
                  (*out.grad)[static_cast<std::size_t>(off + i) * d + j];
        }
        off += p.rows();
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> sum_all(const Tensor<S>& x) {
  Tensor<S> out({1});
  S s = 0;
  for (S v : *x.data) s += v;
  (*out.data)[0] = s;
  auto* tape = GradTape<S>::active();
  if (tape && x.requires_grad) {
    detail::mark_output(out);
    tape->record([x, out]() {
      const S g = (*out.grad)[0];
      for (std::size_t i = 0; i < x.numel(); ++i) (*x.grad)[i] += g;
    });
  }
  return out;
}

// Mean over rows: [n x d] -> [1 x d].
template <class S>
Tensor<S> mean_rows(const Tensor<S>& x) {
  const int n = x.rows(), d = x.cols();
  if (n < 1) throw ShapeError("mean_rows: empty input");
  Tensor<S> out({1, d});
  for (int j = 0; j < d; ++j) {
    S s = 0;
    for (int i = 0; i < n; ++i) s += x.at(i, j);
    out.at(0, j) = s / S(n);
  }
  auto* tape = GradTape<S>::active();
  if (tape && x.requires_grad) {
    detail::mark_output(out);
    tape->record([x, out, n, d]() {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
          (*x.grad)[static_cast<std::size_t>(i) * d + j] +=
              (*out.grad)[j] / S(n);
    });
  }
  return out;
}

// Diagonal of a square matrix as a [k] vector.
template <class S>
Tensor<S> diag(const Tensor<S>& x) {
  if (x.shape.size() != 2 || x.shape[0] != x.shape[1])
    throw ShapeError("diag: square matrix required");
  const int k = x.shape[0];
  Tensor<S> out({k});
  for (int i = 0; i < k; ++i) out.at(i) = x.at(i, i);
  auto* tape = GradTape<S>::active();
  if (tape && x.requires_grad) {
    detail::mark_output(out);
    tape->record([x, out, k]() {
      for (int i = 0; i < k; ++i)
        (*x.grad)[static_cast<std::size_t>(i) * k + i] += (*out.grad)[i];
    });
  }
  return out;
}

// Scale row k of x by s[k].
template <class S>
Tensor<S> scale_rows(const Tensor<S>& x, const Tensor<S>& s) {
  const int n = x.rows(), d = x.cols();
  if (static_cast<int>(s.numel()) != n)
    throw ShapeError("scale_rows: scale length must equal row count");
  Tensor<S> out(x.shape);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = x.at(i, j) * s.at(i);
  auto* tape = GradTape<S>::active();
  if (tape && (x.requires_grad || s.requires_grad)) {
    detail::mark_output(out);
    tape->record([x, s, out, n, d]() {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
          const S g = (*out.grad)[static_cast<std::size_t>(i) * d + j];
          if (x.requires_grad)
            (*x.grad)[static_cast<std::size_t>(i) * d + j] += g * s.at(i);
          if (s.requires_grad) (*s.grad)[i] += g * x.at(i, j);
        }
    });
  }
  return out;
}

// Divide each row by its sum. Rows must have strictly positive sums.
template <class S>
Tensor<S> normalize_rows(const Tensor<S>& x) {
  const int n = x.rows(), d = x.cols();
  Tensor<S> out(x.shape);
  std::vector<S> sums(n);
  for (int i = 0; i < n; ++i) {
    S s = 0;
    for (int j = 0; j < d; ++j) s += x.at(i, j);
    if (!(s > S(0))) throw ShapeError("normalize_rows: non-positive row sum");
    sums[i] = s;
    for (int j = 0; j < d; ++j) out.at(i, j) = x.at(i, j) / s;
  }
  auto* tape = GradTape<S>::active();
  if (tape && x.requires_grad) {
    detail::mark_output(out);
    tape->record([x, out, sums, n, d]() {
      for (int i = 0; i < n; ++i) {
        S dot = 0;
        for (int j = 0; j < d; ++j)
          dot += (*out.grad)[static_cast<std::size_t>(i) * d + j] *
                 out.at(i, j);
        for (int j = 0; j < d; ++j)
          (*x.grad)[static_cast<std::size_t>(i) * d + j] +=
              ((*out.grad)[static_cast<std::size_t>(i) * d + j] - dot) /
              sums[i];
      }
    });
  }
  return out;
}

// Mean negative log softmax probability of the labeled class over rows
// whose label is not ignore_index. Empty non-ignored set yields 0 and sets
// *all_ignored when provided.
template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels,
                        int ignore_index, bool* all_ignored = nullptr) {
  const int n = logits.rows(), k = logits.cols();
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError("cross_entropy: label count must equal row count");
  for (int lb : labels)
    if (lb != ignore_index && (lb < 0 || lb >= k))
      throw IndexError("cross_entropy: label out of range");
  int count = 0;
  Tensor<S> probs(logits.shape);
  S total = 0;
  for (int i = 0; i < n; ++i) {
    S mx = logits.at(i, 0);
    for (int j = 1; j < k; ++j) mx = std::max(mx, logits.at(i, j));
    S sum = 0;
    for (int j = 0; j < k; ++j) {
      const S e = std::exp(logits.at(i, j) - mx);
      probs.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < k; ++j) probs.at(i, j) /= sum;
    if (labels[i] != ignore_index) {
      total += mx + std::log(sum) - logits.at(i, labels[i]);
      ++count;
    }
  }
  if (all_ignored) *all_ignored = (count == 0);
  Tensor<S> out({1});
  (*out.data)[0] = count > 0 ? total / S(count) : S(0);
  auto* tape = GradTape<S>::active();
  if (tape && logits.requires_grad && count > 0) {
    detail::mark_output(out);
    tape->record([logits, out, probs, labels, ignore_index, n, k, count]() {
      const S g = (*out.grad)[0] / S(count);
      for (int i = 0; i < n; ++i) {
        if (labels[i] == ignore_index) continue;
        for (int j = 0; j < k; ++j) {
          S d = probs.at(i, j);
          if (j == labels[i]) d -= S(1);
          (*logits.grad)[static_cast<std::size_t>(i) * k + j] += d * g;
        }
      }
    });
  }
  return out;
}

// Mean of -log(probs[i, labels[i]]) over non-ignored rows; probs must be
// strictly positive at the labeled entries.
template <class S>
Tensor<S> nll_rows(const Tensor<S>& probs, const std::vector<int>& labels,
                   int ignore_index) {
  const int n = probs.rows(), k = probs.cols();
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError("nll_rows: label count must equal row count");
  int count = 0;
  S total = 0;
  for (int i = 0; i < n; ++i) {
    if (labels[i] == ignore_index) continue;
    if (labels[i] < 0 || labels[i] >= k)
      throw IndexError("nll_rows: label out of range");
    total -= std::log(probs.at(i, labels[i]));
    ++count;
  }
  Tensor<S> out({1});
  (*out.data)[0] = count > 0 ? total / S(count) : S(0);
  auto* tape = GradTape<S>::active();
  if (tape && probs.requires_grad && count > 0) {
    detail::mark_output(out);
    tape->record([probs, out, labels, ignore_index, n, k, count]() {
      const S g = (*out.grad)[0] / S(count);
      for (int i = 0; i < n; ++i) {
        if (labels[i] == ignore_index) continue;
        (*probs.grad)[static_cast<std::size_t>(i) * k + labels[i]] -=
            g / probs.at(i, labels[i]);
      }
    });
  }
  return out;
}

}  // namespace dtop
