#pragma once

#include <functional>
#include <vector>

#include "dtop/tensor.hpp"

namespace dtop::testing {

// Central finite differences against tape gradients. f must return a
// scalar tensor computed from the given parameters (and may be called
// repeatedly). Returns the worst relative error over all parameter
// elements; denominator floored so near-zero gradients compare on an
// absolute scale.
inline double grad_check(std::vector<Tensor<double>*> params,
                         const std::function<Tensor<double>()>& f,
                         double h = 1e-5) {
  for (auto* p : params) {
    p->set_requires_grad(true);
    p->zero_grad();
  }
  GradTape<double> tape;
  {
    TapeScope<double> scope(tape);
    Tensor<double> loss = f();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (auto* p : params) analytic.push_back(*p->grad);
  for (auto* p : params) p->requires_grad = false;

  double worst = 0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double>* p = params[pi];
    for (std::size_t i = 0; i < p->numel(); ++i) {
      const double orig = (*p->data)[i];
      (*p->data)[i] = orig + h;
      const double up = (*f().data)[0];
      (*p->data)[i] = orig - h;
      const double dn = (*f().data)[0];
      (*p->data)[i] = orig;
      const double numeric = (up - dn) / (2 * h);
      const double a = analytic[pi][i];
      const double err =
          std::abs(a - numeric) / std::max(1e-4, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace dtop::testing
