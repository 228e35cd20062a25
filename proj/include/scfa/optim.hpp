#pragma once

#include <cmath>
#include <vector>

#include "scfa/nn.hpp"

namespace scfa {

/// Adam with the GAN-convention default betas (0.5, 0.999). Parameters with
/// no accumulated gradient in a step are treated as having zero gradient but
/// still advance their moment estimates, keeping step counts aligned.
template <typename S>
struct Adam {
  double lr = 1e-4, beta1 = 0.5, beta2 = 0.999, eps = 1e-8;
  NamedParams<S> params;
  std::vector<MatrixX<S>> m1, m2;
  long t = 0;

  Adam() = default;
  explicit Adam(NamedParams<S> ps, double lr_ = 1e-4) : lr(lr_), params(std::move(ps)) {
    for (auto& [name, p] : params) {
      m1.push_back(MatrixX<S>::Zero(p.value().m.rows(), p.value().m.cols()));
      m2.push_back(MatrixX<S>::Zero(p.value().m.rows(), p.value().m.cols()));
    }
  }

  void zero_grad() { zero_grads(params); }

  void step() {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, (double)t);
    const double bc2 = 1.0 - std::pow(beta2, (double)t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Var<S>& p = params[i].second;
      const MatrixX<S> g = p.has_grad() ? p.grad().m
                                        : MatrixX<S>::Zero(m1[i].rows(), m1[i].cols());
      m1[i] = S(beta1) * m1[i] + S(1.0 - beta1) * g;
      m2[i] = S(beta2) * m2[i] + (S(1.0 - beta2) * g.array().square()).matrix();
      const auto mhat = m1[i].array() / S(bc1);
      const auto vhat = m2[i].array() / S(bc2);
      p.value().m.array() -= S(lr) * mhat / (vhat.sqrt() + S(eps));
    }
  }
};

}  // namespace scfa
