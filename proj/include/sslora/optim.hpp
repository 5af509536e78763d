#pragma once

#include <cmath>
#include <vector>

#include "sslora/linalg.hpp"

namespace sslora {

/// MultiStepLR: lr0 * gamma^(number of milestones at or before `step`).
template <class S>
S multistep_lr(S lr0, const std::vector<long>& milestones, S gamma, long step) {
  int passed = 0;
  for (long m : milestones)
    if (m <= step) ++passed;
  return lr0 * static_cast<S>(std::pow(static_cast<double>(gamma), passed));
}

/// AdamW moments for one parameter. `step` counts the updates this parameter
/// has participated in; bias correction uses that count, so parameters that
/// receive no gradient on a step (inactive domains' A factors) keep their
/// schedule untouched.
template <class S>
struct ParamState {
  MatrixX<S> m;
  MatrixX<S> v;
  long step = 0;
};

template <class S>
struct AdamWParams {
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
};

/// Decoupled weight decay AdamW (decay applied directly to the parameter,
/// not through the moments).
template <class S>
void adamw_update(MatrixX<S>& p, const MatrixX<S>& g, ParamState<S>& st, S lr,
                  S weight_decay, const AdamWParams<S>& hp) {
  if (st.m.size() == 0) {
    st.m = MatrixX<S>::Zero(p.rows(), p.cols());
    st.v = MatrixX<S>::Zero(p.rows(), p.cols());
  }
  st.step += 1;
  if (weight_decay != S(0)) p -= lr * weight_decay * p;
  st.m = hp.beta1 * st.m + (S(1) - hp.beta1) * g;
  st.v = (hp.beta2 * st.v.array() + (S(1) - hp.beta2) * g.array().square()).matrix();
  const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(hp.beta1), st.step));
  const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(hp.beta2), st.step));
  p.array() -= lr * (st.m.array() / bc1) / ((st.v.array() / bc2).sqrt() + hp.eps);
}

template <class S>
void sgd_update(MatrixX<S>& p, const MatrixX<S>& g, S lr) {
  p -= lr * g;
}

}  // namespace sslora
