#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "crnn/tape.hpp"

namespace crnn {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::vector<Matrix<T>> first_moment;
  std::vector<Matrix<T>> second_moment;
};

/// One bias-corrected Adam update over params (in order). Moment buffers are
/// created on the first call. If any gradient is non-finite nothing is
/// modified and NumericError names the offending parameter.
template <class T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state, double lr) {
  if (state.first_moment.empty()) {
    for (const Parameter<T>* p : params) {
      state.first_moment.emplace_back(p->value.rows(), p->value.cols());
      state.second_moment.emplace_back(p->value.rows(), p->value.cols());
    }
  }
  if (state.first_moment.size() != params.size())
    throw DimensionError("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter<T>& p = *params[i];
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols() ||
        state.first_moment[i].rows() != p.value.rows() ||
        state.first_moment[i].cols() != p.value.cols())
      throw DimensionError("adam_step: shape mismatch for parameter " + p.name);
    if (!p.grad.all_finite()) throw NumericError("adam_step: non-finite gradient in " + p.name);
  }

  ++state.step;
  const auto& h = state.hyper;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    T* m = state.first_moment[i].data();
    T* v = state.second_moment[i].data();
    T* w = p.value.data();
    const T* g = p.grad.data();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = h.beta1 * static_cast<double>(m[j]) + (1.0 - h.beta1) * gj;
      const double vj = h.beta2 * static_cast<double>(v[j]) + (1.0 - h.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double m_hat = mj / bc1;
      const double v_hat = vj / bc2;
      w[j] = static_cast<T>(static_cast<double>(w[j]) - lr * m_hat / (std::sqrt(v_hat) + h.epsilon));
    }
  }
}

}  // namespace crnn
