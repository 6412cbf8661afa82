#pragma once

#include "rejgen/tensor.hpp"

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rejgen::nd {

struct AdamOptions {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  std::vector<Tensor<Scalar>> m;
  std::vector<Tensor<Scalar>> v;
  long step = 0;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One bias-corrected Adam update. The state is lazily shaped on first use.
/// A non-finite gradient aborts before anything is modified.
template <typename Scalar>
void adam_step(std::span<Tensor<Scalar>* const> params, std::span<const Tensor<Scalar>> grads,
               AdamState<Scalar>& state, const AdamOptions& opt) {
  if (params.size() != grads.size())
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params but " +
                     std::to_string(grads.size()) + " gradients");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->rows() != grads[i].rows() || params[i]->cols() != grads[i].cols())
      throw ShapeError("adam_step", params[i]->rows(), params[i]->cols(), grads[i].rows(),
                       grads[i].cols());
    if (!grads[i].allFinite())
      throw NonFiniteGradient("adam_step: non-finite gradient in tensor #" + std::to_string(i) +
                              " at step " + std::to_string(state.step + 1));
  }
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.push_back(Tensor<Scalar>::Zero(p->rows(), p->cols()));
      state.v.push_back(Tensor<Scalar>::Zero(p->rows(), p->cols()));
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state does not match params");

  ++state.step;
  const Scalar b1 = static_cast<Scalar>(opt.beta1);
  const Scalar b2 = static_cast<Scalar>(opt.beta2);
  const Scalar c1 = Scalar(1) - std::pow(b1, static_cast<Scalar>(state.step));
  const Scalar c2 = Scalar(1) - std::pow(b2, static_cast<Scalar>(state.step));
  const Scalar lr = static_cast<Scalar>(opt.lr);
  const Scalar eps = static_cast<Scalar>(opt.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = b1 * m + (Scalar(1) - b1) * grads[i];
    v = b2 * v + (Scalar(1) - b2) * grads[i].cwiseAbs2();
    params[i]->array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

}  // namespace rejgen::nd
