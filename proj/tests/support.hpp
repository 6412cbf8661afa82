#pragma once

// Shared test oracles: central differences and small generators.

#include "rejgen/autodiff.hpp"
#include "rejgen/random.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace testing {

using Mat = rejgen::nd::Tensord;
using G = rejgen::nd::Graph<double>;
using V = rejgen::nd::Var<double>;

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-5});
}

inline Mat random_mat(rejgen::Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = lo + (hi - lo) * rng.uniform();
  return m;
}

/// Builds f on fresh leaves; returns the worst relative error between
/// backward() and central differences with step h over every input entry.
inline double gradcheck(const std::function<V(G&, std::vector<V>&)>& f, std::vector<Mat> inputs,
                        double h = 1e-6) {
  std::vector<Mat> analytic;
  {
    G g;
    std::vector<V> leaves;
    for (const auto& m : inputs) leaves.push_back(g.leaf(m));
    const V out = f(g, leaves);
    g.backward(out);
    for (const auto& l : leaves) analytic.push_back(g.grad(l));
  }
  auto eval = [&](const std::vector<Mat>& xs) {
    G g;
    std::vector<V> leaves;
    for (const auto& m : xs) leaves.push_back(g.constant(m));
    return f(g, leaves).value()(0, 0);
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs, minus = inputs;
      plus[k].data()[i] += h;
      minus[k].data()[i] -= h;
      const double fd = (eval(plus) - eval(minus)) / (2 * h);
      worst = std::max(worst, rel_err(analytic[k].data()[i], fd));
    }
  }
  return worst;
}

}  // namespace testing
