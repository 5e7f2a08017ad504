#pragma once

#include "gimtp/autograd.hpp"
#include "gimtp/tensor.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace gimtp::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

// Builds a scalar loss from variables bound on a fresh tape.
using LossFn = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

inline double evaluate(const LossFn& f, const std::vector<Tensor>& inputs) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  return f(tape, vars).value().item();
}

// Largest norm-wise relative error between analytic and central-difference
// gradients over all inputs.
inline double gradient_error(const LossFn& f, std::vector<Tensor> inputs, double eps = 1e-5) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  ad::Var loss = f(tape, vars);
  tape.backward(loss);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor analytic = tape.grad(vars[k]);
    if (analytic.size() == 0) analytic = Tensor(inputs[k].shape());
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + eps;
      const double up = evaluate(f, inputs);
      inputs[k][i] = saved - eps;
      const double down = evaluate(f, inputs);
      inputs[k][i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      scale += std::max(analytic[i] * analytic[i], numeric * numeric);
    }
    if (scale > 1e-20) worst = std::max(worst, std::sqrt(diff / scale));
  }
  return worst;
}

}  // namespace gimtp::testing
