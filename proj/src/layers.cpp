#include "gimtp/layers.hpp"

#include <vector>

namespace gimtp::layers {

ad::Var dense(const Dense& layer, ad::Var x) {
  ad::Var y = ad::matmul(x, layer.weight);
  return layer.bias.valid() ? ad::add(y, layer.bias) : y;
}

ad::Var dense_act(const Dense& layer, const std::optional<Norm>& norm, ad::Var x, double slope) {
  ad::Var y = dense(layer, x);
  if (norm) y = ad::layer_norm(y, norm->gain, norm->bias);
  return ad::leaky_relu(y, slope);
}

ad::Var gru_sequence(const Gru& cell, ad::Var inputs) {
  const std::size_t steps = inputs.dim(0);
  const std::size_t hidden = cell.uz.dim(0);
  ad::Var xz = dense(cell.z, inputs);
  ad::Var xr = dense(cell.r, inputs);
  ad::Var xn = dense(cell.n, inputs);
  ad::Var h = inputs.tape()->constant(Tensor({1, hidden}));
  std::vector<ad::Var> states;
  states.reserve(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    ad::Var z = ad::sigmoid(ad::add(ad::slice(xz, k, k + 1), ad::matmul(h, cell.uz)));
    ad::Var r = ad::sigmoid(ad::add(ad::slice(xr, k, k + 1), ad::matmul(h, cell.ur)));
    ad::Var n = ad::tanh(ad::add(ad::slice(xn, k, k + 1), ad::matmul(ad::mul(r, h), cell.un)));
    h = ad::add(n, ad::mul(z, ad::sub(h, n)));
    states.push_back(h);
  }
  return ad::concat(states, 0);
}

}  // namespace gimtp::layers
