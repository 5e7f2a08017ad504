#include "gimtp/decoder.hpp"
#include "gimtp/errors.hpp"

#include <cmath>

namespace gimtp::decoder {

void check_weighting(const Tensor& m) {
  if (m.rank() != 2 || m.dim(0) != 6) {
    throw DimensionError("intention weighting must be 6 x F, got " + shape_string(m.shape()));
  }
  for (std::size_t t = 0; t < m.dim(1); ++t) {
    for (std::size_t block = 0; block < 2; ++block) {
      double total = 0.0;
      for (std::size_t r = 0; r < 3; ++r) total += m.at({3 * block + r, t});
      if (std::abs(total - 1.0) > 1e-6) {
        throw ContractError("intention weighting column " + std::to_string(t) + " sums to " +
                            std::to_string(total));
      }
    }
  }
}

ad::Var fusion_weights(ad::Var w_map, ad::Var m_rows) {
  const Shape& ws = w_map.shape();
  if (ws.size() != 3 || ws[2] != 6 || m_rows.shape() != Shape{ws[1], 6}) {
    throw DimensionError("fusion: W_map " + shape_string(ws) + " and weighting " +
                         shape_string(m_rows.shape()) + " disagree");
  }
  const std::size_t L = ws[0], F = ws[1];
  ad::Tape& tape = *w_map.tape();
  Tensor ones({6, 1}, 1.0);
  ad::Var weighted = ad::reshape(ad::mul(w_map, m_rows), {L * F, 6});
  ad::Var logits = ad::reshape(ad::matmul(weighted, tape.constant(std::move(ones))), {L, F});
  return ad::softmax(logits, 0);
}

ad::Var fuse(ad::Var h, ad::Var m_rows, ad::Var w_map) {
  if (h.value().rank() != 2 || h.dim(0) != w_map.dim(0)) {
    throw DimensionError("fuse: features " + shape_string(h.shape()) + " vs W_map " +
                         shape_string(w_map.shape()));
  }
  return ad::matmul(ad::transpose(fusion_weights(w_map, m_rows)), h);
}

ad::Var feature_map(ad::Var h, const layers::Dense& layer, std::size_t horizon) {
  const std::size_t L = h.dim(0);
  Tensor avg({1, L}, 1.0 / static_cast<double>(L));
  ad::Var pooled = ad::matmul(h.tape()->constant(std::move(avg)), h);
  return ad::reshape(layers::dense(layer, pooled), {horizon, layer.weight.dim(1) / horizon});
}

ad::Var decode(ad::Var v, ad::Var p_rows, const Params& p) {
  if (v.dim(0) != p_rows.dim(0)) throw DimensionError("decode: step counts disagree");
  const ad::Var parts[] = {v, p_rows};
  ad::Var e = layers::dense_act(p.input, p.input_norm, ad::concat(parts, 1), p.slope);
  ad::Var states = layers::gru_sequence(p.gru, e);
  return layers::dense(p.out, ad::leaky_relu(layers::dense(p.hidden, states), p.slope));
}

Gaussian gaussian(ad::Var raw, const Tensor& cumulative, const Tensor& offset) {
  if (raw.value().rank() != 2 || raw.dim(1) != 5) {
    throw DimensionError("decoder output must be F x 5, got " + shape_string(raw.shape()));
  }
  ad::Tape& tape = *raw.tape();
  Gaussian g;
  g.mu = ad::add(ad::matmul(tape.constant(cumulative), ad::columns(raw, 0, 2)),
                 tape.constant(offset));
  g.log_sigma = ad::columns(raw, 2, 4);
  g.rho = ad::tanh(ad::columns(raw, 4, 5));
  return g;
}

GaussianSequence materialize(const Gaussian& g) {
  GaussianSequence s;
  s.mu = g.mu.value();
  s.sigma = g.log_sigma.value();
  for (double& v : s.sigma.data()) v = std::exp(v);
  const std::size_t F = g.rho.dim(0);
  s.rho = Tensor({F}, std::vector<double>(g.rho.value().data().begin(), g.rho.value().data().end()));
  return s;
}

std::array<double, 9> mode_probabilities(const Tensor& p_lat, const Tensor& p_lon) {
  if (p_lat.rank() != 2 || p_lat.dim(0) != 3 || p_lat.shape() != p_lon.shape()) {
    throw DimensionError("mode_probabilities expects two 3 x F distributions");
  }
  const std::size_t F = p_lat.dim(1);
  std::array<double, 9> probs{};
  double total = 0.0;
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = 0; b < 3; ++b) {
      double s = 0.0;
      for (std::size_t t = 0; t < F; ++t) s += p_lat.at({a, t}) * p_lon.at({b, t});
      probs[3 * a + b] = s / static_cast<double>(F);
      total += probs[3 * a + b];
    }
  }
  for (double& p : probs) p /= total;
  return probs;
}

}  // namespace gimtp::decoder
