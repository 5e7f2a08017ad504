#pragma once

#include "gimtp/layers.hpp"
#include "gimtp/tensor.hpp"

#include <array>
#include <optional>

namespace gimtp::decoder {

struct Params {
  ad::Var w_map;  // L x F x 6 fusion logits (LK, LLC, RLC, CS, ACC, DEC)
  std::optional<layers::Dense> feature_map;  // replaces fusion when set
  layers::Dense input;                       // MLP_D1
  std::optional<layers::Norm> input_norm;
  layers::Gru gru;
  layers::Dense hidden, out;                 // MLP_D2
  double slope = 0.1;
};

// Throws ContractError unless each lateral and longitudinal block of every
// column of a 6 x F weighting sums to 1 within 1e-6.
void check_weighting(const Tensor& m);

// u[t, t'] = softmax over t of sum_m M[m, t'] W_map[t, t', m]. `m_rows` is
// the weighting transposed (F x 6).
ad::Var fusion_weights(ad::Var w_map, ad::Var m_rows);

// v_{t'} = sum_t u[t, t'] h_t; returns F x width.
ad::Var fuse(ad::Var h, ad::Var m_rows, ad::Var w_map);

// Time-mean of h mapped densely to F decoder inputs.
ad::Var feature_map(ad::Var h, const layers::Dense& layer, std::size_t horizon);

// Raw F x 5 outputs from fused features and F x 6 intention weights.
ad::Var decode(ad::Var v, ad::Var p_rows, const Params& p);

struct Gaussian {
  ad::Var mu;         // F x 2
  ad::Var log_sigma;  // F x 2
  ad::Var rho;        // F x 1
};

// mu = cumulative * raw_mu + offset; sigma = exp(raw); rho = tanh(raw).
Gaussian gaussian(ad::Var raw, const Tensor& cumulative, const Tensor& offset);

struct GaussianSequence {
  Tensor mu;     // F x 2
  Tensor sigma;  // F x 2
  Tensor rho;    // F
};

GaussianSequence materialize(const Gaussian& g);

struct ModePrediction {
  int lat = 0;
  int lon = 0;
  GaussianSequence trajectory;
  double probability = 0.0;
};

// Mean over steps of p_lat[lat, t] * p_lon[lon, t], renormalized over the 9
// modes; index = 3 * lat + lon.
std::array<double, 9> mode_probabilities(const Tensor& p_lat, const Tensor& p_lon);

}  // namespace gimtp::decoder
