#pragma once

#include "gimtp/autograd.hpp"

#include <optional>

namespace gimtp::layers {

struct Dense {
  ad::Var weight;  // in x out
  ad::Var bias;    // [out]; may be unset for bias-free maps
};

struct Norm {
  ad::Var gain;
  ad::Var bias;
};

// Gated recurrent cell:
//   z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br),
//   n = tanh(x Wn + (r * h) Un + bn), h' = n + z * (h - n).
struct Gru {
  Dense z, r, n;  // input projections with biases
  ad::Var uz, ur, un;
};

ad::Var dense(const Dense& layer, ad::Var x);

// Dense, optional layer norm, leaky ReLU.
ad::Var dense_act(const Dense& layer, const std::optional<Norm>& norm, ad::Var x, double slope);

// Runs the cell over the rows of `inputs` (steps x in) from a zero state and
// returns the stacked hidden states (steps x hidden).
ad::Var gru_sequence(const Gru& cell, ad::Var inputs);

}  // namespace gimtp::layers
