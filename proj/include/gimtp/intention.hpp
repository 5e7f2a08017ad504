#pragma once

#include "gimtp/layers.hpp"
#include "gimtp/tensor.hpp"

#include <optional>

namespace gimtp::intention {

struct Params {
  layers::Dense aggregate;                  // MLP_V: N*d -> width
  std::optional<layers::Norm> aggregate_norm;
  ad::Var time_map;                         // MLP_O time axis: F x L
  layers::Dense project;                    // MLP_O feature layer
  layers::Dense lat_hidden, lat_out;
  layers::Dense lon_hidden, lon_out;
  double slope = 0.1;
};

// Flattens nodes per timestep and applies MLP_V: L x N x d -> L x width.
ad::Var aggregate(ad::Var h_cat, const layers::Dense& layer,
                  const std::optional<layers::Norm>& norm, double slope);

struct Logits {
  ad::Var lat;  // F x 3
  ad::Var lon;  // F x 3
};

Logits predict(ad::Var h, const Params& p);

// Column-stochastic 3 x F probabilities.
struct Distribution {
  Tensor lat;
  Tensor lon;
};

Distribution distribution(const Logits& logits);
// Softmax of each row of an F x 3 logit matrix, returned transposed (3 x F).
Tensor column_softmax(const Tensor& logits);

}  // namespace gimtp::intention
