#include "gimtp/intention.hpp"
#include "gimtp/errors.hpp"

#include <algorithm>
#include <cmath>

namespace gimtp::intention {

ad::Var aggregate(ad::Var h_cat, const layers::Dense& layer,
                  const std::optional<layers::Norm>& norm, double slope) {
  if (h_cat.value().rank() != 3) {
    throw DimensionError("aggregate expects L x N x d, got " + shape_string(h_cat.shape()));
  }
  const std::size_t L = h_cat.dim(0);
  ad::Var flat = ad::reshape(h_cat, {L, h_cat.dim(1) * h_cat.dim(2)});
  return layers::dense_act(layer, norm, flat, slope);
}

Logits predict(ad::Var h, const Params& p) {
  if (h.value().rank() != 2 || p.time_map.dim(1) != h.dim(0)) {
    throw DimensionError("predict: time map " + shape_string(p.time_map.shape()) +
                         " does not fit aggregated input " + shape_string(h.shape()));
  }
  ad::Var hm = ad::leaky_relu(layers::dense(p.project, ad::matmul(p.time_map, h)), p.slope);
  Logits out;
  out.lat = layers::dense(p.lat_out, ad::leaky_relu(layers::dense(p.lat_hidden, hm), p.slope));
  out.lon = layers::dense(p.lon_out, ad::leaky_relu(layers::dense(p.lon_hidden, hm), p.slope));
  return out;
}

Tensor column_softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("column_softmax expects F x K logits");
  const std::size_t F = logits.dim(0), K = logits.dim(1);
  Tensor out({K, F});
  for (std::size_t t = 0; t < F; ++t) {
    double mx = logits.at({t, 0});
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, logits.at({t, k}));
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) total += std::exp(logits.at({t, k}) - mx);
    for (std::size_t k = 0; k < K; ++k) out.at({k, t}) = std::exp(logits.at({t, k}) - mx) / total;
  }
  return out;
}

Distribution distribution(const Logits& logits) {
  return {column_softmax(logits.lat.value()), column_softmax(logits.lon.value())};
}

}  // namespace gimtp::intention
