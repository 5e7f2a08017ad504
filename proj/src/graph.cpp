#include "gimtp/graph.hpp"
#include "gimtp/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace gimtp::graph {

using data::kFeatures;
using data::kSlotGrid;
using data::kSlots;

namespace {

double population_std(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(values.size()));
}

void check_inputs(const Tensor& features, const std::vector<SlotMask>& mask) {
  if (features.rank() != 3 || features.dim(1) != kSlots || features.dim(2) != kFeatures) {
    throw DimensionError("features must be T x 9 x 5, got " + shape_string(features.shape()));
  }
  if (mask.size() != features.dim(0)) throw DimensionError("mask length differs from T");
}

RiskState state_at(const Tensor& features, const Tensor& mass, std::size_t t, std::size_t s) {
  return {features.at({t, s, data::kPosLon}), features.at({t, s, data::kPosLat}),
          features.at({t, s, data::kVelLon}), features.at({t, s, data::kVelLat}),
          mass.at({t, s})};
}

}  // namespace

Tensor neighborhood_adjacency(const std::vector<SlotMask>& mask) {
  Tensor out({mask.size(), kSlots, kSlots});
  for (std::size_t t = 0; t < mask.size(); ++t) {
    for (std::size_t i = 0; i < kSlots; ++i) {
      for (std::size_t j = 0; j < kSlots; ++j) {
        if (i == j || !mask[t][i] || !mask[t][j]) continue;
        const bool adjacent = std::abs(kSlotGrid[i].lane - kSlotGrid[j].lane) <= 1 &&
                              std::abs(kSlotGrid[i].lon - kSlotGrid[j].lon) <= 1;
        if (adjacent) out.at({t, i, j}) = 1.0;
      }
    }
  }
  return out;
}

std::pair<Tensor, std::vector<double>> distance_adjacency(const Tensor& features,
                                                          const std::vector<SlotMask>& mask) {
  check_inputs(features, mask);
  const std::size_t T = features.dim(0);
  Tensor out({T, kSlots, kSlots});
  std::vector<double> sigmas(T, 1.0);
  for (std::size_t t = 0; t < T; ++t) {
    Tensor d({kSlots, kSlots});
    std::vector<double> pairs;
    for (std::size_t i = 0; i < kSlots; ++i) {
      for (std::size_t j = i + 1; j < kSlots; ++j) {
        if (!mask[t][i] || !mask[t][j]) continue;
        const double dx = features.at({t, i, data::kPosLon}) - features.at({t, j, data::kPosLon});
        const double dy = features.at({t, i, data::kPosLat}) - features.at({t, j, data::kPosLat});
        d.at({i, j}) = std::hypot(dx, dy);
        pairs.push_back(d.at({i, j}));
      }
    }
    double sigma = pairs.size() >= 2 ? population_std(pairs) : 0.0;
    if (!(sigma > 0.0)) sigma = 1.0;
    sigmas[t] = sigma;
    for (std::size_t i = 0; i < kSlots; ++i) {
      for (std::size_t j = i + 1; j < kSlots; ++j) {
        if (!mask[t][i] || !mask[t][j]) continue;
        const double r = d.at({i, j}) / sigma;
        const double w = std::exp(-r * r);
        out.at({t, i, j}) = w;
        out.at({t, j, i}) = w;
      }
    }
  }
  return {std::move(out), std::move(sigmas)};
}

RiskForce risk_force(const RiskState& i, const RiskState& j, double min_gap) {
  RiskForce f;
  const double gap_lon = std::max(std::abs(i.pos_lon - j.pos_lon), min_gap);
  const double gap_lat = std::max(std::abs(i.pos_lat - j.pos_lat), min_gap);
  const double rel_lon = i.vel_lon - j.vel_lon;
  const double rel_lat = i.vel_lat - j.vel_lat;
  if (rel_lon > 0.0) f.lon = 0.5 * i.mass * i.vel_lon * rel_lon / gap_lon;
  if (rel_lat > 0.0) f.lat = 0.5 * i.mass * i.vel_lat * rel_lat / gap_lat;
  // Lateral speeds can be negative; forces are magnitudes.
  f.lon = std::abs(f.lon);
  f.lat = std::abs(f.lat);
  f.resultant = std::hypot(f.lon, f.lat);
  f.energy = f.lon * gap_lon + f.lat * gap_lat;
  return f;
}

std::pair<Tensor, std::vector<double>> risk_adjacency(const Tensor& features, const Tensor& mass,
                                                      const std::vector<SlotMask>& mask) {
  check_inputs(features, mask);
  const std::size_t T = features.dim(0);
  if (mass.shape() != Shape{T, kSlots}) throw DimensionError("mass must be T x 9");
  Tensor out({T, kSlots, kSlots});
  std::vector<double> sigmas(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    Tensor force({kSlots, kSlots});
    std::vector<double> values;
    for (std::size_t i = 0; i < kSlots; ++i) {
      for (std::size_t j = 0; j < kSlots; ++j) {
        if (i == j || !mask[t][i] || !mask[t][j]) continue;
        force.at({i, j}) =
            risk_force(state_at(features, mass, t, i), state_at(features, mass, t, j)).resultant;
        values.push_back(force.at({i, j}));
      }
    }
    const double sigma = values.size() >= 2 ? population_std(values) : 0.0;
    sigmas[t] = sigma;
    if (!(sigma > 0.0)) continue;
    for (std::size_t i = 0; i < kSlots; ++i) {
      for (std::size_t j = 0; j < kSlots; ++j) {
        if (i == j || !mask[t][i] || !mask[t][j]) continue;
        out.at({t, i, j}) = std::tanh(force.at({i, j}) / sigma);
      }
    }
  }
  return {std::move(out), std::move(sigmas)};
}

Tensor combine(const Tensor& neigh, const Tensor& dist, const Tensor& risk) {
  if (!same_shape(neigh, dist) || !same_shape(neigh, risk)) {
    throw DimensionError("adjacency components differ in shape");
  }
  Tensor out(neigh.shape());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = (neigh[k] + dist[k] + risk[k]) / 3.0;
  return out;
}

DynamicAdjacency build_adjacency(const Tensor& features, const Tensor& mass,
                                 const std::vector<SlotMask>& mask) {
  DynamicAdjacency a;
  a.neigh = neighborhood_adjacency(mask);
  std::tie(a.dist, a.sigma_dist) = distance_adjacency(features, mask);
  std::tie(a.risk, a.sigma_force) = risk_adjacency(features, mass, mask);
  a.combined = combine(a.neigh, a.dist, a.risk);
  return a;
}

DynamicAdjacency build_adjacency(const data::GroupWindow& window) {
  return build_adjacency(window.features, window.mass, window.mask);
}

}  // namespace gimtp::graph
