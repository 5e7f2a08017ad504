#pragma once

#include "gimtp/data.hpp"
#include "gimtp/tensor.hpp"

#include <utility>
#include <vector>

namespace gimtp::graph {

using data::SlotMask;

struct DynamicAdjacency {
  Tensor combined;  // T x N x N
  Tensor neigh;
  Tensor dist;
  Tensor risk;
  std::vector<double> sigma_dist;  // per timestep
  std::vector<double> sigma_force;
};

struct RiskState {
  double pos_lon = 0.0;
  double pos_lat = 0.0;
  double vel_lon = 0.0;
  double vel_lat = 0.0;
  double mass = 1.0;
};

struct RiskForce {
  double lon = 0.0;
  double lat = 0.0;
  double resultant = 0.0;
  double energy = 0.0;  // diagnostic, never used in the adjacency
};

inline constexpr double kMinGap = 0.1;

// 1 where both slots are occupied and king-move adjacent in the 3x3 grid.
Tensor neighborhood_adjacency(const std::vector<SlotMask>& mask);

// exp(-(d / sigma)^2) over occupied pairs; sigma is the per-step population
// standard deviation of the unordered pairwise distances (1 m if degenerate).
std::pair<Tensor, std::vector<double>> distance_adjacency(const Tensor& features,
                                                          const std::vector<SlotMask>& mask);

// Force exerted by i on j. An axis contributes only while i is faster than j.
RiskForce risk_force(const RiskState& i, const RiskState& j, double min_gap = kMinGap);

// tanh(F_res / sigma_F) for ordered occupied pairs; zero when sigma_F is
// degenerate.
std::pair<Tensor, std::vector<double>> risk_adjacency(const Tensor& features, const Tensor& mass,
                                                      const std::vector<SlotMask>& mask);

Tensor combine(const Tensor& neigh, const Tensor& dist, const Tensor& risk);

DynamicAdjacency build_adjacency(const Tensor& features, const Tensor& mass,
                                 const std::vector<SlotMask>& mask);
DynamicAdjacency build_adjacency(const data::GroupWindow& window);

}  // namespace gimtp::graph
