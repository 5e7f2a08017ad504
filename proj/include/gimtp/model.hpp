#pragma once

#include "gimtp/autograd.hpp"
#include "gimtp/data.hpp"
#include "gimtp/decoder.hpp"
#include "gimtp/intention.hpp"
#include "gimtp/parameters.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

namespace gimtp::model {

struct Ablation {
  bool no_dgcn = false;  // plain GCN layers instead of diffusion convolution
  bool no_fg = false;    // drop the future-guided branch
  bool no_ff = false;    // dense map from the time-mean instead of fusion

  bool any() const { return no_dgcn || no_fg || no_ff; }
};

// Fixed affine input normalization: (value - offset) / scale for the four
// kinematic features of occupied slots.
struct Normalization {
  std::array<double, 4> offset{0.0, 0.0, 0.0, 0.0};
  std::array<double, 4> scale{30.0, 30.0, 10.0, 10.0};
};

struct ModelConfig {
  std::size_t history = 30;
  std::size_t horizon = 50;
  std::size_t order = 2;               // diffusion steps K
  std::size_t dgcn_width = 256;        // d
  std::size_t mlp_width = 256;         // MLP_V, MLP_O and intention heads
  std::size_t gru_width = 128;         // MLP_D1 output and GRU state
  std::size_t decoder_width = 128;     // MLP_D2 hidden layer
  double slope = 0.1;                  // leaky ReLU
  bool layer_norm = true;
  bool velocity_prior = false;         // add constant-speed longitudinal motion to mu
  double output_scale = 1.0;           // metres per unit of raw mean increment
  double frame_rate = 10.0;
  Normalization normalization;
  Ablation ablation;

  std::size_t fused_length() const { return ablation.no_fg ? history : history + horizon; }
};

nlohmann::json config_to_json(const ModelConfig& c);
// Rejects unknown keys and non-positive dimensions.
ModelConfig config_from_json(const nlohmann::json& j);

// Per-feature mean and standard deviation of occupied history slots.
Normalization fit_normalization(const std::vector<data::GroupWindow>& windows);

// Window-dependent constants consumed by the forward pass.
struct Inputs {
  Tensor features;                   // T x N x C, normalized
  std::vector<Tensor> bases;         // diffusion (or GCN) operators, T x N x N
  std::vector<Tensor> future_bases;  // last-step operators, N x N
  Tensor future_features;            // F x N x C, normalized
  Tensor future_weight;              // F x N x C, 1 on occupied future slots
  Tensor cumulative;                 // F x F lower-triangular, times output_scale
  Tensor offset;                     // F x 2 prior motion in metres
  Tensor target;                     // F x 2 ground truth in metres
  Tensor teacher;                    // F x 6 true intention rows
  std::array<std::vector<int>, 2> labels;  // lateral / longitudinal class per step
};

Inputs prepare(const data::GroupWindow& window, const ModelConfig& config);

class Model;

// Parameters bound to one tape.
struct Bound {
  std::vector<std::array<ad::Var, 3>> stacks;  // historical, then future-guided
  ad::Var time_map;                            // F x T, future-guided branch
  layers::Dense readout;                       // d -> C
  intention::Params intention;
  decoder::Params decoder;
};

struct Encoded {
  ad::Var h_hist;      // T x N x d
  ad::Var h_future;    // F x N x d (invalid under no_fg)
  ad::Var readout;     // F x N x C (invalid under no_fg)
  ad::Var h_agg;       // L x width
  intention::Logits logits;
};

class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  Model(const ModelConfig& config, ParameterStore store);

  const ModelConfig& config() const { return config_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }

  Bound bind(ad::Tape& tape) const;
  Encoded encode(const Bound& b, const Inputs& in) const;
  // Decodes with `m_rows` (F x 6) as both fusion weighting and decoder input.
  decoder::Gaussian decode(const Bound& b, const Encoded& e, ad::Var m_rows,
                           const Inputs& in) const;

 private:
  void build(std::uint64_t seed);

  ModelConfig config_;
  ParameterStore store_;
};

// Predicted intention rows (F x 6) on the tape, softmax of both heads.
ad::Var predicted_rows(const intention::Logits& logits);

struct Prediction {
  intention::Distribution intentions;
  Tensor weighting;  // 6 x F fusion weighting after forcing
  decoder::GaussianSequence fused;
  std::array<decoder::ModePrediction, 9> modes;
};

struct Forcing {
  std::optional<data::LateralIntention> lat;
  std::optional<data::LongitudinalIntention> lon;
};

// Nine forced-mode decodes plus the fused decode. Forcing replaces the
// corresponding block of every column of the fused weighting with a one-hot.
Prediction predict(const Model& model, const data::GroupWindow& window, const Forcing& force = {});

// Row-normalized cosine similarity of the future-guided node embeddings
// (F x N x N). Throws ConfigError under no_fg.
Tensor future_similarity(const Model& model, const data::GroupWindow& window);

}  // namespace gimtp::model
