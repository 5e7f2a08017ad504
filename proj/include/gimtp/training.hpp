#pragma once

#include "gimtp/data.hpp"
#include "gimtp/decoder.hpp"
#include "gimtp/intention.hpp"
#include "gimtp/model.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace gimtp::training {

inline constexpr double kSigmaFloor = 1e-3;

// Intention weighting fed to the decoder while training.
enum class DecoderInput { kTeacher, kPredicted };

struct TrainConfig {
  double lr = 0.01;
  double lr_decay = 0.95;
  double alpha = 0.2;
  double beta = 0.1;
  std::size_t stage1_epochs = 5;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  double clip_norm = 0.0;             // 0 disables clipping
  bool reset_moments = true;          // fresh Adam moments when stage 2 starts
  DecoderInput decoder_input = DecoderInput::kTeacher;
  bool fit_normalization = true;      // derive input normalization from the data

  double lr_at(std::size_t epoch) const;
  int stage_at(std::size_t epoch) const { return epoch <= stage1_epochs ? 1 : 2; }
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// (1/F) sum_t |mu_t - y_t|^2.
ad::Var mse_loss(ad::Var mu, const Tensor& target);
// Bivariate Gaussian NLL summed over steps; sigma floored at kSigmaFloor.
ad::Var nll_traj(const decoder::Gaussian& g, const Tensor& target);
// -(1/F) sum_t [log p_lat(true) + log p_lon(true)].
ad::Var nll_intention(const intention::Logits& logits, const std::array<std::vector<int>, 2>& labels);
// Mean squared error over entries with nonzero weight.
ad::Var masked_mse(ad::Var prediction, const Tensor& target, const Tensor& weight);

struct LossParts {
  ad::Var total;
  double mse = 0.0;
  double nll_traj = 0.0;
  double nll_m = 0.0;
  double fg_mse = 0.0;
};

// Stage 1: MSE + alpha NLL_m + beta FG; stage 2: NLL_traj + alpha NLL_m + beta FG.
LossParts total_loss(const decoder::Gaussian& traj, const intention::Logits& logits,
                     ad::Var readout, const model::Inputs& in, int stage, const TrainConfig& cfg);

// Forward pass and loss for one window on `tape`.
LossParts window_loss(ad::Tape& tape, const model::Model& model, const model::Inputs& in,
                      int stage, const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  int stage = 1;
  double lr = 0.0;
  double loss = 0.0;
  double mse = 0.0;
  double nll_traj = 0.0;
  double nll_m = 0.0;
  double fg_mse = 0.0;
};

nlohmann::json to_json(const EpochRecord& r);

struct TrainState {
  std::size_t epochs_done = 0;
  std::int64_t moment_origin = 0;
};

// Worker count from GIMTP_THREADS (default 1).
std::size_t worker_count();

// Runs epochs state.epochs_done+1 .. cfg.epochs. Gradients are reduced in
// batch order, so results do not depend on the worker count. Throws
// NumericError naming the epoch and batch on a non-finite loss.
std::vector<EpochRecord> train(model::Model& model, const std::vector<data::GroupWindow>& windows,
                               const TrainConfig& cfg, TrainState& state,
                               const std::function<void(const EpochRecord&)>& on_epoch = {});

// Checkpoint with model/train configuration and progress in the metadata.
void save(const std::filesystem::path& path, const model::Model& model, const TrainConfig& cfg,
          const TrainState& state);

struct Loaded {
  model::Model model;
  TrainConfig train;
  TrainState state;
};

Loaded load(const std::filesystem::path& path);

inline constexpr std::array<std::size_t, 5> kHorizons = {10, 20, 30, 40, 50};

struct EvalReport {
  std::vector<std::pair<std::size_t, double>> rmse;  // horizon -> RMSE over steps 1..h
  double accuracy_lat = 0.0;
  double accuracy_lon = 0.0;
  std::size_t samples = 0;
};

nlohmann::json to_json(const EvalReport& r);

// Fused-trajectory RMSE and per-step intention accuracy. Throws UsageError on
// an empty dataset.
EvalReport evaluate(const model::Model& model, const std::vector<data::GroupWindow>& windows);

// Same metrics from precomputed fused means (F x 2 each) and distributions.
EvalReport score(const std::vector<Tensor>& predicted, const std::vector<intention::Distribution>& dist,
                 const std::vector<data::GroupWindow>& windows);

}  // namespace gimtp::training
