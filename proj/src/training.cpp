#include "gimtp/training.hpp"

#include "gimtp/errors.hpp"
#include "gimtp/json_util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <random>
#include <string>
#include <thread>

namespace gimtp::training {

using nlohmann::json;

double TrainConfig::lr_at(std::size_t epoch) const {
  return lr * std::pow(lr_decay, static_cast<double>(epoch) - 1.0);
}

json train_config_to_json(const TrainConfig& c) {
  return json{{"lr", c.lr},
              {"lr_decay", c.lr_decay},
              {"alpha", c.alpha},
              {"beta", c.beta},
              {"stage1_epochs", c.stage1_epochs},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"seed", c.seed},
              {"clip_norm", c.clip_norm},
              {"reset_moments", c.reset_moments},
              {"decoder_input", c.decoder_input == DecoderInput::kTeacher ? "teacher" : "predicted"},
              {"fit_normalization", c.fit_normalization}};
}

TrainConfig train_config_from_json(const json& j) {
  reject_unknown(j,
                 {"lr", "lr_decay", "alpha", "beta", "stage1_epochs", "epochs", "batch_size", "seed",
                  "clip_norm", "reset_moments", "decoder_input", "fit_normalization"},
                 "train");
  TrainConfig c;
  try {
    c.lr = j.value("lr", c.lr);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    c.stage1_epochs = j.value("stage1_epochs", c.stage1_epochs);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.reset_moments = j.value("reset_moments", c.reset_moments);
    c.fit_normalization = j.value("fit_normalization", c.fit_normalization);
    const std::string input = j.value("decoder_input", std::string("teacher"));
    if (input == "teacher") {
      c.decoder_input = DecoderInput::kTeacher;
    } else if (input == "predicted") {
      c.decoder_input = DecoderInput::kPredicted;
    } else {
      throw ConfigError("train.decoder_input must be 'teacher' or 'predicted'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  if (!(c.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(c.lr_decay > 0.0 && c.lr_decay <= 1.0)) throw ConfigError("train.lr_decay must be in (0, 1]");
  if (c.alpha < 0.0 || c.beta < 0.0) throw ConfigError("train.alpha and train.beta must be >= 0");
  if (c.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (c.clip_norm < 0.0) throw ConfigError("train.clip_norm must be >= 0");
  return c;
}

// ---------------------------------------------------------------------------
// Losses

ad::Var mse_loss(ad::Var mu, const Tensor& target) {
  if (mu.shape() != target.shape()) {
    throw DimensionError("mse_loss: prediction " + shape_string(mu.shape()) + " vs target " +
                         shape_string(target.shape()));
  }
  ad::Var diff = ad::sub(mu, mu.tape()->constant(target));
  return ad::scale(ad::sum(ad::square(diff)), 1.0 / static_cast<double>(mu.dim(0)));
}

ad::Var nll_traj(const decoder::Gaussian& g, const Tensor& target) {
  if (g.mu.shape() != target.shape()) {
    throw DimensionError("nll_traj: prediction " + shape_string(g.mu.shape()) + " vs target " +
                         shape_string(target.shape()));
  }
  for (double r : g.rho.value().data()) {
    if (std::abs(r) >= 1.0) throw ContractError("nll_traj: |rho| must be below 1");
  }
  ad::Tape& tape = *g.mu.tape();
  const std::size_t F = target.dim(0);
  ad::Var log_sigma = ad::floor_at(g.log_sigma, std::log(kSigmaFloor));
  ad::Var scaled = ad::mul(ad::sub(g.mu, tape.constant(target)), ad::exp(ad::scale(log_sigma, -1.0)));
  ad::Var a = ad::columns(scaled, 0, 1);
  ad::Var b = ad::columns(scaled, 1, 2);
  ad::Var one_minus = ad::add_scalar(ad::scale(ad::square(g.rho), -1.0), 1.0);
  ad::Var log_om = ad::log(one_minus);
  ad::Var z = ad::sub(ad::add(ad::square(a), ad::square(b)), ad::scale(ad::mul(g.rho, ad::mul(a, b)), 2.0));
  ad::Var quad = ad::scale(ad::mul(z, ad::exp(ad::scale(log_om, -1.0))), 0.5);
  ad::Var per_step = ad::add(ad::add(ad::columns(log_sigma, 0, 1), ad::columns(log_sigma, 1, 2)),
                             ad::add(ad::scale(log_om, 0.5), quad));
  return ad::add_scalar(ad::sum(per_step),
                        static_cast<double>(F) * std::log(2.0 * std::numbers::pi));
}

ad::Var nll_intention(const intention::Logits& logits, const std::array<std::vector<int>, 2>& labels) {
  ad::Tape& tape = *logits.lat.tape();
  const std::size_t F = logits.lat.dim(0);
  ad::Var total;
  for (int head = 0; head < 2; ++head) {
    const ad::Var& l = head == 0 ? logits.lat : logits.lon;
    if (labels[head].size() != F) throw DimensionError("nll_intention: label count differs from F");
    Tensor onehot(l.shape());
    for (std::size_t t = 0; t < F; ++t) onehot.at({t, static_cast<std::size_t>(labels[head][t])}) = 1.0;
    ad::Var picked = ad::sum(ad::mul(ad::log_softmax(l, 1), tape.constant(std::move(onehot))));
    total = head == 0 ? picked : ad::add(total, picked);
  }
  return ad::scale(total, -1.0 / static_cast<double>(F));
}

ad::Var masked_mse(ad::Var prediction, const Tensor& target, const Tensor& weight) {
  if (prediction.shape() != target.shape() || target.shape() != weight.shape()) {
    throw DimensionError("masked_mse: shapes disagree");
  }
  ad::Tape& tape = *prediction.tape();
  double count = 0.0;
  for (double w : weight.data()) count += w != 0.0 ? 1.0 : 0.0;
  ad::Var sq = ad::mul(ad::square(ad::sub(prediction, tape.constant(target))), tape.constant(weight));
  return ad::scale(ad::sum(sq), count > 0.0 ? 1.0 / count : 0.0);
}

LossParts total_loss(const decoder::Gaussian& traj, const intention::Logits& logits, ad::Var readout,
                     const model::Inputs& in, int stage, const TrainConfig& cfg) {
  LossParts parts;
  ad::Var mse = mse_loss(traj.mu, in.target);
  ad::Var nll = nll_traj(traj, in.target);
  ad::Var nll_m = nll_intention(logits, in.labels);
  parts.mse = mse.value().item();
  parts.nll_traj = nll.value().item();
  parts.nll_m = nll_m.value().item();
  parts.total = ad::add(stage == 1 ? mse : nll, ad::scale(nll_m, cfg.alpha));
  if (readout.valid()) {
    ad::Var fg = masked_mse(readout, in.future_features, in.future_weight);
    parts.fg_mse = fg.value().item();
    parts.total = ad::add(parts.total, ad::scale(fg, cfg.beta));
  }
  return parts;
}

LossParts window_loss(ad::Tape& tape, const model::Model& model, const model::Inputs& in, int stage,
                      const TrainConfig& cfg) {
  const model::Bound b = model.bind(tape);
  const model::Encoded e = model.encode(b, in);
  ad::Var rows = cfg.decoder_input == DecoderInput::kTeacher ? tape.constant(in.teacher)
                                                             : model::predicted_rows(e.logits);
  const decoder::Gaussian traj = model.decode(b, e, rows, in);
  return total_loss(traj, e.logits, e.readout, in, stage, cfg);
}

json to_json(const EpochRecord& r) {
  return json{{"epoch", r.epoch}, {"stage", r.stage},       {"lr", r.lr},
              {"loss", r.loss},   {"mse", r.mse},           {"nll_traj", r.nll_traj},
              {"nll_m", r.nll_m}, {"fg_mse", r.fg_mse}};
}

// ---------------------------------------------------------------------------
// Training loop

std::size_t worker_count() {
  const char* env = std::getenv("GIMTP_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError("GIMTP_THREADS must be a positive integer");
  return static_cast<std::size_t>(v);
}

namespace {

struct WindowResult {
  std::vector<Tensor> grads;
  LossParts parts;
  double loss = 0.0;
};

WindowResult run_window(const model::Model& model, const model::Inputs& in, int stage,
                        const TrainConfig& cfg) {
  ad::Tape tape;
  WindowResult r;
  r.parts = window_loss(tape, model, in, stage, cfg);
  r.loss = r.parts.total.value().item();
  if (std::isfinite(r.loss)) {
    tape.backward(r.parts.total);
    r.grads = model.store().collect(tape);
  }
  r.parts.total = ad::Var();
  return r;
}

// Fisher-Yates driven by the raw 64-bit stream so the order is portable.
std::vector<std::size_t> permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

}  // namespace

std::vector<EpochRecord> train(model::Model& model, const std::vector<data::GroupWindow>& windows,
                               const TrainConfig& cfg, TrainState& state,
                               const std::function<void(const EpochRecord&)>& on_epoch) {
  if (windows.empty()) throw UsageError("training needs at least one window");
  std::vector<model::Inputs> inputs;
  inputs.reserve(windows.size());
  for (const auto& w : windows) inputs.push_back(model::prepare(w, model.config()));

  const std::size_t workers = worker_count();
  ParameterStore& store = model.store();
  std::vector<EpochRecord> records;

  for (std::size_t epoch = state.epochs_done + 1; epoch <= cfg.epochs; ++epoch) {
    const int stage = cfg.stage_at(epoch);
    if (cfg.reset_moments && cfg.stage1_epochs > 0 && epoch == cfg.stage1_epochs + 1) {
      store.reset_moments();
      state.moment_origin = store.step();
    }
    std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + epoch);
    const std::vector<std::size_t> order = permutation(windows.size(), rng);

    AdamOptions adam;
    adam.lr = cfg.lr_at(epoch);
    adam.moment_origin = state.moment_origin;
    EpochRecord rec;
    rec.epoch = epoch;
    rec.stage = stage;
    rec.lr = adam.lr;

    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      store.zero_grad();
      for (std::size_t group = start; group < end; group += workers) {
        const std::size_t group_end = std::min(end, group + workers);
        std::vector<WindowResult> results(group_end - group);
        if (results.size() == 1) {
          results[0] = run_window(model, inputs[order[group]], stage, cfg);
        } else {
          std::vector<std::thread> threads;
          for (std::size_t k = 0; k < results.size(); ++k) {
            threads.emplace_back([&, k] { results[k] = run_window(model, inputs[order[group + k]], stage, cfg); });
          }
          for (auto& t : threads) t.join();
        }
        for (std::size_t k = 0; k < results.size(); ++k) {
          WindowResult& r = results[k];
          if (!std::isfinite(r.loss)) {
            throw NumericError("non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(batch_index) + " (window " +
                               std::to_string(order[group + k]) + ")");
          }
          store.accumulate(r.grads);
          rec.loss += r.loss;
          rec.mse += r.parts.mse;
          rec.nll_traj += r.parts.nll_traj;
          rec.nll_m += r.parts.nll_m;
          rec.fg_mse += r.parts.fg_mse;
        }
      }
      store.scale_grads(1.0 / static_cast<double>(end - start));
      if (cfg.clip_norm > 0.0) {
        const double norm = store.grad_norm();
        if (norm > cfg.clip_norm) store.scale_grads(cfg.clip_norm / norm);
      }
      adam_step(store, adam);
    }
    const double n = static_cast<double>(windows.size());
    rec.loss /= n;
    rec.mse /= n;
    rec.nll_traj /= n;
    rec.nll_m /= n;
    rec.fg_mse /= n;
    state.epochs_done = epoch;
    records.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return records;
}

void save(const std::filesystem::path& path, const model::Model& model, const TrainConfig& cfg,
          const TrainState& state) {
  json meta{{"model", model::config_to_json(model.config())},
            {"train", train_config_to_json(cfg)},
            {"epochs_done", state.epochs_done},
            {"moment_origin", state.moment_origin}};
  write_checkpoint(path, make_checkpoint(model.store(), std::move(meta)));
}

Loaded load(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  const json& meta = ckpt.metadata;
  if (!meta.contains("model") || !meta.contains("train")) {
    throw ConfigError("checkpoint " + path.string() + " lacks model/train metadata");
  }
  const model::ModelConfig mc = model::config_from_json(meta.at("model"));
  model::Model fresh(mc, 0);
  restore_checkpoint(ckpt, fresh.store());
  TrainState state;
  state.epochs_done = meta.value("epochs_done", std::size_t{0});
  state.moment_origin = meta.value("moment_origin", std::int64_t{0});
  return Loaded{model::Model(mc, std::move(fresh.store())), train_config_from_json(meta.at("train")),
                state};
}

// ---------------------------------------------------------------------------
// Evaluation

json to_json(const EvalReport& r) {
  json rmse = json::object();
  for (const auto& [h, v] : r.rmse) rmse[std::to_string(h)] = v;
  return json{{"rmse", rmse},
              {"accuracy", {{"lat", r.accuracy_lat}, {"lon", r.accuracy_lon}}},
              {"samples", r.samples}};
}

EvalReport score(const std::vector<Tensor>& predicted, const std::vector<intention::Distribution>& dist,
                 const std::vector<data::GroupWindow>& windows) {
  if (windows.empty()) throw UsageError("evaluation needs at least one window");
  if (predicted.size() != windows.size() || dist.size() != windows.size()) {
    throw DimensionError("score: prediction and window counts differ");
  }
  const std::size_t F = windows.front().horizon;
  std::vector<double> step_sq(F, 0.0);
  double hits_lat = 0.0, hits_lon = 0.0;
  for (std::size_t l = 0; l < windows.size(); ++l) {
    const auto& w = windows[l];
    if (w.horizon != F) throw DimensionError("score: windows disagree on the horizon");
    for (std::size_t t = 0; t < F; ++t) {
      const double dx = predicted[l].at({t, 0}) - w.target_future.at({t, 0});
      const double dy = predicted[l].at({t, 1}) - w.target_future.at({t, 1});
      step_sq[t] += dx * dx + dy * dy;
      for (int head = 0; head < 2; ++head) {
        const Tensor& p = head == 0 ? dist[l].lat : dist[l].lon;
        std::size_t best = 0;
        for (std::size_t k = 1; k < 3; ++k) {
          if (p.at({k, t}) > p.at({best, t})) best = k;
        }
        const int truth = head == 0 ? static_cast<int>(w.intentions.lateral(t))
                                    : static_cast<int>(w.intentions.longitudinal(t));
        (head == 0 ? hits_lat : hits_lon) += static_cast<int>(best) == truth ? 1.0 : 0.0;
      }
    }
  }
  EvalReport r;
  r.samples = windows.size();
  const double L = static_cast<double>(windows.size());
  double running = 0.0;
  std::size_t next = 0;
  for (std::size_t t = 0; t < F; ++t) {
    running += step_sq[t];
    while (next < kHorizons.size() && kHorizons[next] < t + 1) ++next;
    if (next < kHorizons.size() && kHorizons[next] == t + 1) {
      r.rmse.emplace_back(t + 1, std::sqrt(running / (L * static_cast<double>(t + 1))));
    }
  }
  r.accuracy_lat = hits_lat / (L * static_cast<double>(F));
  r.accuracy_lon = hits_lon / (L * static_cast<double>(F));
  return r;
}

EvalReport evaluate(const model::Model& model, const std::vector<data::GroupWindow>& windows) {
  if (windows.empty()) throw UsageError("evaluation needs at least one window");
  std::vector<Tensor> mus;
  std::vector<intention::Distribution> dists;
  for (const auto& w : windows) {
    model::Prediction p = model::predict(model, w);
    mus.push_back(std::move(p.fused.mu));
    dists.push_back(std::move(p.intentions));
  }
  return score(mus, dists, windows);
}

}  // namespace gimtp::training
