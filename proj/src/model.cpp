#include "gimtp/model.hpp"

#include "gimtp/encoder.hpp"
#include "gimtp/errors.hpp"
#include "gimtp/graph.hpp"
#include "gimtp/json_util.hpp"

#include <cmath>
#include <random>
#include <string>

namespace gimtp::model {

using nlohmann::json;

namespace {

constexpr std::size_t kIntentions = 6;
constexpr std::size_t kOutputs = 5;

std::size_t positive(const json& j, const char* key, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() <= 0) {
    throw ConfigError(std::string("model.") + key + " must be a positive integer");
  }
  return v.get<std::size_t>();
}

void normalize_into(const Tensor& raw, const std::vector<data::SlotMask>& mask,
                    const Normalization& norm, Tensor& out) {
  out = Tensor(raw.shape());
  const std::size_t steps = raw.dim(0), N = raw.dim(1), C = raw.dim(2);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < N; ++i) {
      if (!mask[t][i]) continue;
      const double* src = raw.raw() + (t * N + i) * C;
      double* dst = out.raw() + (t * N + i) * C;
      for (std::size_t c = 0; c < 4; ++c) dst[c] = (src[c] - norm.offset[c]) / norm.scale[c];
      dst[data::kOccupied] = 1.0;
    }
  }
}

}  // namespace

json config_to_json(const ModelConfig& c) {
  return json{{"history", c.history},
              {"horizon", c.horizon},
              {"order", c.order},
              {"dgcn_width", c.dgcn_width},
              {"mlp_width", c.mlp_width},
              {"gru_width", c.gru_width},
              {"decoder_width", c.decoder_width},
              {"slope", c.slope},
              {"layer_norm", c.layer_norm},
              {"velocity_prior", c.velocity_prior},
              {"output_scale", c.output_scale},
              {"frame_rate", c.frame_rate},
              {"normalization",
               {{"offset", c.normalization.offset}, {"scale", c.normalization.scale}}},
              {"ablation",
               {{"no_dgcn", c.ablation.no_dgcn},
                {"no_fg", c.ablation.no_fg},
                {"no_ff", c.ablation.no_ff}}}};
}

ModelConfig config_from_json(const json& j) {
  reject_unknown(j,
                 {"history", "horizon", "order", "dgcn_width", "mlp_width", "gru_width",
                  "decoder_width", "slope", "layer_norm", "velocity_prior", "output_scale",
                  "frame_rate", "normalization", "ablation"},
                 "model");
  ModelConfig c;
  try {
    c.history = positive(j, "history", c.history);
    c.horizon = positive(j, "horizon", c.horizon);
    c.order = positive(j, "order", c.order);
    c.dgcn_width = positive(j, "dgcn_width", c.dgcn_width);
    c.mlp_width = positive(j, "mlp_width", c.mlp_width);
    c.gru_width = positive(j, "gru_width", c.gru_width);
    c.decoder_width = positive(j, "decoder_width", c.decoder_width);
    c.slope = j.value("slope", c.slope);
    c.layer_norm = j.value("layer_norm", c.layer_norm);
    c.velocity_prior = j.value("velocity_prior", c.velocity_prior);
    c.output_scale = j.value("output_scale", c.output_scale);
    c.frame_rate = j.value("frame_rate", c.frame_rate);
    if (j.contains("normalization")) {
      const json& n = j.at("normalization");
      reject_unknown(n, {"offset", "scale"}, "model.normalization");
      if (n.contains("offset")) c.normalization.offset = n.at("offset").get<std::array<double, 4>>();
      if (n.contains("scale")) c.normalization.scale = n.at("scale").get<std::array<double, 4>>();
    }
    if (j.contains("ablation")) {
      const json& a = j.at("ablation");
      reject_unknown(a, {"no_dgcn", "no_fg", "no_ff"}, "model.ablation");
      c.ablation.no_dgcn = a.value("no_dgcn", false);
      c.ablation.no_fg = a.value("no_fg", false);
      c.ablation.no_ff = a.value("no_ff", false);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  if (c.history < 2) throw ConfigError("model.history must be at least 2");
  if (c.order > 4) throw ConfigError("model.order must be in 1..4");
  if (!(c.frame_rate > 0.0) || !(c.output_scale > 0.0)) {
    throw ConfigError("model.frame_rate and model.output_scale must be positive");
  }
  for (double s : c.normalization.scale) {
    if (!(s > 0.0)) throw ConfigError("model.normalization.scale entries must be positive");
  }
  return c;
}

Normalization fit_normalization(const std::vector<data::GroupWindow>& windows) {
  std::array<double, 4> sum{}, sq{};
  double count = 0.0;
  for (const auto& w : windows) {
    const std::size_t T = w.features.dim(0), N = w.features.dim(1), C = w.features.dim(2);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < N; ++i) {
        if (!w.mask[t][i]) continue;
        const double* f = w.features.raw() + (t * N + i) * C;
        for (std::size_t c = 0; c < 4; ++c) {
          sum[c] += f[c];
          sq[c] += f[c] * f[c];
        }
        count += 1.0;
      }
    }
  }
  Normalization n;
  if (count == 0.0) return n;
  for (std::size_t c = 0; c < 4; ++c) {
    const double mean = sum[c] / count;
    const double var = std::max(0.0, sq[c] / count - mean * mean);
    n.offset[c] = mean;
    n.scale[c] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return n;
}

Inputs prepare(const data::GroupWindow& window, const ModelConfig& config) {
  const std::size_t T = config.history, F = config.horizon;
  if (window.history != T || window.horizon != F) {
    throw DimensionError("window is " + std::to_string(window.history) + "+" +
                         std::to_string(window.horizon) + " steps, model expects " +
                         std::to_string(T) + "+" + std::to_string(F));
  }
  Inputs in;
  normalize_into(window.features, window.mask, config.normalization, in.features);
  normalize_into(window.future_features, window.future_mask, config.normalization,
                 in.future_features);

  const graph::DynamicAdjacency adj = graph::build_adjacency(window);
  if (config.ablation.no_dgcn) {
    in.bases.push_back(encoder::gcn_operator(adj.combined));
  } else {
    in.bases = encoder::diffusion_bases(encoder::transition_matrices(adj.combined), config.order);
  }
  in.future_bases = encoder::last_step(in.bases);

  const std::size_t N = window.future_features.dim(1), C = window.future_features.dim(2);
  in.future_weight = Tensor({F, N, C});
  for (std::size_t t = 0; t < F; ++t) {
    for (std::size_t i = 0; i < N; ++i) {
      if (!window.future_mask[t][i]) continue;
      for (std::size_t c = 0; c < C; ++c) in.future_weight.at({t, i, c}) = 1.0;
    }
  }

  in.cumulative = Tensor({F, F});
  for (std::size_t r = 0; r < F; ++r) {
    for (std::size_t c = 0; c <= r; ++c) in.cumulative.at({r, c}) = config.output_scale;
  }
  in.offset = Tensor({F, 2});
  if (config.velocity_prior) {
    const double v = window.features.at({T - 1, 0, data::kVelLon});
    for (std::size_t k = 0; k < F; ++k) {
      in.offset.at({k, 0}) = v * static_cast<double>(k + 1) / config.frame_rate;
    }
  }

  in.target = window.target_future;
  const Tensor stacked = window.intentions.stacked();
  in.teacher = Tensor({F, kIntentions});
  for (std::size_t t = 0; t < F; ++t) {
    for (std::size_t m = 0; m < kIntentions; ++m) in.teacher.at({t, m}) = stacked.at({m, t});
  }
  for (std::size_t t = 0; t < F; ++t) {
    in.labels[0].push_back(static_cast<int>(window.intentions.lateral(t)));
    in.labels[1].push_back(static_cast<int>(window.intentions.longitudinal(t)));
  }
  return in;
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) { build(seed); }

Model::Model(const ModelConfig& config, ParameterStore store)
    : config_(config), store_(std::move(store)) {
  Model reference(config, 0);
  const auto& want = reference.store().parameters();
  if (want.size() != store_.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(store_.size()) +
                      " parameters, model expects " + std::to_string(want.size()));
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    const Parameter& p = store_[i];
    if (p.name != want[i].name || p.value.shape() != want[i].value.shape()) {
      throw ConfigError("checkpoint parameter '" + p.name + "' " + shape_string(p.value.shape()) +
                        " does not match '" + want[i].name + "' " +
                        shape_string(want[i].value.shape()));
    }
  }
}

void Model::build(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const ModelConfig& c = config_;
  const std::size_t N = data::kSlots, C = data::kFeatures;
  const std::size_t nb = c.ablation.no_dgcn ? 1 : 2 * c.order;
  const std::size_t d = c.dgcn_width, L = c.fused_length();

  auto weight = [&](const std::string& name, Shape shape, std::size_t fan_in,
                    std::size_t fan_out) {
    store_.add(name, glorot_uniform(std::move(shape), fan_in, fan_out, rng));
  };
  auto dense = [&](const std::string& name, std::size_t in, std::size_t out) {
    weight(name + "/w", {in, out}, in, out);
    store_.add(name + "/b", Tensor({out}));
  };
  auto norm = [&](const std::string& name, std::size_t width) {
    if (!c.layer_norm) return;
    store_.add(name + "/gain", Tensor({width}, 1.0));
    store_.add(name + "/bias", Tensor({width}));
  };
  auto stack = [&](const std::string& name) {
    weight(name + "/theta1", {nb * C, d}, nb * C, d);
    weight(name + "/theta2", {nb * d, d}, nb * d, d);
    weight(name + "/theta3", {nb * d, d}, nb * d, d);
  };

  stack("hist");
  if (!c.ablation.no_fg) {
    weight("future/time_map", {c.horizon, c.history}, c.history, c.horizon);
    stack("future");
    dense("future/readout", d, C);
  }

  dense("intention/aggregate", N * d, c.mlp_width);
  norm("intention/aggregate/norm", c.mlp_width);
  weight("intention/time_map", {c.horizon, L}, L, c.horizon);
  dense("intention/project", c.mlp_width, c.mlp_width);
  dense("intention/lat_hidden", c.mlp_width, c.mlp_width);
  dense("intention/lat_out", c.mlp_width, 3);
  dense("intention/lon_hidden", c.mlp_width, c.mlp_width);
  dense("intention/lon_out", c.mlp_width, 3);

  if (c.ablation.no_ff) {
    dense("decoder/feature_map", c.mlp_width, c.horizon * c.mlp_width);
  } else {
    weight("decoder/w_map", {L, c.horizon, kIntentions}, L, c.horizon);
  }
  dense("decoder/input", c.mlp_width + kIntentions, c.gru_width);
  norm("decoder/input/norm", c.gru_width);
  for (const char* gate : {"z", "r", "n"}) dense(std::string("decoder/gru/w") + gate, c.gru_width, c.gru_width);
  for (const char* gate : {"z", "r", "n"}) {
    weight(std::string("decoder/gru/u") + gate, {c.gru_width, c.gru_width}, c.gru_width,
           c.gru_width);
  }
  dense("decoder/hidden", c.gru_width, c.decoder_width);
  dense("decoder/out", c.decoder_width, kOutputs);
}

Bound Model::bind(ad::Tape& tape) const {
  auto p = [&](const std::string& name) { return tape.parameter(store_, store_.index_of(name)); };
  auto dense = [&](const std::string& name) { return layers::Dense{p(name + "/w"), p(name + "/b")}; };
  auto norm = [&](const std::string& name) -> std::optional<layers::Norm> {
    if (!config_.layer_norm) return std::nullopt;
    return layers::Norm{p(name + "/gain"), p(name + "/bias")};
  };
  auto stack = [&](const std::string& name) {
    return std::array<ad::Var, 3>{p(name + "/theta1"), p(name + "/theta2"), p(name + "/theta3")};
  };

  Bound b;
  b.stacks.push_back(stack("hist"));
  if (!config_.ablation.no_fg) {
    b.stacks.push_back(stack("future"));
    b.time_map = p("future/time_map");
    b.readout = dense("future/readout");
  }
  auto& ip = b.intention;
  ip.aggregate = dense("intention/aggregate");
  ip.aggregate_norm = norm("intention/aggregate/norm");
  ip.time_map = p("intention/time_map");
  ip.project = dense("intention/project");
  ip.lat_hidden = dense("intention/lat_hidden");
  ip.lat_out = dense("intention/lat_out");
  ip.lon_hidden = dense("intention/lon_hidden");
  ip.lon_out = dense("intention/lon_out");
  ip.slope = config_.slope;

  auto& dp = b.decoder;
  if (config_.ablation.no_ff) {
    dp.feature_map = dense("decoder/feature_map");
  } else {
    dp.w_map = p("decoder/w_map");
  }
  dp.input = dense("decoder/input");
  dp.input_norm = norm("decoder/input/norm");
  dp.gru.z = dense("decoder/gru/wz");
  dp.gru.r = dense("decoder/gru/wr");
  dp.gru.n = dense("decoder/gru/wn");
  dp.gru.uz = p("decoder/gru/uz");
  dp.gru.ur = p("decoder/gru/ur");
  dp.gru.un = p("decoder/gru/un");
  dp.hidden = dense("decoder/hidden");
  dp.out = dense("decoder/out");
  dp.slope = config_.slope;
  return b;
}

Encoded Model::encode(const Bound& b, const Inputs& in) const {
  ad::Tape& tape = *b.stacks[0][0].tape();
  const std::size_t T = config_.history, F = config_.horizon;
  const std::size_t N = in.features.dim(1), C = in.features.dim(2), d = config_.dgcn_width;

  std::vector<ad::Var> bases, future_bases;
  for (const Tensor& t : in.bases) bases.push_back(tape.constant(t));

  Encoded e;
  ad::Var x = tape.constant(in.features);
  e.h_hist = encoder::encode_stack(x, bases, b.stacks[0]);
  ad::Var h_cat = e.h_hist;
  if (!config_.ablation.no_fg) {
    for (const Tensor& t : in.future_bases) future_bases.push_back(tape.constant(t));
    ad::Var xf = ad::reshape(ad::matmul(b.time_map, ad::reshape(x, {T, N * C})), {F, N, C});
    e.h_future = encoder::encode_stack(xf, future_bases, b.stacks[1]);
    e.readout =
        ad::reshape(layers::dense(b.readout, ad::reshape(e.h_future, {F * N, d})), {F, N, C});
    const ad::Var parts[] = {e.h_hist, e.h_future};
    h_cat = ad::concat(parts, 0);
  }
  e.h_agg = intention::aggregate(h_cat, b.intention.aggregate, b.intention.aggregate_norm,
                                 config_.slope);
  e.logits = intention::predict(e.h_agg, b.intention);
  return e;
}

decoder::Gaussian Model::decode(const Bound& b, const Encoded& e, ad::Var m_rows,
                                const Inputs& in) const {
  ad::Var v = config_.ablation.no_ff
                  ? decoder::feature_map(e.h_agg, *b.decoder.feature_map, config_.horizon)
                  : decoder::fuse(e.h_agg, m_rows, b.decoder.w_map);
  ad::Var raw = decoder::decode(v, m_rows, b.decoder);
  return decoder::gaussian(raw, in.cumulative, in.offset);
}

ad::Var predicted_rows(const intention::Logits& logits) {
  const ad::Var parts[] = {ad::softmax(logits.lat, 1), ad::softmax(logits.lon, 1)};
  return ad::concat(parts, 1);
}

namespace {

Tensor forced_rows(std::size_t F, int lat, int lon) {
  Tensor m({F, kIntentions});
  for (std::size_t t = 0; t < F; ++t) {
    m.at({t, static_cast<std::size_t>(lat)}) = 1.0;
    m.at({t, 3 + static_cast<std::size_t>(lon)}) = 1.0;
  }
  return m;
}

void check_finite(const decoder::GaussianSequence& g, const char* what) {
  for (const Tensor* t : {&g.mu, &g.sigma, &g.rho}) {
    for (double v : t->data()) {
      if (!std::isfinite(v)) throw NumericError(std::string("non-finite output in ") + what);
    }
  }
}

}  // namespace

Prediction predict(const Model& model, const data::GroupWindow& window, const Forcing& force) {
  const ModelConfig& c = model.config();
  const std::size_t F = c.horizon;
  const Inputs in = prepare(window, c);
  ad::Tape tape;
  const Bound b = model.bind(tape);
  const Encoded e = model.encode(b, in);

  Prediction out;
  out.intentions = intention::distribution(e.logits);
  for (const Tensor* t : {&out.intentions.lat, &out.intentions.lon}) {
    for (double v : t->data()) {
      if (!std::isfinite(v)) throw NumericError("non-finite intention probabilities");
    }
  }

  Tensor rows({F, kIntentions});
  for (std::size_t t = 0; t < F; ++t) {
    for (std::size_t k = 0; k < 3; ++k) {
      rows.at({t, k}) = force.lat ? (static_cast<int>(*force.lat) == static_cast<int>(k) ? 1.0 : 0.0)
                                  : out.intentions.lat.at({k, t});
      rows.at({t, 3 + k}) =
          force.lon ? (static_cast<int>(*force.lon) == static_cast<int>(k) ? 1.0 : 0.0)
                    : out.intentions.lon.at({k, t});
    }
  }
  Tensor columns({kIntentions, F});
  for (std::size_t t = 0; t < F; ++t) {
    for (std::size_t m = 0; m < kIntentions; ++m) columns.at({m, t}) = rows.at({t, m});
  }
  decoder::check_weighting(columns);
  out.weighting = columns;
  out.fused = decoder::materialize(model.decode(b, e, tape.constant(rows), in));
  check_finite(out.fused, "fused trajectory");

  const auto probs = decoder::mode_probabilities(out.intentions.lat, out.intentions.lon);
  for (int lat = 0; lat < 3; ++lat) {
    for (int lon = 0; lon < 3; ++lon) {
      auto& mode = out.modes[static_cast<std::size_t>(3 * lat + lon)];
      mode.lat = lat;
      mode.lon = lon;
      mode.probability = probs[static_cast<std::size_t>(3 * lat + lon)];
      mode.trajectory =
          decoder::materialize(model.decode(b, e, tape.constant(forced_rows(F, lat, lon)), in));
      check_finite(mode.trajectory, "forced mode");
    }
  }
  return out;
}

Tensor future_similarity(const Model& model, const data::GroupWindow& window) {
  const ModelConfig& c = model.config();
  if (c.ablation.no_fg) throw ConfigError("the no_fg variant has no future-guided embedding");
  const Inputs in = prepare(window, c);
  ad::Tape tape;
  const Bound b = model.bind(tape);
  const Encoded e = model.encode(b, in);
  const data::SlotMask& last = window.mask.back();
  std::vector<std::vector<bool>> occupied(c.horizon, std::vector<bool>(last.begin(), last.end()));
  return encoder::similarity_rows(e.h_future.value(), occupied);
}

}  // namespace gimtp::model
