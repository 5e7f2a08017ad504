// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance            all criteria
//   acceptance props      1-4, 8, 9
//   acceptance overfit    5-7 (full-size training runs)
#include "gimtp/data.hpp"
#include "gimtp/decoder.hpp"
#include "gimtp/encoder.hpp"
#include "gimtp/graph.hpp"
#include "gimtp/intention.hpp"
#include "gimtp/model.hpp"
#include "gimtp/run_config.hpp"
#include "gimtp/training.hpp"
#include "test_util.hpp"

#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>

using namespace gimtp;
using gimtp::testing::gradient_error;
using gimtp::testing::random_tensor;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

std::vector<ad::Var> constants(ad::Tape& t, const std::vector<Tensor>& ts) {
  std::vector<ad::Var> out;
  for (const auto& x : ts) out.push_back(t.constant(x));
  return out;
}

Tensor random_adjacency(std::mt19937_64& rng, std::size_t T, std::size_t N) {
  Tensor a = random_tensor({T, N, N}, rng, 0.0, 1.0);
  for (double& v : a.data()) {
    if (v < 0.3) v = 0.0;
  }
  return a;
}

// Window with the target and two neighbours (three occupied slots).
data::GroupWindow three_node_window(std::size_t T, std::size_t F) {
  const json scenario = {{"lanes", 3},
                         {"duration", (T + F) / 10.0},
                         {"vehicles",
                          {{{"id", 1}, {"lane", 2}, {"pos_lon", 0.0}, {"speed", 22.0}},
                           {{"id", 2}, {"lane", 1}, {"pos_lon", 12.0}, {"speed", 20.0}},
                           {{"id", 3}, {"lane", 2}, {"pos_lon", -15.0}, {"speed", 25.0}}}},
                         {"maneuvers",
                          {{{"vehicle", 1}, {"kind", "lane_change"}, {"direction", "LLC"}, {"start", 0.0},
                            {"duration", (T + F) / 10.0}}}}};
  data::WindowConfig wc;
  wc.history = T;
  wc.horizon = F;
  wc.targets = {1};
  const auto windows = data::make_windows(data::synth_generate(data::scenario_from_json(scenario), 1), wc);
  if (windows.size() != 1) throw std::runtime_error("three-node scenario must yield one window");
  return windows.front();
}

// Every entry of every parameter, central differences.
std::map<std::string, double> model_gradient_errors(model::Model& m, const model::Inputs& in, int stage) {
  training::TrainConfig cfg;
  auto loss = [&] {
    ad::Tape t;
    return training::window_loss(t, m, in, stage, cfg).total.value().item();
  };
  ad::Tape t;
  t.backward(training::window_loss(t, m, in, stage, cfg).total);
  const std::vector<Tensor> grads = m.store().collect(t);
  std::map<std::string, double> out;
  for (std::size_t p = 0; p < m.store().size(); ++p) {
    Tensor& v = m.store()[p].value;
    double diff = 0.0, scale = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double saved = v[k], eps = 1e-6;
      v[k] = saved + eps;
      const double up = loss();
      v[k] = saved - eps;
      const double down = loss();
      v[k] = saved;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = grads[p].size() ? grads[p][k] : 0.0;
      diff += (numeric - analytic) * (numeric - analytic);
      scale += std::max(numeric * numeric, analytic * analytic);
    }
    out[m.store()[p].name] = scale > 1e-20 ? std::sqrt(diff / scale) : 0.0;
  }
  return out;
}

void criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr std::size_t N = 3, T = 4, F = 3, d = 5;
  std::mt19937_64 rng(2024);
  std::map<std::string, double> block;

  {
    const auto bases = encoder::diffusion_bases(encoder::transition_matrices(random_adjacency(rng, T, N)), 2);
    Tensor w = random_tensor({T, N, d}, rng);
    block["dgcn_layer"] = gradient_error(
        [&](ad::Tape& t, const std::vector<ad::Var>& v) {
          return ad::sum(ad::mul(encoder::dgcn_layer(v[0], constants(t, bases), v[1]), t.constant(w)));
        },
        {random_tensor({T, N, d}, rng), random_tensor({4 * d, d}, rng)}, 1e-6);
    block["residual_stack"] = gradient_error(
        [&](ad::Tape& t, const std::vector<ad::Var>& v) {
          return ad::sum(ad::mul(encoder::encode_stack(v[0], constants(t, bases), {v[1], v[2], v[3]}), t.constant(w)));
        },
        {random_tensor({T, N, d}, rng), random_tensor({4 * d, d}, rng), random_tensor({4 * d, d}, rng),
         random_tensor({4 * d, d}, rng)},
        1e-6);
  }
  {
    const std::size_t L = T + F;
    auto dense_of = [](const std::vector<ad::Var>& v, std::size_t i) { return layers::Dense{v[i], v[i + 1]}; };
    const std::array<std::vector<int>, 2> labels = {std::vector<int>{1, 1, 0}, std::vector<int>{2, 0, 0}};
    block["intention_heads"] = gradient_error(
        [&](ad::Tape&, const std::vector<ad::Var>& v) {
          intention::Params p;
          p.aggregate = dense_of(v, 1);
          p.time_map = v[3];
          p.project = dense_of(v, 4);
          p.lat_hidden = dense_of(v, 6);
          p.lat_out = dense_of(v, 8);
          p.lon_hidden = dense_of(v, 10);
          p.lon_out = dense_of(v, 12);
          return training::nll_intention(intention::predict(intention::aggregate(v[0], p.aggregate, std::nullopt, 0.1), p),
                                         labels);
        },
        {random_tensor({L, N, d}, rng), random_tensor({N * d, d}, rng), random_tensor({d}, rng),
         random_tensor({F, L}, rng), random_tensor({d, d}, rng), random_tensor({d}, rng), random_tensor({d, d}, rng),
         random_tensor({d}, rng), random_tensor({d, 3}, rng), random_tensor({3}, rng), random_tensor({d, d}, rng),
         random_tensor({d}, rng), random_tensor({d, 3}, rng), random_tensor({3}, rng)},
        1e-6);

    Tensor rows = random_tensor({F, 6}, rng, 0.05, 1.0);
    for (std::size_t t = 0; t < F; ++t) {
      for (std::size_t b = 0; b < 2; ++b) {
        double s = 0.0;
        for (std::size_t r = 0; r < 3; ++r) s += rows.at({t, 3 * b + r});
        for (std::size_t r = 0; r < 3; ++r) rows.at({t, 3 * b + r}) /= s;
      }
    }
    Tensor w = random_tensor({F, d}, rng);
    block["fusion"] = gradient_error(
        [&](ad::Tape& t, const std::vector<ad::Var>& v) {
          return ad::sum(ad::mul(decoder::fuse(v[0], t.constant(rows), v[1]), t.constant(w)));
        },
        {random_tensor({L, d}, rng), random_tensor({L, F, 6}, rng)}, 1e-6);

    const Tensor target = random_tensor({F, 2}, rng, -2, 2);
    Tensor cumulative({F, F});
    for (std::size_t i = 0; i < F; ++i) {
      for (std::size_t j = 0; j <= i; ++j) cumulative.at({i, j}) = 1.0;
    }
    block["recurrent_decoder"] = gradient_error(
        [&](ad::Tape& t, const std::vector<ad::Var>& v) {
          decoder::Params p;
          p.input = dense_of(v, 1);
          p.gru.z = dense_of(v, 3);
          p.gru.r = dense_of(v, 5);
          p.gru.n = dense_of(v, 7);
          p.gru.uz = v[9];
          p.gru.ur = v[10];
          p.gru.un = v[11];
          p.hidden = dense_of(v, 12);
          p.out = dense_of(v, 14);
          const decoder::Gaussian g =
              decoder::gaussian(decoder::decode(v[0], t.constant(rows), p), cumulative, Tensor({F, 2}));
          return training::nll_traj(g, target);
        },
        {random_tensor({F, d}, rng), random_tensor({d + 6, d}, rng, -0.5, 0.5), random_tensor({d}, rng),
         random_tensor({d, d}, rng, -0.5, 0.5), random_tensor({d}, rng), random_tensor({d, d}, rng, -0.5, 0.5),
         random_tensor({d}, rng), random_tensor({d, d}, rng, -0.5, 0.5), random_tensor({d}, rng),
         random_tensor({d, d}, rng, -0.5, 0.5), random_tensor({d, d}, rng, -0.5, 0.5),
         random_tensor({d, d}, rng, -0.5, 0.5), random_tensor({d, d}, rng, -0.5, 0.5), random_tensor({d}, rng),
         random_tensor({d, 5}, rng, -0.5, 0.5), random_tensor({5}, rng)},
        1e-6);
  }

  // Whole model, every parameter entry, both loss stages and the ablation wiring.
  const data::GroupWindow window = three_node_window(T, F);
  std::size_t occupied = 0;
  for (bool b : window.mask.back()) occupied += b;
  for (const auto& [tag, ablation] : std::vector<std::pair<std::string, model::Ablation>>{
           {"full", {}}, {"no_dgcn+no_ff", {true, false, true}}, {"no_fg", {false, true, false}}}) {
    model::ModelConfig c;
    c.history = T;
    c.horizon = F;
    c.dgcn_width = c.mlp_width = c.gru_width = c.decoder_width = d;
    c.ablation = ablation;
    c.normalization = model::fit_normalization({window});
    model::Model m(c, 17);
    const model::Inputs in = model::prepare(window, c);
    for (int stage : {1, 2}) {
      for (const auto& [name, err] : model_gradient_errors(m, in, stage)) {
        const std::string key = tag + "/stage" + std::to_string(stage) + "/" + name;
        block[key] = err;
      }
    }
  }

  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, err] : block) {
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  }
  const double elapsed = seconds_since(t0);
  report(1, worst < 1e-4 && elapsed < 60.0 && occupied == N,
         std::to_string(block.size()) + " blocks/parameters checked on N=" + std::to_string(occupied) +
             " T=4 F=3 d=5; worst relative error " + fmt("%.2e", worst) + " (" + worst_name + "); " +
             fmt("%.1f s", elapsed));
}

// ---------------------------------------------------------------------------
// 2. Adjacency properties

data::GroupWindow random_window(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> steps(2, 6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  data::GroupWindow w;
  const std::size_t T = steps(rng);
  w.history = T;
  w.features = Tensor({T, data::kSlots, data::kFeatures});
  w.mass = Tensor({T, data::kSlots});
  w.mask.assign(T, {});
  const double p_occupied = u(rng);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t s = 0; s < data::kSlots; ++s) {
      if (s != 0 && u(rng) > p_occupied) continue;
      w.mask[t][s] = true;
      const auto cell = data::kSlotGrid[s];
      w.features.at({t, s, data::kPosLon}) = (1 - cell.lon) * (5.0 + 40.0 * u(rng));
      w.features.at({t, s, data::kPosLat}) = (cell.lane - 1) * 3.7 + (u(rng) - 0.5);
      // Occasional exact ties exercise the zero-relative-velocity gate.
      w.features.at({t, s, data::kVelLon}) = u(rng) < 0.1 ? 20.0 : 10.0 + 25.0 * u(rng);
      w.features.at({t, s, data::kVelLat}) = u(rng) < 0.1 ? 0.0 : 2.0 * (u(rng) - 0.5);
      w.features.at({t, s, data::kOccupied}) = 1.0;
      w.mass.at({t, s}) = u(rng) < 0.2 ? 2.5 : 1.0;
    }
  }
  return w;
}

double population_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

void criterion_adjacency() {
  std::mt19937_64 rng(77);
  std::size_t bad_range = 0, bad_sym = 0, bad_empty = 0, bad_risk = 0, bad_gate = 0, gated = 0, pairs = 0;
  for (int n = 0; n < 1000; ++n) {
    const data::GroupWindow w = random_window(rng);
    const graph::DynamicAdjacency a = graph::build_adjacency(w);
    for (std::size_t t = 0; t < w.history; ++t) {
      // Brute-force forces over ordered occupied pairs.
      double force[data::kSlots][data::kSlots] = {};
      std::vector<double> all;
      for (std::size_t i = 0; i < data::kSlots; ++i) {
        for (std::size_t j = 0; j < data::kSlots; ++j) {
          if (i == j || !w.mask[t][i] || !w.mask[t][j]) continue;
          double axis[2] = {0.0, 0.0};
          for (int k = 0; k < 2; ++k) {
            const std::size_t pos = k == 0 ? data::kPosLon : data::kPosLat;
            const std::size_t vel = k == 0 ? data::kVelLon : data::kVelLat;
            const double si = w.features.at({t, i, vel}), sj = w.features.at({t, j, vel});
            const double gap = std::max(std::abs(w.features.at({t, i, pos}) - w.features.at({t, j, pos})), graph::kMinGap);
            if (si - sj > 0.0) axis[k] = std::abs(0.5 * w.mass.at({t, i}) * si * (si - sj) / gap);
          }
          force[i][j] = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1]);
          all.push_back(force[i][j]);
          ++pairs;
          const double rel_lon = w.features.at({t, i, data::kVelLon}) - w.features.at({t, j, data::kVelLon});
          const double rel_lat = w.features.at({t, i, data::kVelLat}) - w.features.at({t, j, data::kVelLat});
          graph::RiskState si{w.features.at({t, i, 0}), w.features.at({t, i, 1}), w.features.at({t, i, 2}),
                              w.features.at({t, i, 3}), w.mass.at({t, i})};
          graph::RiskState sj{w.features.at({t, j, 0}), w.features.at({t, j, 1}), w.features.at({t, j, 2}),
                              w.features.at({t, j, 3}), w.mass.at({t, j})};
          const graph::RiskForce f = graph::risk_force(si, sj);
          if (rel_lon <= 0.0) {
            ++gated;
            bad_gate += f.lon != 0.0;
          }
          if (rel_lat <= 0.0) {
            ++gated;
            bad_gate += f.lat != 0.0;
          }
          if (rel_lon <= 0.0 && rel_lat <= 0.0) bad_gate += a.risk.at({t, i, j}) != 0.0;
        }
      }
      const double sigma = all.size() >= 2 ? population_std(all) : 0.0;
      for (std::size_t i = 0; i < data::kSlots; ++i) {
        for (std::size_t j = 0; j < data::kSlots; ++j) {
          const double c = a.combined.at({t, i, j});
          bad_range += !(c >= 0.0 && c <= 1.0);
          bad_sym += a.neigh.at({t, i, j}) != a.neigh.at({t, j, i});
          bad_sym += a.dist.at({t, i, j}) != a.dist.at({t, j, i});
          if (!w.mask[t][i] || !w.mask[t][j]) {
            for (const Tensor* m : {&a.combined, &a.neigh, &a.dist, &a.risk}) bad_empty += m->at({t, i, j}) != 0.0;
          }
          double want = 0.0;
          if (i != j && w.mask[t][i] && w.mask[t][j] && sigma > 0.0) want = std::tanh(force[i][j] / sigma);
          bad_risk += std::abs(a.risk.at({t, i, j}) - want) > 1e-12;
        }
      }
    }
  }
  report(2, bad_range + bad_sym + bad_empty + bad_risk + bad_gate == 0 && gated > 0,
         "1000 random windows, " + std::to_string(pairs) + " ordered pairs, " + std::to_string(gated) +
             " gated axes; violations: range " + std::to_string(bad_range) + ", symmetry " + std::to_string(bad_sym) +
             ", empty slots " + std::to_string(bad_empty) + ", risk oracle " + std::to_string(bad_risk) + ", gating " +
             std::to_string(bad_gate));
}

// ---------------------------------------------------------------------------
// 3. Chebyshev and transition oracles

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0);
  Tensor c({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t j = 0; j < n; ++j) c.at({i, j}) += a.at({i, k}) * b.at({k, j});
    }
  }
  return c;
}

void criterion_chebyshev() {
  // Power-basis coefficients of T_0..T_4.
  const std::vector<std::vector<double>> coeff = {
      {1}, {0, 1}, {-1, 0, 2}, {0, -3, 0, 4}, {1, 0, -8, 0, 8}};
  std::mt19937_64 rng(5);
  double worst_cheb = 0.0, worst_row = 0.0;
  std::size_t zero_rows = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 9;
    const Tensor x = random_tensor({n, n}, rng, -1.0, 1.0);
    std::vector<Tensor> powers = {Tensor::identity(n)};
    for (int k = 1; k <= 4; ++k) powers.push_back(matmul(powers.back(), x));
    for (std::size_t k = 0; k <= 4; ++k) {
      Tensor direct({n, n});
      for (std::size_t p = 0; p < coeff[k].size(); ++p) {
        for (std::size_t e = 0; e < n * n; ++e) direct[e] += coeff[k][p] * powers[p][e];
      }
      worst_cheb = std::max(worst_cheb, max_abs_diff(encoder::chebyshev(k, x), direct));
    }

    // Nonnegative adjacency with some all-zero rows (and columns).
    const std::size_t T = 1 + rng() % 4;
    Tensor a = random_adjacency(rng, T, n);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < n; ++i) {
        if (rng() % 3 != 0) continue;
        for (std::size_t j = 0; j < n; ++j) a.at({t, i, j}) = 0.0;
        ++zero_rows;
      }
    }
    const encoder::TransitionPair p = encoder::transition_matrices(a);
    for (const Tensor* m : {&p.forward, &p.backward}) {
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double v = m->at({t, i, j});
            if (v < 0.0) worst_row = std::max(worst_row, 1.0);
            s += v;
          }
          worst_row = std::max(worst_row, std::abs(s - 1.0));
        }
      }
    }
  }
  report(3, worst_cheb < 1e-10 && worst_row < 1e-12,
         "300 random matrices: recurrence vs power expansion k<=4 max error " + fmt("%.2e", worst_cheb) +
             "; transition row-sum error " + fmt("%.2e", worst_row) + " with " + std::to_string(zero_rows) +
             " forced all-zero rows");
}

// ---------------------------------------------------------------------------
// 4. Loss closed forms

void criterion_losses() {
  constexpr std::size_t F = 7;
  std::mt19937_64 rng(9);
  const Tensor y = random_tensor({F, 2}, rng, -5, 5);
  ad::Tape t;
  decoder::Gaussian g{t.constant(y), t.constant(Tensor({F, 2})), t.constant(Tensor({F, 1}))};
  const double nll = training::nll_traj(g, y).value().item();
  const double nll_err = std::abs(nll - F * std::log(2.0 * M_PI));

  intention::Logits uniform{t.constant(Tensor({F, 3})), t.constant(Tensor({F, 3}))};
  std::array<std::vector<int>, 2> labels;
  for (std::size_t s = 0; s < F; ++s) {
    labels[0].push_back(static_cast<int>(s % 3));
    labels[1].push_back(static_cast<int>((s + 1) % 3));
  }
  const double ce_err = std::abs(training::nll_intention(uniform, labels).value().item() - 2.0 * std::log(3.0));

  Tensor shifted = y;
  for (std::size_t s = 0; s < F; ++s) shifted.at({s, 0}) += 1.0;
  const double mse_err = std::abs(training::mse_loss(t.constant(shifted), y).value().item() - 1.0);

  report(4, nll_err <= 1e-9 && ce_err <= 1e-9 && mse_err <= 1e-12,
         "|nll_traj - F log 2pi| = " + fmt("%.1e", nll_err) + ", |CE - 2 ln 3| = " + fmt("%.1e", ce_err) +
             ", |MSE - 1| = " + fmt("%.1e", mse_err));
}

// ---------------------------------------------------------------------------
// 8. Determinism (CLI end to end)

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(GIMTP_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void criterion_determinism(const fs::path& dir) {
  const json config = {{"data", {{"benchmark", {{"count", 8}, {"seed", 4}}}}},
                       {"model", {{"dgcn_width", 32}, {"mlp_width", 32}, {"gru_width", 32}, {"decoder_width", 32}}},
                       {"train", {{"epochs", 3}, {"stage1_epochs", 1}, {"batch_size", 4}}},
                       {"seed", 11}};
  {
    std::ofstream out(dir / "determinism.json");
    out << config.dump(1);
  }
  const std::string base = "train --config " + (dir / "determinism.json").string() + " --out ";
  const int a = run_cli(base + (dir / "det_a.ckpt").string(), dir / "det_a.log");
  const int b = run_cli(base + (dir / "det_b.ckpt").string(), dir / "det_b.log");
  const std::string cmd = "GIMTP_THREADS=3 " + std::string(GIMTP_CLI) + " " + base + (dir / "det_c.ckpt").string() +
                          " > " + (dir / "det_c.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  const int threaded = WIFEXITED(status) ? WEXITSTATUS(status) : -1;

  const std::string ca = slurp(dir / "det_a.ckpt"), cb = slurp(dir / "det_b.ckpt"), cc = slurp(dir / "det_c.ckpt");
  const std::string ma = slurp(dir / "det_a.ckpt.metrics.jsonl"), mb = slurp(dir / "det_b.ckpt.metrics.jsonl"),
                    mc = slurp(dir / "det_c.ckpt.metrics.jsonl");
  const bool ok = a == 0 && b == 0 && threaded == 0 && !ca.empty() && !ma.empty() && ca == cb && ma == mb &&
                  ca == cc && ma == mc;
  report(8, ok,
         "two CLI training runs (same config and seed) plus one with 3 workers: checkpoints " +
             std::string(ca == cb && ca == cc ? "byte-identical" : "DIFFER") + " (" + std::to_string(ca.size()) +
             " bytes), metric logs " + (ma == mb && ma == mc ? "byte-identical" : "DIFFER"));
}

// ---------------------------------------------------------------------------
// 9. Mode probabilities and fusion weights

void criterion_normalization() {
  model::ModelConfig c;
  c.history = 6;
  c.horizon = 5;
  c.dgcn_width = 6;
  c.mlp_width = 6;
  c.gru_width = 6;
  c.decoder_width = 4;
  const auto windows = data::benchmark_windows(18, 21, c.history, c.horizon);
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> log_scale(std::log(0.1), std::log(4.0));
  double worst_modes = 0.0, worst_fusion = 0.0, worst_weighting = 0.0;
  for (int draw = 0; draw < 1000; ++draw) {
    model::Model m(c, 1000 + static_cast<std::uint64_t>(draw));
    const double s = std::exp(log_scale(rng));
    for (std::size_t p = 0; p < m.store().size(); ++p) {
      for (double& v : m.store()[p].value.data()) v *= s;
    }
    const data::GroupWindow& w = windows[static_cast<std::size_t>(draw) % windows.size()];
    const model::Prediction pred = model::predict(m, w);
    double total = 0.0;
    for (const auto& mode : pred.modes) total += mode.probability;
    worst_modes = std::max(worst_modes, std::abs(total - 1.0));
    for (std::size_t t = 0; t < c.horizon; ++t) {
      for (std::size_t b = 0; b < 2; ++b) {
        double block = 0.0;
        for (std::size_t r = 0; r < 3; ++r) block += pred.weighting.at({3 * b + r, t});
        worst_weighting = std::max(worst_weighting, std::abs(block - 1.0));
      }
    }

    ad::Tape tape;
    const model::Bound bound = m.bind(tape);
    const model::Encoded enc = m.encode(bound, model::prepare(w, c));
    const Tensor u = decoder::fusion_weights(bound.decoder.w_map, model::predicted_rows(enc.logits)).value();
    for (std::size_t t = 0; t < u.dim(1); ++t) {
      double col = 0.0;
      for (std::size_t l = 0; l < u.dim(0); ++l) col += u.at({l, t});
      worst_fusion = std::max(worst_fusion, std::abs(col - 1.0));
    }
  }
  report(9, worst_modes <= 1e-9 && worst_fusion <= 1e-9 && worst_weighting <= 1e-9,
         "1000 parameter draws: max |sum mode prob - 1| = " + fmt("%.1e", worst_modes) +
             ", max |sum fusion weight - 1| = " + fmt("%.1e", worst_fusion) +
             ", max intention-block deviation = " + fmt("%.1e", worst_weighting));
}

// ---------------------------------------------------------------------------
// 5-7. Overfit benchmark

const json kOverfitConfig = {{"data", {{"benchmark", {{"count", 32}, {"seed", 1}}}}},
                             {"train", {{"epochs", 300}, {"batch_size", 1}}},
                             {"seed", 3}};

struct OverfitRun {
  model::Model model;
  training::EvalReport report;
  training::EpochRecord last;
  double seconds = 0.0;
};

OverfitRun overfit(const model::Ablation& ablation, const std::string& tag, const fs::path& dir) {
  run::RunConfig rc = run::parse(kOverfitConfig);
  rc.model.ablation = ablation;
  const auto windows = run::load_windows(rc.data, rc.model.history, rc.model.horizon);
  if (rc.train.fit_normalization) rc.model.normalization = model::fit_normalization(windows);
  OverfitRun out{model::Model(rc.model, rc.seed), {}, {}, 0.0};
  training::TrainState state;
  std::ofstream log(dir / (tag + ".metrics.jsonl"));
  const auto t0 = std::chrono::steady_clock::now();
  training::train(out.model, windows, rc.train, state, [&](const training::EpochRecord& r) {
    log << training::to_json(r).dump() << '\n';
    log.flush();
    out.last = r;
  });
  out.seconds = seconds_since(t0);
  training::save(dir / (tag + ".ckpt"), out.model, rc.train, state);
  out.report = training::evaluate(out.model, windows);
  std::ofstream(dir / (tag + ".eval.json")) << training::to_json(out.report).dump(1) << '\n';
  std::printf("  [%s] %.0f s, final loss %.4f, fg_mse %.2e, rmse", tag.c_str(), out.seconds, out.last.loss,
              out.last.fg_mse);
  for (const auto& [h, v] : out.report.rmse) std::printf(" %zu:%.3f", h, v);
  std::printf(", accuracy %.4f/%.4f\n", out.report.accuracy_lat, out.report.accuracy_lon);
  std::fflush(stdout);
  return out;
}

std::string rmse_text(const training::EvalReport& r) {
  std::string s;
  for (const auto& [h, v] : r.rmse) s += (s.empty() ? "" : " ") + std::to_string(h) + ":" + fmt("%.3f", v);
  return s;
}

void criteria_overfit(const fs::path& dir) {
  OverfitRun full = overfit({}, "full", dir);

  double worst = 0.0;
  for (const auto& [h, v] : full.report.rmse) worst = std::max(worst, v);
  const bool rmse_ok = worst < 0.3 && full.report.rmse.size() == 5;
  const bool acc_ok = full.report.accuracy_lat == 1.0 && full.report.accuracy_lon == 1.0;
  const bool time_ok = full.seconds < 600.0;
  report(5, rmse_ok && acc_ok && time_ok,
         "RMSE [" + rmse_text(full.report) + "] m (need < 0.3 each: " + (rmse_ok ? "ok" : "NO") +
             "), accuracy " + fmt("%.4f", full.report.accuracy_lat) + "/" + fmt("%.4f", full.report.accuracy_lon) +
             " (need 1.0: " + (acc_ok ? "ok" : "NO") + "), training " + fmt("%.0f s", full.seconds) +
             " (need < 600 s: " + (time_ok ? "ok" : "NO") + ")");

  // 6. Lateral ordering of forced modes on every LLC window, for every
  // longitudinal intention.
  const run::RunConfig rc = run::parse(kOverfitConfig);
  const auto windows = run::load_windows(rc.data, rc.model.history, rc.model.horizon);
  std::size_t llc = 0, ordered = 0;
  for (const auto& w : windows) {
    bool has_llc = false;
    for (std::size_t t = 0; t < w.horizon; ++t) has_llc |= w.intentions.lateral(t) == data::LateralIntention::kLeftChange;
    if (!has_llc) continue;
    ++llc;
    const model::Prediction p = model::predict(full.model, w);
    const double sign = w.orientation.left_sign();
    auto left = [&](data::LateralIntention lat, int lon) {
      return sign * p.modes[static_cast<std::size_t>(3 * static_cast<int>(lat) + lon)].trajectory.mu.at(
                        {w.horizon - 1, 1});
    };
    bool ok = true;
    for (int lon = 0; lon < 3; ++lon) {
      ok = ok && left(data::LateralIntention::kLeftChange, lon) > left(data::LateralIntention::kLaneKeep, lon) &&
           left(data::LateralIntention::kLaneKeep, lon) > left(data::LateralIntention::kRightChange, lon);
    }
    ordered += ok;
  }
  report(6, llc > 0 && ordered == llc,
         std::to_string(ordered) + "/" + std::to_string(llc) +
             " left-lane-change windows with terminal lateral order LLC > LK > RLC under every longitudinal mode");

  // 7. Ablation direction, judged on the overall (50-frame) RMSE.
  const double full_rmse = full.report.rmse.back().second;
  std::string detail = "overall RMSE full " + fmt("%.3f", full_rmse);
  bool ok = true;
  for (const auto& [tag, ablation] : std::vector<std::pair<std::string, model::Ablation>>{
           {"no_dgcn", {true, false, false}}, {"no_fg", {false, true, false}}, {"no_ff", {false, false, true}}}) {
    const OverfitRun r = overfit(ablation, tag, dir);
    const double v = r.report.rmse.back().second;
    ok = ok && full_rmse <= v;
    detail += ", " + tag + " " + fmt("%.3f", v) + (full_rmse <= v ? "" : " (better than full)");
  }
  report(7, ok, detail);
}

}  // namespace

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "all";
  if (mode != "all" && mode != "props" && mode != "overfit") {
    std::fprintf(stderr, "usage: acceptance [all|props|overfit]\n");
    return 2;
  }
  const fs::path dir = fs::current_path() / "acceptance_out";
  fs::create_directories(dir);
  try {
    if (mode != "overfit") {
      criterion_gradients();
      criterion_adjacency();
      criterion_chebyshev();
      criterion_losses();
    }
    if (mode != "props") criteria_overfit(dir);
    if (mode != "overfit") {
      criterion_determinism(dir);
      criterion_normalization();
    }
  } catch (const std::exception& e) {
    std::printf("FAIL aborted: %s\n", e.what());
    return 1;
  }
  return failures == 0 ? 0 : 1;
}
