// gimtp command-line entry point: synth, train, predict, eval, graph.
#include "gimtp/data.hpp"
#include "gimtp/errors.hpp"
#include "gimtp/graph.hpp"
#include "gimtp/model.hpp"
#include "gimtp/run_config.hpp"
#include "gimtp/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

using nlohmann::json;
namespace fs = std::filesystem;
using namespace gimtp;

json tensor_json(const Tensor& t) {
  if (t.rank() == 0) return t.item();
  if (t.rank() == 1) return json(std::vector<double>(t.data().begin(), t.data().end()));
  json out = json::array();
  const std::size_t inner = t.size() / t.dim(0);
  Shape sub(t.shape().begin() + 1, t.shape().end());
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    std::vector<double> block(t.raw() + i * inner, t.raw() + (i + 1) * inner);
    out.push_back(tensor_json(Tensor(sub, std::move(block))));
  }
  return out;
}

json gaussian_json(const decoder::GaussianSequence& g) {
  return json{{"mu", tensor_json(g.mu)}, {"sigma", tensor_json(g.sigma)}, {"rho", tensor_json(g.rho)}};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

// Windows for predict/eval/graph: --config data section, or --data CSV with an
// optional --manifest.
struct DataArgs {
  std::string config;
  std::string csv;
  std::string manifest;
};

std::vector<data::GroupWindow> windows_for(const DataArgs& a, std::size_t history, std::size_t horizon) {
  run::DataSource src;
  if (!a.config.empty()) {
    src = run::load(a.config).data;
  } else if (!a.csv.empty()) {
    src.csv = a.csv;
    if (!a.manifest.empty()) {
      std::ifstream in(a.manifest);
      if (!in) throw IoError("cannot open manifest " + a.manifest);
      json j;
      try {
        in >> j;
      } catch (const json::exception& e) {
        throw ConfigError("malformed manifest JSON: " + std::string(e.what()));
      }
      src.manifest = data::manifest_from_json(j);
    }
  } else {
    throw UsageError("give --config or --data");
  }
  return run::load_windows(src, history, horizon);
}

void add_data_options(CLI::App* cmd, DataArgs& a) {
  cmd->add_option("--config", a.config, "Run config whose data section selects the windows");
  cmd->add_option("--data", a.csv, "Trajectory CSV");
  cmd->add_option("--manifest", a.manifest, "Dataset manifest JSON for --data");
}

int cmd_synth(const std::string& spec_path, std::uint64_t seed, const std::string& out_path) {
  std::ifstream in(spec_path);
  if (!in) throw IoError("cannot open scenario " + spec_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed scenario JSON: " + std::string(e.what()));
  }
  const data::TrackSet tracks = data::synth_generate(data::scenario_from_json(j), seed);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw IoError("cannot write " + out_path);
  data::write_csv(out, tracks);
  if (!out) throw IoError("failed writing " + out_path);
  return 0;
}

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool no_dgcn = false, no_fg = false, no_ff = false;
};

int cmd_train(const TrainArgs& a) {
  run::RunConfig rc = run::load(a.config);
  if (a.seed) {
    rc.seed = *a.seed;
    rc.train.seed = *a.seed;
  }
  if (!a.out.empty()) {
    rc.checkpoint = a.out;
    rc.metrics = a.out + ".metrics.jsonl";
  }
  rc.model.ablation.no_dgcn |= a.no_dgcn;
  rc.model.ablation.no_fg |= a.no_fg;
  rc.model.ablation.no_ff |= a.no_ff;

  const auto windows = run::load_windows(rc.data, rc.model.history, rc.model.horizon);
  if (windows.empty()) throw UsageError("the data source yields no windows");

  std::optional<model::Model> model;
  training::TrainState state;
  std::ios::openmode mode = std::ios::trunc;
  if (rc.resume) {
    training::Loaded loaded = training::load(*rc.resume);
    model.emplace(std::move(loaded.model));
    state = loaded.state;
    mode = std::ios::app;
  } else {
    if (rc.train.fit_normalization) rc.model.normalization = model::fit_normalization(windows);
    model.emplace(rc.model, rc.seed);
  }

  std::ofstream log(rc.metrics, mode);
  if (!log) throw IoError("cannot write " + rc.metrics.string());
  training::train(*model, windows, rc.train, state, [&](const training::EpochRecord& r) {
    log << training::to_json(r).dump() << '\n';
    log.flush();
    std::cerr << "epoch " << r.epoch << " stage " << r.stage << " loss " << r.loss << '\n';
  });
  training::save(rc.checkpoint, *model, rc.train, state);
  return 0;
}

struct PredictArgs {
  std::string checkpoint;
  DataArgs data;
  std::string out;
  std::string force_lat, force_lon;
};

int cmd_predict(const PredictArgs& a) {
  const training::Loaded loaded = training::load(a.checkpoint);
  const auto& mc = loaded.model.config();
  model::Forcing force;
  if (!a.force_lat.empty()) force.lat = data::lateral_from_string(a.force_lat);
  if (!a.force_lon.empty()) force.lon = data::longitudinal_from_string(a.force_lon);
  json records = json::array();
  for (const auto& w : windows_for(a.data, mc.history, mc.horizon)) {
    const model::Prediction p = model::predict(loaded.model, w, force);
    json modes = json::array();
    for (const auto& m : p.modes) {
      modes.push_back({{"lat", data::to_string(static_cast<data::LateralIntention>(m.lat))},
                       {"lon", data::to_string(static_cast<data::LongitudinalIntention>(m.lon))},
                       {"probability", m.probability},
                       {"trajectory", gaussian_json(m.trajectory)}});
    }
    records.push_back({{"target_id", w.target_id},
                       {"frame_T", w.frame_T},
                       {"origin", w.origin},
                       {"intentions", {{"lat", tensor_json(p.intentions.lat)}, {"lon", tensor_json(p.intentions.lon)}}},
                       {"weighting", tensor_json(p.weighting)},
                       {"fused", gaussian_json(p.fused)},
                       {"modes", modes}});
  }
  write_json(a.out, records);
  return 0;
}

int cmd_eval(const std::string& checkpoint, const DataArgs& d, const std::string& out) {
  const training::Loaded loaded = training::load(checkpoint);
  const auto& mc = loaded.model.config();
  const auto windows = windows_for(d, mc.history, mc.horizon);
  write_json(out, training::to_json(training::evaluate(loaded.model, windows)));
  return 0;
}

struct GraphArgs {
  DataArgs data;
  std::optional<std::size_t> window;
  std::string out;
  bool future = false;
  std::string checkpoint;
};

int cmd_graph(const GraphArgs& a) {
  std::optional<training::Loaded> loaded;
  std::size_t history = 30, horizon = 50;
  if (a.future) {
    if (a.checkpoint.empty()) throw UsageError("--future needs --checkpoint");
    loaded.emplace(training::load(a.checkpoint));
    history = loaded->model.config().history;
    horizon = loaded->model.config().horizon;
  } else if (!a.data.config.empty()) {
    const run::RunConfig rc = run::load(a.data.config);
    history = rc.model.history;
    horizon = rc.model.horizon;
  } else if (!a.data.manifest.empty()) {
    std::ifstream in(a.data.manifest);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("malformed manifest JSON: " + std::string(e.what()));
    }
    const auto m = data::manifest_from_json(j);
    history = m.history;
    horizon = m.horizon;
  }
  const auto windows = windows_for(a.data, history, horizon);
  if (a.window && *a.window >= windows.size()) {
    throw UsageError("window " + std::to_string(*a.window) + " out of range (" +
                     std::to_string(windows.size()) + " windows)");
  }
  json dumps = json::array();
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (a.window && *a.window != i) continue;
    const auto adj = graph::build_adjacency(windows[i]);
    json rec{{"index", i},
             {"target_id", windows[i].target_id},
             {"frame_T", windows[i].frame_T},
             {"neigh", tensor_json(adj.neigh)},
             {"dist", tensor_json(adj.dist)},
             {"risk", tensor_json(adj.risk)},
             {"combined", tensor_json(adj.combined)},
             {"sigma_dist", adj.sigma_dist},
             {"sigma_force", adj.sigma_force}};
    if (a.future) rec["future"] = tensor_json(model::future_similarity(loaded->model, windows[i]));
    dumps.push_back(std::move(rec));
  }
  write_json(a.out, json{{"windows", dumps}});
  return 0;
}

int exit_code(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UsageError*>(&e) ||
      dynamic_cast<const SchemaError*>(&e) || dynamic_cast<const IoError*>(&e)) {
    return 2;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GIMTP trajectory prediction"};
  app.require_subcommand(1);

  std::string synth_spec, synth_out;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic trajectory CSV");
  synth->add_option("--config", synth_spec, "Scenario JSON")->required();
  synth->add_option("--seed", synth_seed, "Random seed");
  synth->add_option("--out", synth_out, "Output CSV")->required();

  TrainArgs targs;
  auto* train = app.add_subcommand("train", "Train a model from a run config");
  train->add_option("--config", targs.config, "Run config JSON")->required();
  train->add_option("--seed", targs.seed, "Override the seed");
  train->add_option("--out", targs.out, "Checkpoint path (metrics go to PATH.metrics.jsonl)");
  train->add_flag("--no-dgcn", targs.no_dgcn, "Use plain GCN layers");
  train->add_flag("--no-fg", targs.no_fg, "Drop the future-guided branch");
  train->add_flag("--no-ff", targs.no_ff, "Replace feature fusion with a dense map");

  PredictArgs pargs;
  auto* predict = app.add_subcommand("predict", "Write per-window multimodal predictions");
  predict->add_option("--checkpoint", pargs.checkpoint, "Checkpoint")->required();
  add_data_options(predict, pargs.data);
  predict->add_option("--out", pargs.out, "Output JSON")->required();
  predict->add_option("--force-lat", pargs.force_lat, "Force the lateral intention")
      ->check(CLI::IsMember({"LK", "LLC", "RLC"}));
  predict->add_option("--force-lon", pargs.force_lon, "Force the longitudinal intention")
      ->check(CLI::IsMember({"CS", "ACC", "DEC"}));

  std::string eval_ckpt, eval_out;
  DataArgs eval_data;
  auto* eval = app.add_subcommand("eval", "Write an evaluation report");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint")->required();
  add_data_options(eval, eval_data);
  eval->add_option("--out", eval_out, "Output JSON")->required();

  GraphArgs gargs;
  auto* graph_cmd = app.add_subcommand("graph", "Dump dynamic adjacency matrices");
  add_data_options(graph_cmd, gargs.data);
  graph_cmd->add_option("--window", gargs.window, "Window index (default: all)");
  graph_cmd->add_option("--out", gargs.out, "Output JSON")->required();
  graph_cmd->add_flag("--future", gargs.future, "Include the future-guided similarity matrices");
  graph_cmd->add_option("--checkpoint", gargs.checkpoint, "Checkpoint for --future");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) return cmd_synth(synth_spec, synth_seed, synth_out);
    if (*train) return cmd_train(targs);
    if (*predict) return cmd_predict(pargs);
    if (*eval) return cmd_eval(eval_ckpt, eval_data, eval_out);
    if (*graph_cmd) return cmd_graph(gargs);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
