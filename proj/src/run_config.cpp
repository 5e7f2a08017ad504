#include "gimtp/run_config.hpp"

#include "gimtp/errors.hpp"
#include "gimtp/json_util.hpp"

#include <fstream>

namespace gimtp::run {

using nlohmann::json;

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

DataSource parse_data(const json& j, const std::filesystem::path& base) {
  reject_unknown(j, {"csv", "manifest", "targets", "benchmark"}, "data");
  DataSource d;
  if (j.contains("csv") == j.contains("benchmark")) {
    throw ConfigError("data needs exactly one of 'csv' or 'benchmark'");
  }
  if (j.contains("manifest")) d.manifest = data::manifest_from_json(j.at("manifest"));
  if (j.contains("csv")) d.csv = resolve(base, j.at("csv").get<std::string>());
  if (j.contains("targets")) d.targets = j.at("targets").get<std::vector<data::VehicleId>>();
  if (j.contains("benchmark")) {
    const json& b = j.at("benchmark");
    reject_unknown(b, {"count", "seed"}, "data.benchmark");
    d.benchmark_count = b.value("count", std::size_t{32});
    d.benchmark_seed = b.value("seed", std::uint64_t{0});
    if (d.benchmark_count == 0) throw ConfigError("data.benchmark.count must be positive");
  }
  return d;
}

}  // namespace

RunConfig parse(const json& j, const std::filesystem::path& base) {
  reject_unknown(j, {"data", "model", "train", "output", "resume", "seed"}, "run config");
  RunConfig c;
  try {
    if (!j.contains("data")) throw ConfigError("run config needs a 'data' section");
    c.data = parse_data(j.at("data"), base);
    c.model = model::config_from_json(j.value("model", json::object()));
    c.train = training::train_config_from_json(j.value("train", json::object()));
    if (j.contains("output")) {
      const json& o = j.at("output");
      reject_unknown(o, {"checkpoint", "metrics"}, "output");
      if (o.contains("checkpoint")) c.checkpoint = resolve(base, o.at("checkpoint").get<std::string>());
      if (o.contains("metrics")) c.metrics = resolve(base, o.at("metrics").get<std::string>());
    }
    if (j.contains("resume")) c.resume = resolve(base, j.at("resume").get<std::string>());
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  if (c.data.csv) {
    const json model_json = j.value("model", json::object());
    if (model_json.contains("history") || model_json.contains("horizon")) {
      if (c.model.history != c.data.manifest.history || c.model.horizon != c.data.manifest.horizon) {
        throw ConfigError("model history/horizon disagree with the data manifest");
      }
    }
    c.model.history = c.data.manifest.history;
    c.model.horizon = c.data.manifest.horizon;
    c.model.frame_rate = c.data.manifest.frame_rate;
  }
  return c;
}

RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
  return parse(j, path.parent_path());
}

std::vector<data::GroupWindow> load_windows(const DataSource& source, std::size_t history,
                                            std::size_t horizon) {
  if (!source.csv) return data::benchmark_windows(source.benchmark_count, source.benchmark_seed, history, horizon);
  if (!std::filesystem::exists(*source.csv)) throw IoError("data file not found: " + source.csv->string());
  data::CsvSchema schema = source.manifest.schema;
  schema.target_rate = source.manifest.frame_rate;
  const data::TrackSet tracks = data::load_csv(*source.csv, schema);
  data::WindowConfig wc;
  wc.history = history;
  wc.horizon = horizon;
  wc.stride = source.manifest.stride;
  wc.frame_rate = source.manifest.frame_rate;
  wc.group.orientation = source.manifest.orientation;
  wc.targets = source.targets;
  return data::make_windows(tracks, wc);
}

}  // namespace gimtp::run
