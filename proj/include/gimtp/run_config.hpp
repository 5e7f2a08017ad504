#pragma once

#include "gimtp/data.hpp"
#include "gimtp/model.hpp"
#include "gimtp/training.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gimtp::run {

// Where windows come from: a CSV file plus manifest, or the seeded benchmark
// scenario family.
struct DataSource {
  std::optional<std::filesystem::path> csv;
  data::DatasetManifest manifest;
  std::vector<data::VehicleId> targets;
  std::size_t benchmark_count = 0;
  std::uint64_t benchmark_seed = 0;
};

struct RunConfig {
  DataSource data;
  model::ModelConfig model;
  training::TrainConfig train;
  std::filesystem::path checkpoint = "gimtp.ckpt";
  std::filesystem::path metrics = "metrics.jsonl";
  std::optional<std::filesystem::path> resume;
  std::uint64_t seed = 0;  // parameter initialization and data order
};

// Relative paths resolve against `base`. Unknown keys are rejected.
RunConfig parse(const nlohmann::json& j, const std::filesystem::path& base = {});
RunConfig load(const std::filesystem::path& path);

std::vector<data::GroupWindow> load_windows(const DataSource& source, std::size_t history,
                                            std::size_t horizon);

}  // namespace gimtp::run
