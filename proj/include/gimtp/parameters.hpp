#pragma once

#include "gimtp/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace gimtp {

namespace ad {
class Tape;
}

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor first_moment;
  Tensor second_moment;
  bool grad_ready = false;
};

// Named parameters in registration order plus the Adam state that goes with
// them. Registration order is the canonical order for checkpoints and for
// gradient reduction.
class ParameterStore {
 public:
  std::size_t add(const std::string& name, Tensor init);

  std::size_t size() const { return params_.size(); }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  std::size_t index_of(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<Parameter>& parameters() const { return params_; }

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t step) { step_ = step; }

  // Sets every gradient to zero and marks it as populated.
  void zero_grad();
  // Adds the parameter gradients recorded on `tape` (after its backward pass).
  void accumulate(const ad::Tape& tape);
  void accumulate(const std::vector<Tensor>& grads);
  // Snapshot of the parameter gradients on `tape`, one tensor per parameter.
  std::vector<Tensor> collect(const ad::Tape& tape) const;
  void scale_grads(double factor);
  // Zeroes both Adam moment buffers.
  void reset_moments();
  double grad_norm() const;

  std::size_t parameter_count() const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::int64_t step_ = 0;
};

struct AdamOptions {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Step count at the last moment reset; bias correction counts from here.
  std::int64_t moment_origin = 0;
};

// One bias-corrected Adam update. Throws ContractError naming the first
// parameter whose gradient was never populated since the previous step.
void adam_step(ParameterStore& store, const AdamOptions& options);

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

// Checkpoint container: 8-byte magic "GIMTPCK\0", little-endian uint64 manifest
// length, JSON manifest, then raw little-endian float32 payloads. Manifest keys:
// format_version, step, metadata, arrays[{name, shape, dtype, offset, count}].
inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  std::int64_t step = 0;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> arrays;
};

Checkpoint make_checkpoint(const ParameterStore& store, nlohmann::json metadata);
void restore_checkpoint(const Checkpoint& ckpt, ParameterStore& store);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace gimtp
