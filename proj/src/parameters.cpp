#include "gimtp/parameters.hpp"

#include "gimtp/autograd.hpp"
#include "gimtp/errors.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace gimtp {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in native (little-endian) order");

std::size_t ParameterStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
  Parameter p;
  p.name = name;
  p.grad = Tensor(init.shape());
  p.first_moment = Tensor(init.shape());
  p.second_moment = Tensor(init.shape());
  p.value = std::move(init);
  params_.push_back(std::move(p));
  index_[name] = params_.size() - 1;
  return params_.size() - 1;
}

std::size_t ParameterStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw LookupError("unknown parameter '" + name + "'");
  return it->second;
}

void ParameterStore::zero_grad() {
  for (Parameter& p : params_) {
    p.grad.fill(0.0);
    p.grad_ready = true;
  }
}

std::vector<Tensor> ParameterStore::collect(const ad::Tape& tape) const {
  std::vector<Tensor> grads(params_.size());
  for (const auto& [index, node] : tape.bound_parameters()) {
    const Tensor& g = tape.grad(node);
    if (g.size() != 0) grads[index] = g;
  }
  return grads;
}

void ParameterStore::accumulate(const ad::Tape& tape) { accumulate(collect(tape)); }

void ParameterStore::accumulate(const std::vector<Tensor>& grads) {
  if (grads.size() != params_.size()) {
    throw DimensionError("gradient set has " + std::to_string(grads.size()) +
                         " entries for " + std::to_string(params_.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = params_[i];
    p.grad_ready = true;
    if (grads[i].size() == 0) continue;
    if (!same_shape(grads[i], p.grad)) {
      throw DimensionError("gradient for '" + p.name + "' has shape " +
                           shape_string(grads[i].shape()));
    }
    for (std::size_t j = 0; j < p.grad.size(); ++j) p.grad[j] += grads[i][j];
  }
}

void ParameterStore::scale_grads(double factor) {
  for (Parameter& p : params_) {
    for (double& g : p.grad.data()) g *= factor;
  }
}

double ParameterStore::grad_norm() const {
  double total = 0.0;
  for (const Parameter& p : params_) {
    for (double g : p.grad.data()) total += g * g;
  }
  return std::sqrt(total);
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.value.size();
  return n;
}

void ParameterStore::reset_moments() {
  for (Parameter& p : params_) {
    p.first_moment.fill(0.0);
    p.second_moment.fill(0.0);
  }
}

void adam_step(ParameterStore& store, const AdamOptions& options) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!store[i].grad_ready) {
      throw ContractError("adam_step: missing gradient for parameter '" + store[i].name + "'");
    }
  }
  store.set_step(store.step() + 1);
  const double t = static_cast<double>(store.step() - options.moment_origin);
  const double correction1 = 1.0 - std::pow(options.beta1, t);
  const double correction2 = 1.0 - std::pow(options.beta2, t);
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter& p = store[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      double& m = p.first_moment[j];
      double& v = p.second_moment[j];
      m = options.beta1 * m + (1.0 - options.beta1) * g;
      v = options.beta2 * v + (1.0 - options.beta2) * g * g;
      const double m_hat = m / correction1;
      const double v_hat = v / correction2;
      p.value[j] -= options.lr * m_hat / (std::sqrt(v_hat) + options.eps);
    }
    p.grad_ready = false;
  }
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor out(std::move(shape));
  for (double& v : out.data()) v = dist(rng);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'G', 'I', 'M', 'T', 'P', 'C', 'K', '\0'};

const char* kValuePrefix = "param/";
const char* kFirstPrefix = "adam_m/";
const char* kSecondPrefix = "adam_v/";

}  // namespace

Checkpoint make_checkpoint(const ParameterStore& store, nlohmann::json metadata) {
  Checkpoint ckpt;
  ckpt.step = store.step();
  ckpt.metadata = std::move(metadata);
  for (const Parameter& p : store.parameters()) {
    ckpt.arrays.emplace_back(kValuePrefix + p.name, p.value);
  }
  for (const Parameter& p : store.parameters()) {
    ckpt.arrays.emplace_back(kFirstPrefix + p.name, p.first_moment);
    ckpt.arrays.emplace_back(kSecondPrefix + p.name, p.second_moment);
  }
  return ckpt;
}

void restore_checkpoint(const Checkpoint& ckpt, ParameterStore& store) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ckpt.arrays) by_name[name] = &t;
  auto copy_into = [&](const std::string& key, Tensor& target, bool required) {
    auto it = by_name.find(key);
    if (it == by_name.end()) {
      if (required) throw SchemaError("checkpoint lacks array '" + key + "'");
      return;
    }
    if (!same_shape(*it->second, target)) {
      throw SchemaError("checkpoint array '" + key + "' has shape " +
                        shape_string(it->second->shape()) + ", expected " +
                        shape_string(target.shape()));
    }
    target = *it->second;
  };
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter& p = store[i];
    copy_into(kValuePrefix + p.name, p.value, true);
    copy_into(kFirstPrefix + p.name, p.first_moment, false);
    copy_into(kSecondPrefix + p.name, p.second_moment, false);
  }
  store.set_step(ckpt.step);
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["step"] = ckpt.step;
  manifest["metadata"] = ckpt.metadata;
  manifest["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.arrays) {
    manifest["arrays"].push_back({{"name", name},
                                  {"shape", t.shape()},
                                  {"dtype", "float32"},
                                  {"offset", offset},
                                  {"count", t.size()}});
    offset += t.size() * sizeof(float);
  }
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t length = text.size();
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::vector<float> buffer;
  for (const auto& [name, t] : ckpt.arrays) {
    buffer.resize(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) buffer[i] = static_cast<float>(t[i]);
    out.write(reinterpret_cast<const char*>(buffer.data()),
              static_cast<std::streamsize>(buffer.size() * sizeof(float)));
  }
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw SchemaError("'" + path.string() + "' is not a checkpoint");
  }
  std::uint64_t length = 0;
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw SchemaError("truncated checkpoint manifest in '" + path.string() + "'");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  if (manifest.value("format_version", -1) != kCheckpointFormatVersion) {
    throw SchemaError("unsupported checkpoint format version");
  }
  Checkpoint ckpt;
  ckpt.step = manifest.at("step").get<std::int64_t>();
  ckpt.metadata = manifest.value("metadata", nlohmann::json::object());
  const auto payload_start = in.tellg();
  std::vector<float> buffer;
  for (const auto& entry : manifest.at("arrays")) {
    if (entry.at("dtype").get<std::string>() != "float32") {
      throw SchemaError("unsupported dtype in checkpoint");
    }
    Shape shape = entry.at("shape").get<Shape>();
    const auto count = entry.at("count").get<std::size_t>();
    if (shape_size(shape) != count) throw SchemaError("array count does not match its shape");
    in.seekg(payload_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    buffer.resize(count);
    in.read(reinterpret_cast<char*>(buffer.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw SchemaError("truncated checkpoint payload");
    std::vector<double> data(buffer.begin(), buffer.end());
    ckpt.arrays.emplace_back(entry.at("name").get<std::string>(),
                             Tensor(std::move(shape), std::move(data)));
  }
  return ckpt;
}

}  // namespace gimtp
