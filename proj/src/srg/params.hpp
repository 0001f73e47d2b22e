#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "srg/tape.hpp"

namespace srg {

using json = nlohmann::json;

// Stable fingerprint of a config object (hex of FNV-1a over its canonical dump).
std::string fingerprint_of(const json& config);

// Named parameter blocks with deterministic, name-keyed initialization:
// the init stream for a block is Rng(mix(seed, fnv1a64(name))), so the values
// do not depend on creation order.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed) : seed_(seed) {}

  Parameter& add(const std::string& name, Tensor value, bool trainable = true,
                 bool weight_decay = true);

  // Xavier-uniform weight matrix, limit sqrt(6/(fan_in+fan_out)).
  Parameter& weight(const std::string& name, int rows, int cols);
  // Classifier-head weight matrix, entries ~ N(0, 0.02^2): starts logits near
  // zero so untrained cross-entropies sit at log C.
  Parameter& head_weight(const std::string& name, int rows, int cols);
  // Embedding table, entries ~ N(0, 0.02^2); excluded from weight decay.
  Parameter& embedding(const std::string& name, int rows, int cols);
  // Zero bias vector; excluded from weight decay.
  Parameter& bias(const std::string& name, int n);
  // Unit norm gain vector; excluded from weight decay.
  Parameter& gain(const std::string& name, int n);

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Parameter& get(const std::string& name);

  const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }
  std::vector<Parameter*> trainable() const;
  void zero_grads();
  std::size_t total_scalars() const;
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, Parameter*> index_;
};

// Checkpoint file: one-line header (format version, config, config fingerprint,
// ordered {name, shape, byte offset} list) + '\n' + raw little-endian float64
// payload, row-major per tensor. Round-trips bit-exactly.
struct Checkpoint {
  int version = 1;
  std::string fingerprint;
  json config;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const ParameterStore& store, const json& config);
Checkpoint load_checkpoint(const std::string& path);

// Copy checkpoint tensors into matching store parameters. Every checkpoint
// tensor must exist in the store with the same shape, and vice versa.
void restore_into(const Checkpoint& ckpt, ParameterStore& store);

}  // namespace srg
