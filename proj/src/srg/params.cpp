#include "srg/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "srg/rng.hpp"

namespace srg {

std::string fingerprint_of(const json& config) { return to_hex(fnv1a64(config.dump())); }

Parameter& ParameterStore::add(const std::string& name, Tensor value, bool trainable,
                               bool weight_decay) {
  if (index_.count(name)) fail_config("duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = std::move(value);
  p->grad = Tensor(p->value.shape);
  p->trainable = trainable;
  p->weight_decay = weight_decay;
  Parameter& ref = *p;
  index_[name] = &ref;
  params_.push_back(std::move(p));
  return ref;
}

Parameter& ParameterStore::weight(const std::string& name, int rows, int cols) {
  Rng rng(Rng::mix(seed_, fnv1a64(name)));
  const real limit = std::sqrt(real(6) / real(rows + cols));
  Tensor t(rows, cols);
  for (auto& x : t.data) x = rng.uniform(-limit, limit);
  return add(name, std::move(t), true, true);
}

Parameter& ParameterStore::head_weight(const std::string& name, int rows, int cols) {
  Rng rng(Rng::mix(seed_, fnv1a64(name)));
  Tensor t(rows, cols);
  for (auto& x : t.data) x = rng.normal(real(0), real(0.02));
  return add(name, std::move(t), true, true);
}

Parameter& ParameterStore::embedding(const std::string& name, int rows, int cols) {
  Rng rng(Rng::mix(seed_, fnv1a64(name)));
  Tensor t(rows, cols);
  for (auto& x : t.data) x = rng.normal(real(0), real(0.02));
  return add(name, std::move(t), true, false);
}

Parameter& ParameterStore::bias(const std::string& name, int n) {
  return add(name, Tensor(std::vector<int>{n}), true, false);
}

Parameter& ParameterStore::gain(const std::string& name, int n) {
  Tensor t(std::vector<int>{n});
  for (auto& x : t.data) x = real(1);
  return add(name, std::move(t), true, false);
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : it->second;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : it->second;
}

Parameter& ParameterStore::get(const std::string& name) {
  Parameter* p = find(name);
  if (!p) fail_config("unknown parameter '" + name + "'");
  return *p;
}

std::vector<Parameter*> ParameterStore::trainable() const {
  std::vector<Parameter*> out;
  for (const auto& p : params_)
    if (p->trainable) out.push_back(p.get());
  return out;
}

void ParameterStore::zero_grads() {
  for (const auto& p : params_) p->zero_grad();
}

std::size_t ParameterStore::total_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::string& path, const ParameterStore& store, const json& config) {
  json header;
  header["version"] = 1;
  header["config"] = config;
  header["fingerprint"] = fingerprint_of(config);
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& p : store.all()) {
    json t;
    t["name"] = p->name;
    t["shape"] = p->value.shape;
    t["offset"] = offset;
    tensors.push_back(std::move(t));
    offset += p->value.numel() * sizeof(double);
  }
  header["tensors"] = std::move(tensors);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail_data("cannot open checkpoint for writing: " + path);
  out << header.dump() << '\n';
  std::vector<char> buf;
  for (const auto& p : store.all()) {
    buf.resize(p->value.numel() * sizeof(double));
    for (std::size_t i = 0; i < p->value.data.size(); ++i) {
      const double v = double(p->value.data[i]);
      std::memcpy(buf.data() + i * sizeof(double), &v, sizeof(double));
    }
    out.write(buf.data(), std::streamsize(buf.size()));
  }
  if (!out) fail_data("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line)) fail_data("checkpoint missing header: " + path);
  json header;
  try {
    header = json::parse(line);
  } catch (const std::exception& e) {
    fail_data("checkpoint header parse error in " + path + ": " + e.what());
  }
  Checkpoint ck;
  ck.version = header.at("version").get<int>();
  if (ck.version != 1) fail_data("unsupported checkpoint version " + std::to_string(ck.version));
  ck.fingerprint = header.at("fingerprint").get<std::string>();
  ck.config = header.at("config");

  std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (const auto& t : header.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const std::vector<int> shape = t.at("shape").get<std::vector<int>>();
    const std::uint64_t offset = t.at("offset").get<std::uint64_t>();
    Tensor tensor(shape);
    const std::uint64_t bytes = tensor.numel() * sizeof(double);
    if (offset + bytes > payload.size())
      fail_data("checkpoint payload truncated for tensor '" + name + "' in " + path);
    for (std::size_t i = 0; i < tensor.data.size(); ++i) {
      double v;
      std::memcpy(&v, payload.data() + offset + i * sizeof(double), sizeof(double));
      tensor.data[i] = real(v);
    }
    ck.tensors.emplace_back(name, std::move(tensor));
  }
  return ck;
}

void restore_into(const Checkpoint& ckpt, ParameterStore& store) {
  if (ckpt.tensors.size() != store.all().size())
    fail_data("checkpoint has " + std::to_string(ckpt.tensors.size()) + " tensors, store expects " +
              std::to_string(store.all().size()));
  for (const auto& [name, t] : ckpt.tensors) {
    Parameter* p = store.find(name);
    if (!p) fail_data("checkpoint tensor '" + name + "' has no matching parameter");
    if (!p->value.same_shape(t))
      fail_data("shape mismatch for '" + name + "': checkpoint " + t.shape_str() + " vs store " +
                p->value.shape_str());
    p->value = t;
  }
}

}  // namespace srg
