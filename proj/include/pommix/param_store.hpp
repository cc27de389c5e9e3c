#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pommix/rng.hpp"
#include "pommix/tensor.hpp"

namespace pommix::ad {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

// One named trainable tensor plus its Adam state. Parameters belong to a
// learning-rate group so training stages can freeze or slow down a subsystem.
template <typename T>
struct Param {
  std::string name;
  std::string group;
  bool trainable = true;
  Tensor<T> tensor;
  std::vector<T> m, v;  // Adam moments
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Ordered parameter container. Iteration and serialization order is the
// insertion order, which makes checkpoints deterministic.
template <typename T>
class ParamStore {
 public:
  using ConstraintHook = std::function<void(ParamStore&)>;

  Tensor<T> add(const std::string& name, Shape shape, const std::string& group,
                std::vector<T> values, bool trainable = true) {
    if (index_.count(name))
      throw TensorError("ParamStore: duplicate parameter " + name);
    Param<T> p;
    p.name = name;
    p.group = group;
    p.trainable = trainable;
    p.tensor = Tensor<T>::from(std::move(shape), std::move(values), trainable);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return params_.back().tensor;
  }

  Tensor<T> add_xavier(const std::string& name, std::int64_t fan_in,
                       std::int64_t fan_out, const std::string& group,
                       std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> w(static_cast<std::size_t>(fan_in * fan_out));
    for (auto& x : w) x = T(dist(rng));
    return add(name, {fan_in, fan_out}, group, std::move(w));
  }

  Tensor<T> add_zeros(const std::string& name, Shape shape,
                      const std::string& group) {
    std::vector<T> z(static_cast<std::size_t>(numel_of(shape)), T(0));
    return add(name, std::move(shape), group, std::move(z));
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor<T> at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw TensorError("ParamStore: unknown parameter " + name);
    return params_[it->second].tensor;
  }

  Param<T>& param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw TensorError("ParamStore: unknown parameter " + name);
    return params_[it->second];
  }

  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  void add_hook(ConstraintHook hook) { hooks_.push_back(std::move(hook)); }

  // One Adam update with bias correction. Groups missing from lr_by_group or
  // mapped to lr 0 are skipped entirely, leaving their parameters bit-exact.
  void adam_step(const std::map<std::string, double>& lr_by_group,
                 const AdamConfig& cfg = {}) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(step_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(step_));
    for (auto& p : params_) {
      if (!p.trainable) continue;
      auto it = lr_by_group.find(p.group);
      const double lr = it == lr_by_group.end() ? 0.0 : it->second;
      if (lr == 0.0) continue;
      auto& node = *p.tensor.node();
      if (node.grad.size() != node.value.size())
        throw TensorError("adam_step: missing gradient for parameter " +
                          p.name);
      if (p.m.empty()) {
        p.m.assign(node.value.size(), T(0));
        p.v.assign(node.value.size(), T(0));
      }
      for (std::size_t i = 0; i < node.value.size(); ++i) {
        const double g = double(node.grad[i]);
        p.m[i] = T(cfg.beta1 * double(p.m[i]) + (1.0 - cfg.beta1) * g);
        p.v[i] = T(cfg.beta2 * double(p.v[i]) + (1.0 - cfg.beta2) * g * g);
        const double mhat = double(p.m[i]) / bc1;
        const double vhat = double(p.v[i]) / bc2;
        node.value[i] =
            T(double(node.value[i]) - lr * mhat / (std::sqrt(vhat) + cfg.eps));
      }
    }
    for (auto& h : hooks_) h(*this);
  }

  void reset_optimizer() {
    step_ = 0;
    for (auto& p : params_) {
      p.m.clear();
      p.v.clear();
    }
  }

  std::int64_t step_count() const { return step_; }

  // Deep copy of parameter values (for best-epoch snapshots).
  std::vector<std::vector<T>> snapshot() const {
    std::vector<std::vector<T>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.tensor.value());
    return out;
  }

  void restore(const std::vector<std::vector<T>>& snap) {
    if (snap.size() != params_.size())
      throw TensorError("restore: snapshot size mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i)
      params_[i].tensor.mutable_value() = snap[i];
  }

 private:
  std::vector<Param<T>> params_;
  std::map<std::string, std::size_t> index_;
  std::vector<ConstraintHook> hooks_;
  std::int64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoint: <dir>/manifest.json (names, shapes, groups, hyperparameters,
// normalization stats, seed) + <dir>/params.bin (float32 LE, manifest order).
// ---------------------------------------------------------------------------

template <typename T>
inline void save_checkpoint(const std::filesystem::path& dir,
                            const ParamStore<T>& store,
                            nlohmann::json extras) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest = std::move(extras);
  manifest["format_version"] = 1;
  auto& plist = manifest["params"] = nlohmann::json::array();
  for (const auto& p : store.params()) {
    plist.push_back({{"name", p.name},
                     {"shape", p.tensor.shape()},
                     {"group", p.group},
                     {"trainable", p.trainable}});
  }
  std::ofstream mf(dir / "manifest.json");
  if (!mf) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  mf << manifest.dump(2) << '\n';

  std::ofstream bf(dir / "params.bin", std::ios::binary);
  if (!bf) throw std::runtime_error("cannot write " + (dir / "params.bin").string());
  for (const auto& p : store.params()) {
    for (T v : p.tensor.value()) {
      const float f = float(v);
      bf.write(reinterpret_cast<const char*>(&f), sizeof(float));
    }
  }
}

// Loads parameter values into a freshly built store whose layout must match
// the manifest. Returns the manifest for the caller's metadata needs.
template <typename T>
inline nlohmann::json load_checkpoint(const std::filesystem::path& dir,
                                      ParamStore<T>& store) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf)
    throw std::runtime_error("cannot read " + (dir / "manifest.json").string());
  nlohmann::json manifest = nlohmann::json::parse(mf);
  const auto& plist = manifest.at("params");
  if (plist.size() != store.size())
    throw std::runtime_error("checkpoint manifest lists " +
                             std::to_string(plist.size()) + " params, store has " +
                             std::to_string(store.size()));
  std::ifstream bf(dir / "params.bin", std::ios::binary);
  if (!bf)
    throw std::runtime_error("cannot read " + (dir / "params.bin").string());
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store.params()[i];
    const std::string name = plist[i].at("name");
    if (name != p.name)
      throw std::runtime_error("checkpoint param order mismatch: expected " +
                               p.name + ", manifest has " + name);
    for (auto& v : p.tensor.mutable_value()) {
      float f;
      bf.read(reinterpret_cast<char*>(&f), sizeof(float));
      if (!bf) throw std::runtime_error("params.bin truncated at " + p.name);
      v = T(f);
    }
  }
  return manifest;
}

}  // namespace pommix::ad
