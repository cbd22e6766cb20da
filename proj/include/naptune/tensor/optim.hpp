#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

#include "naptune/tensor/tensor.hpp"

namespace naptune {

/// Named, ordered collection of parameter tensors with per-entry frozen flags.
/// Entries share storage with the tensors handed to add().
template <class T>
class BasicParameterSet {
 public:
  struct Entry {
    std::string name;
    BasicTensor<T> tensor;
    bool frozen = false;
  };

  BasicTensor<T> add(const std::string& name, BasicTensor<T> tensor, bool frozen = false) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    tensor.set_requires_grad(!frozen);
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(tensor), frozen});
    return entries_.back().tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const Entry& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return entries_[it->second];
  }

  const BasicTensor<T>& get(const std::string& name) const { return entry(name).tensor; }

  /// Freezes or unfreezes every entry whose name starts with `prefix`.
  std::size_t set_frozen(const std::string& prefix, bool frozen) {
    std::size_t hits = 0;
    for (auto& e : entries_) {
      if (e.name.compare(0, prefix.size(), prefix) == 0) {
        e.frozen = frozen;
        e.tensor.set_requires_grad(!frozen);
        ++hits;
      }
    }
    return hits;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (!e.frozen) n += e.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ParameterSet = BasicParameterSet<float>;

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay and bias-corrected moments. Frozen
/// entries are skipped entirely; moments are kept in double.
template <class T>
class AdamW {
 public:
  AdamW(BasicParameterSet<T>& params, AdamWConfig config) : params_(params), config_(config) {
    for (const auto& e : params_.entries()) {
      first_.emplace_back(e.tensor.numel(), 0.0);
      second_.emplace_back(e.tensor.numel(), 0.0);
    }
  }

  void step(double lr) {
    if (lr < 0.0) throw ContractError("learning rate must be non-negative");
    auto& entries = params_.entries();
    if (entries.size() != first_.size()) throw ContractError("parameter set changed after optimizer construction");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (!entries[i].frozen && !entries[i].tensor.has_grad()) {
        throw ContractError("no gradient for trainable parameter " + entries[i].name);
      }
    }
    ++steps_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    const double decay = 1.0 - lr * config_.weight_decay;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto& e = entries[i];
      if (e.frozen) continue;
      auto values = e.tensor.mutable_data();
      auto grad = e.tensor.grad();
      auto& m = first_[i];
      auto& v = second_[i];
      for (std::size_t j = 0; j < values.size(); ++j) {
        const double g = grad[j];
        m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
        v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        double p = static_cast<double>(values[j]) * decay;
        p -= lr * mhat / (std::sqrt(vhat) + config_.eps);
        values[j] = static_cast<T>(p);
      }
    }
  }

  std::uint64_t step_count() const { return steps_; }
  const AdamWConfig& config() const { return config_; }

 private:
  BasicParameterSet<T>& params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::uint64_t steps_ = 0;
};

/// Linear warmup to base_lr over warmup_steps, then half-cosine decay to 0 at
/// total_steps.
struct CosineWarmupSchedule {
  double base_lr = 1e-5;
  std::uint64_t warmup_steps = 0;
  std::uint64_t total_steps = 1;

  double lr_at(std::uint64_t step) const {
    if (step > total_steps) {
      std::clog << "warning: schedule step " << step << " past total " << total_steps << ", lr clamped to 0\n";
      return 0.0;
    }
    if (warmup_steps > 0 && step <= warmup_steps) {
      return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    if (total_steps <= warmup_steps) return base_lr;
    const double progress =
        static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

}  // namespace naptune
