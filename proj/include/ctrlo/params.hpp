#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "ctrlo/ops.hpp"
#include "ctrlo/rng.hpp"

namespace ctrlo {

/// Flat, ordered view over the parameter matrices of a model. Order is the
/// declaration order and is stable: the optimizer, gradient buffers and
/// checkpoints all index by it.
class ParamRegistry {
 public:
  struct Entry {
    std::string name;
    ad::Mat* value;
  };

  void add(std::string name, ad::Mat* value) { entries_.push_back({std::move(name), value}); }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t total_coeffs() const {
    std::size_t n = 0;
    for (const Entry& e : entries_) n += static_cast<std::size_t>(e.value->size());
    return n;
  }

  /// Zero matrices shaped like the parameters, for gradient accumulation.
  std::vector<ad::Mat> zeros_like() const {
    std::vector<ad::Mat> g;
    g.reserve(entries_.size());
    for (const Entry& e : entries_) g.push_back(ad::Mat::Zero(e.value->rows(), e.value->cols()));
    return g;
  }

 private:
  std::vector<Entry> entries_;
};

/// Binds parameter matrices to leaf nodes of one tape. Each matrix gets one
/// leaf no matter how often it is used, so harvested gradients are complete.
class ParamContext {
 public:
  explicit ParamContext(ad::Tape& tape) : tape_(tape) {}

  ad::Var use(const ad::Mat& m) {
    auto it = leaves_.find(&m);
    if (it != leaves_.end()) return it->second;
    ad::Var v = tape_.leaf_view(&m);
    leaves_.emplace(&m, v);
    return v;
  }

  ad::Tape& tape() { return tape_; }

  /// Adds this tape's parameter gradients into `out` (registry order).
  /// Parameters never touched by the forward pass contribute zero.
  void harvest(const ParamRegistry& reg, std::vector<ad::Mat>& out) const;

 private:
  ad::Tape& tape_;
  std::unordered_map<const ad::Mat*, ad::Var> leaves_;
};

// Common initializers.
ad::Mat glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng);
ad::Mat zeros(Eigen::Index rows, Eigen::Index cols);
ad::Mat ones(Eigen::Index rows, Eigen::Index cols);

}  // namespace ctrlo
