#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "slicegen/autodiff.hpp"

namespace slicegen {

/// Ordered collection of named trainable leaves.
template <typename Real>
class ParameterSet {
 public:
  using Item = std::pair<std::string, Var<Real>>;

  ParameterSet() = default;
  // Copies own fresh leaves holding the same weights (gradients are not copied);
  // moves keep the nodes, so optimizers bound to them stay valid.
  ParameterSet(const ParameterSet& other);
  ParameterSet& operator=(const ParameterSet& other);
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  /// Adds a new trainable leaf; names must be unique.
  Var<Real>& add(std::string name, Tensor<Real> init);

  Var<Real>& at(const std::string& name);
  const Var<Real>& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<Item>& items() const noexcept { return items_; }
  std::size_t size() const noexcept { return items_.size(); }

  /// Entries whose name starts with `prefix`, sharing the same nodes.
  std::vector<Item> with_prefix(const std::string& prefix) const;

  void zero_grad();

 private:
  std::vector<Item> items_;
};

struct AdamConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with decoupled weight decay:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
template <typename Real>
class Adam {
 public:
  struct Moments {
    std::vector<Real> first;
    std::vector<Real> second;
  };

  Adam(std::vector<typename ParameterSet<Real>::Item> params, AdamConfig config);

  /// Applies one update to every parameter. Throws ContractError when a
  /// parameter has no gradient.
  void step();
  void zero_grad();

  std::uint64_t steps() const noexcept { return steps_; }
  void set_lr(double lr);
  const AdamConfig& config() const noexcept { return config_; }
  const std::vector<typename ParameterSet<Real>::Item>& params() const noexcept { return params_; }
  const std::vector<Moments>& moments() const noexcept { return moments_; }

  /// Restores optimizer state saved alongside a checkpoint.
  void restore(std::uint64_t steps, std::vector<Moments> moments);

 private:
  std::vector<typename ParameterSet<Real>::Item> params_;
  AdamConfig config_;
  std::vector<Moments> moments_;
  std::uint64_t steps_ = 0;
};

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;
extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace slicegen
