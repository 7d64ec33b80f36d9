#include "slicegen/optim.hpp"

#include <algorithm>
#include <cmath>

namespace slicegen {

template <typename Real>
ParameterSet<Real>::ParameterSet(const ParameterSet& other) {
  items_.reserve(other.items_.size());
  for (const auto& [name, v] : other.items_) items_.emplace_back(name, Var<Real>::parameter(v.value()));
}

template <typename Real>
ParameterSet<Real>& ParameterSet<Real>::operator=(const ParameterSet& other) {
  if (this != &other) *this = ParameterSet(other);
  return *this;
}

template <typename Real>
Var<Real>& ParameterSet<Real>::add(std::string name, Tensor<Real> init) {
  if (contains(name)) throw ContractError("duplicate parameter name: " + name);
  items_.emplace_back(std::move(name), Var<Real>::parameter(std::move(init)));
  return items_.back().second;
}

template <typename Real>
Var<Real>& ParameterSet<Real>::at(const std::string& name) {
  for (auto& [n, v] : items_)
    if (n == name) return v;
  throw ContractError("unknown parameter: " + name);
}

template <typename Real>
const Var<Real>& ParameterSet<Real>::at(const std::string& name) const {
  for (const auto& [n, v] : items_)
    if (n == name) return v;
  throw ContractError("unknown parameter: " + name);
}

template <typename Real>
bool ParameterSet<Real>::contains(const std::string& name) const {
  return std::any_of(items_.begin(), items_.end(), [&](const Item& it) { return it.first == name; });
}

template <typename Real>
std::vector<typename ParameterSet<Real>::Item> ParameterSet<Real>::with_prefix(
    const std::string& prefix) const {
  std::vector<Item> out;
  for (const auto& it : items_)
    if (it.first.compare(0, prefix.size(), prefix) == 0) out.push_back(it);
  return out;
}

template <typename Real>
void ParameterSet<Real>::zero_grad() {
  for (auto& it : items_) it.second.zero_grad();
}

template <typename Real>
Adam<Real>::Adam(std::vector<typename ParameterSet<Real>::Item> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  if (!(config_.lr >= 0.0) || !(config_.weight_decay >= 0.0) || !(config_.epsilon > 0.0) ||
      !(config_.beta1 >= 0.0 && config_.beta1 < 1.0) || !(config_.beta2 >= 0.0 && config_.beta2 < 1.0))
    throw ConfigError("invalid Adam hyperparameters");
  moments_.reserve(params_.size());
  for (const auto& [name, p] : params_)
    moments_.push_back({std::vector<Real>(p.size(), Real{0}), std::vector<Real>(p.size(), Real{0})});
}

template <typename Real>
void Adam<Real>::step() {
  for (const auto& [name, p] : params_)
    if (!p.has_grad()) throw ContractError("parameter without gradient: " + name);

  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, double(steps_));
  const double c2 = 1.0 - std::pow(b2, double(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Var<Real>& p = params_[k].second;
    const auto& g = p.node()->grad;
    Tensor<Real> next = p.value();
    auto& m = moments_[k].first;
    auto& v = moments_[k].second;
    for (std::size_t i = 0; i < next.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<Real>(mi);
      v[i] = static_cast<Real>(vi);
      const double update = (mi / c1) / (std::sqrt(vi / c2) + config_.epsilon);
      const double w = next[i];
      next[i] = static_cast<Real>(w - config_.lr * (update + config_.weight_decay * w));
    }
    if (!next.all_finite()) throw DomainError("Adam produced non-finite parameter " + params_[k].first);
    p.set_value(std::move(next));
  }
}

template <typename Real>
void Adam<Real>::set_lr(double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive and finite");
  config_.lr = lr;
}

template <typename Real>
void Adam<Real>::zero_grad() {
  for (auto& it : params_) it.second.zero_grad();
}

template <typename Real>
void Adam<Real>::restore(std::uint64_t steps, std::vector<Moments> moments) {
  if (moments.size() != params_.size()) throw CheckpointError("optimizer state size mismatch");
  for (std::size_t k = 0; k < moments.size(); ++k)
    if (moments[k].first.size() != params_[k].second.size() ||
        moments[k].second.size() != params_[k].second.size())
      throw CheckpointError("optimizer state shape mismatch for " + params_[k].first);
  steps_ = steps;
  moments_ = std::move(moments);
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace slicegen
