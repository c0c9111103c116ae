#include "restok/params.hpp"

#include "restok/errors.hpp"

RESTOK_BEGIN_NAMESPACE

Parameter& ParameterStore::add(const std::string& name, Tensor init, bool trainable) {
  if (contains(name)) throw StateError("duplicate parameter '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Tensor::zeros_like(init);
  p->value = std::move(init);
  p->trainable = trainable;
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw StateError("unknown parameter '" + name + "'");
  return *params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw StateError("unknown parameter '" + name + "'");
  return *params_[it->second];
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->grad.fill(0);
}

void ParameterStore::scale_grad(Real factor) {
  for (auto& p : params_) {
    for (auto& g : p->grad.values()) g *= factor;
  }
}

Tensor normal_tensor(std::vector<int> shape, Real stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (auto& v : t.values()) v = static_cast<Real>(dist(rng));
  return t;
}

Tensor uniform_tensor(std::vector<int> shape, Real lo, Real hi, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.values()) v = static_cast<Real>(dist(rng));
  return t;
}

RESTOK_END_NAMESPACE
