#pragma once

#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "restok/tensor.hpp"

RESTOK_BEGIN_NAMESPACE

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

// Owns named parameters with stable addresses. Insertion order is preserved
// and defines checkpoint record order.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(const std::string& name, Tensor init, bool trainable = true);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  void scale_grad(Real factor);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

Tensor normal_tensor(std::vector<int> shape, Real stddev, std::mt19937_64& rng);
Tensor uniform_tensor(std::vector<int> shape, Real lo, Real hi, std::mt19937_64& rng);

RESTOK_END_NAMESPACE
