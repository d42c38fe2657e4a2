#pragma once

#include "cast/common.hpp"
#include "cast/rng.hpp"
#include "cast/tensor.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace cast {

template <class Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad; // same shape, accumulated across backward calls
  bool trainable = true;
};

// Named parameter collection. Initialization is keyed on (seed, name) so that
// values do not depend on construction order; iteration is sorted by name.
template <class Real>
class ParamStore {
public:
  explicit ParamStore(std::uint64_t init_seed = 0) : init_seed_(init_seed) {}

  // fan_in > 0: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); fan_in == 0: zeros.
  Parameter<Real>& create(const std::string& name, std::vector<std::size_t> shape,
                          std::size_t fan_in, bool trainable = true) {
    require(!params_.count(name), "ParamStore: duplicate parameter name '", name, "'");
    auto p = std::make_unique<Parameter<Real>>();
    p->name = name;
    p->value = Tensor<Real>(shape);
    p->grad = Tensor<Real>(std::move(shape));
    p->trainable = trainable;
    if (fan_in > 0) {
      Rng rng(derive_seed(init_seed_, "init:" + name));
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < p->value.numel(); ++i)
        p->value[i] = static_cast<Real>(rng.uniform(-bound, bound));
    }
    auto& ref = *p;
    params_.emplace(name, std::move(p));
    return ref;
  }

  Parameter<Real>* find(const std::string& name) {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : it->second.get();
  }
  const Parameter<Real>* find(const std::string& name) const {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : it->second.get();
  }

  void zero_grads() {
    for (auto& [n, p] : params_) p->grad.zero();
  }

  std::size_t size() const { return params_.size(); }

  std::size_t total_numel() const {
    std::size_t n = 0;
    for (auto& [name, p] : params_) n += p->value.numel();
    return n;
  }

  // Sorted by name (std::map order).
  template <class Fn>
  void for_each(Fn&& fn) {
    for (auto& [name, p] : params_) fn(*p);
  }
  template <class Fn>
  void for_each(Fn&& fn) const {
    for (auto& [name, p] : params_) fn(*p);
  }

  std::uint64_t init_seed() const { return init_seed_; }

private:
  std::uint64_t init_seed_;
  std::map<std::string, std::unique_ptr<Parameter<Real>>> params_;
};

} // namespace cast
