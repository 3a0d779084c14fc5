#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "nflat/rng.hpp"
#include "nflat/tensor.hpp"

namespace nflat {

enum class Init { Zeros, Ones, Xavier, Normal };

/// Named trainable tensors in registration order.
class ParamStore {
 public:
  Tensor add(const std::string& name, Shape shape, Init init, Rng& rng, double stddev = 0.02) {
    if (index_.count(name)) throw ContractError("duplicate parameter " + name);
    auto t = Tensor::zeros(shape, true);
    auto data = t.mutable_data();
    switch (init) {
      case Init::Zeros:
        break;
      case Init::Ones:
        for (auto& x : data) x = 1.0;
        break;
      case Init::Xavier: {
        const double fan_in = static_cast<double>(shape.size() >= 2 ? shape[shape.size() - 2] : 1);
        const double fan_out = static_cast<double>(shape.back());
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& x : data) x = rng.uniform(-limit, limit);
        break;
      }
      case Init::Normal:
        for (auto& x : data) x = rng.normal(0.0, stddev);
        break;
    }
    return insert(name, std::move(t));
  }

  Tensor insert(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ContractError("duplicate parameter " + name);
    index_.emplace(name, items_.size());
    items_.emplace_back(name, t);
    return t;
  }

  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter " + name);
    return items_[it->second].second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

  void zero_grad() {
    for (auto& [_, t] : items_) t.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : items_) n += t.numel();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace nflat
