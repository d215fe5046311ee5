#pragma once

#include <cmath>
#include <vector>

#include "mdae/registry.hpp"

namespace mdae {

// Adam with a step counter shared across all parameters. One step() call
// per batch updates every trainable parameter from its accumulated gradient.
template <typename T>
class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit Adam(const ParameterRegistry<T>& reg) {
    m_.reserve(reg.size());
    v_.reserve(reg.size());
    for (const auto& p : reg) {
      m_.emplace_back(p.value.n(), p.value.c(), p.value.h(), p.value.w());
      v_.emplace_back(p.value.n(), p.value.c(), p.value.h(), p.value.w());
    }
  }

  long long step_count() const { return t_; }

  void step(ParameterRegistry<T>& reg, double lr) {
    if (reg.size() != m_.size())
      throw contract_error("adam: registry size changed");
    ++t_;
    const double corr1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double corr2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t id = 0; id < m_.size(); ++id) {
      auto& p = reg.at(id);
      if (!p.trainable) continue;
      auto& m = m_[id];
      auto& v = v_[id];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = static_cast<double>(p.grad[i]);
        const double mi = kBeta1 * static_cast<double>(m[i]) + (1.0 - kBeta1) * g;
        const double vi = kBeta2 * static_cast<double>(v[i]) + (1.0 - kBeta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update =
            lr * (mi / corr1) / (std::sqrt(vi / corr2) + kEps);
        p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - update);
      }
    }
  }

 private:
  std::vector<Tensor4<T>> m_, v_;
  long long t_ = 0;
};

}  // namespace mdae
