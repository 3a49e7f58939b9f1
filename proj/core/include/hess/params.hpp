#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hess/tensor.hpp"

namespace hess {

/// Named trainable tensors in declaration order. Checkpoints and the
/// optimizer walk this order.
class ParamStore {
  public:
    Tensor add(std::string name, Tensor value);

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::vector<Tensor> tensors() const;
    std::size_t count() const;  // total scalar parameters
    void zero_grad();

  private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

/// U(−1/√fan_in, 1/√fan_in) weights.
Tensor uniform_fan_in(std::mt19937_64& rng, Shape shape, std::size_t fan_in);

}  // namespace hess
