#pragma once

#include <random>
#include <vector>

#include "hess/tensor.hpp"

namespace hess::testing {

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<Scalar> data(numel(shape));
    for (auto& v : data) v = dist(rng);
    return Tensor(std::move(shape), std::move(data));
}

inline Tensor random_spikes(std::mt19937_64& rng, Shape shape, double rate = 0.3) {
    std::bernoulli_distribution dist(rate);
    std::vector<Scalar> data(numel(shape));
    for (auto& v : data) v = dist(rng) ? 1.0 : 0.0;
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace hess::testing
