#include "hess/params.hpp"

#include <cmath>

namespace hess {

Tensor ParamStore::add(std::string name, Tensor value) {
    value.set_requires_grad(true);
    entries_.emplace_back(std::move(name), value);
    return value;
}

std::vector<Tensor> ParamStore::tensors() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& [name, t] : entries_) out.push_back(t);
    return out;
}

std::size_t ParamStore::count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [name, t] : entries_) t.zero_grad();
}

Tensor uniform_fan_in(std::mt19937_64& rng, Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<Scalar> data(numel(shape));
    for (auto& v : data) v = dist(rng);
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace hess
