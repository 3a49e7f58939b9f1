#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "hess/dataset.hpp"
#include "hess/network.hpp"

namespace hess {

struct TrainConfig {
    Scalar learning_rate = 3e-3;
    Scalar weight_decay = 1e-4;
    std::size_t iterations = 1000;
    std::size_t warmup = 50;
    Scalar poly_power = 0.9;
    std::size_t batch_size = 4;
    std::uint64_t seed = 0;
    int ignore_index = 255;
    bool flip = false;  // random horizontal flips
    /// Draw a new sample order every epoch. Off: one shuffle, then cycle, so
    /// any window of one epoch's iterations sees every sample exactly once.
    bool reshuffle = false;

    /// Throws std::invalid_argument on an unusable configuration.
    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Linear warmup to the base rate, then polynomial decay to zero.
Scalar learning_rate_at(const TrainConfig& cfg, std::size_t iteration);

/// Decoupled weight decay Adam (β1 0.9, β2 0.999, ε 1e-8). Decay applies to
/// tensors of rank ≥ 2 only.
class AdamW {
  public:
    explicit AdamW(const ParamStore& params, Scalar weight_decay = 1e-4);

    void step(ParamStore& params, Scalar lr);

    std::uint64_t steps() const { return steps_; }
    Scalar weight_decay() const { return weight_decay_; }
    std::vector<std::vector<Scalar>>& first_moment() { return m_; }
    std::vector<std::vector<Scalar>>& second_moment() { return v_; }
    const std::vector<std::vector<Scalar>>& first_moment() const { return m_; }
    const std::vector<std::vector<Scalar>>& second_moment() const { return v_; }
    void set_steps(std::uint64_t s) { steps_ = s; }

  private:
    Scalar weight_decay_;
    std::uint64_t steps_ = 0;
    std::vector<std::vector<Scalar>> m_, v_;
};

struct TrainResult {
    std::vector<Scalar> losses;  // one per iteration
};

using TrainCallback = std::function<void(std::size_t iteration, Scalar loss, Scalar lr)>;

/// Minibatch training with epoch-wise shuffling. Throws std::runtime_error
/// on a non-finite loss.
TrainResult train(HybridNetwork& net, const Dataset& data, const TrainConfig& cfg, AdamW* optimizer = nullptr,
                  const TrainCallback& callback = {});

/// Binary checkpoint: "HESS", u32 version, u32 length + network config JSON,
/// u32 parameter count, then per parameter u32 name length, name, u32 rank,
/// u32 dims, f64 values; then u64 optimizer steps, f64 weight decay and the
/// two moment buffers in parameter order. All little-endian.
void save_checkpoint(const std::filesystem::path& path, const HybridNetwork& net, const AdamW* optimizer = nullptr);

struct Checkpoint {
    NetworkConfig config;
    HybridNetwork net;
    AdamW optimizer;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hess
