#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <vector>

#include <nlohmann/json.hpp>

#include "hess/dataset.hpp"
#include "hess/energy.hpp"
#include "hess/network.hpp"
#include "hess/synthetic.hpp"
#include "hess/train.hpp"

namespace hess {

struct ConfusionMatrix {
    std::size_t num_classes = 0;
    std::vector<std::uint64_t> counts;  // counts[gt · K + pred]

    explicit ConfusionMatrix(std::size_t k = 0) : num_classes(k), counts(k * k, 0) {}
    std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts[gt * num_classes + pred]; }
    std::uint64_t total() const;
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix&) const = default;
};

/// Pixels whose ground truth equals `ignore_index` are skipped. Any other
/// label outside [0, num_classes) throws std::out_of_range.
ConfusionMatrix confusion(const std::vector<int>& pred, const std::vector<int>& gt, std::size_t num_classes,
                          int ignore_index = 255);

struct Metrics {
    Scalar accuracy = 0.0;
    std::vector<std::optional<Scalar>> iou;  // empty for classes with zero union
    Scalar miou = 0.0;
};

/// Pixel accuracy trace/total and mIoU over classes with nonzero union.
/// Throws std::invalid_argument for an empty matrix.
Metrics metrics(const ConfusionMatrix& cm);

struct EvalOptions {
    std::size_t batch_size = 8;
    std::optional<std::filesystem::path> emit_images;  // NNNNN_pred.pgm / .ppm
    bool with_energy = false;
};

struct EvalReport {
    Metrics metrics;
    ConfusionMatrix confusion;
    std::size_t samples = 0;
    std::optional<EnergyReport> energy;
};

void to_json(nlohmann::json& j, const EvalReport& r);

EvalReport run_eval(const HybridNetwork& net, const Dataset& data, const EvalOptions& options = {});

struct ExperimentRow {
    std::string label;
    NetworkConfig config;
    std::size_t parameters = 0;
    Scalar accuracy = 0.0;
    Scalar miou = 0.0;
    Scalar final_loss = 0.0;
    EnergyReport energy;
};

void to_json(nlohmann::json& j, const ExperimentRow& r);

/// Train on `train_set`, evaluate and profile on `test_set`.
ExperimentRow run_experiment(const std::string& label, const NetworkConfig& net_cfg, const TrainConfig& train_cfg,
                             const Dataset& train_set, const Dataset& test_set);

/// One row per T; the events are re-binned to B = T.
std::vector<ExperimentRow> timestep_sweep(const NetworkConfig& base, const TrainConfig& train_cfg,
                                          const Dataset& train_set, const Dataset& test_set,
                                          const std::vector<std::size_t>& timesteps = {1, 3, 5, 7});

/// The eight on/off combinations of {ATW, EDS, CSF}, all-off first.
std::vector<NetworkConfig> ablation_configs(const NetworkConfig& base);
std::vector<ExperimentRow> ablation(const NetworkConfig& base, const TrainConfig& train_cfg, const Dataset& train_set,
                                    const Dataset& test_set);

/// Generated train/test pair. The test split uses its own seed.
struct SyntheticSplit {
    std::uint64_t train_seed = 1000;
    std::uint64_t test_seed = 900000;
    std::size_t train_samples = 200;
    std::size_t test_samples = 50;
    SyntheticConfig scene;
};

struct ExperimentConfig {
    NetworkConfig network;
    TrainConfig train;
    std::optional<SyntheticSplit> synthetic;
};

/// JSON object with optional "network", "train" and "synthetic" sections.
/// Missing fields keep their defaults.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::pair<Dataset, Dataset> make_synthetic_split(const SyntheticSplit& split);

/// Aligned plain-text rendering of sweep or ablation rows.
void print_table(std::ostream& out, const std::vector<ExperimentRow>& rows);

}  // namespace hess
