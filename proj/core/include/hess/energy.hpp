#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hess/dataset.hpp"
#include "hess/network.hpp"

namespace hess {

/// Energy per operation in pJ: dense multiply-accumulate and spike-driven
/// accumulate (45 nm figures). One table "FLOP" is one MAC.
inline constexpr Scalar kAnnPjPerOp = 4.6;
inline constexpr Scalar kSnnPjPerOp = 0.9;

/// Convolution or fully connected layer geometry. A linear layer is a 1×1
/// convolution over a 1×1 output.
struct LayerSpec {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel_h = 1, kernel_w = 1;
    std::size_t out_h = 1, out_w = 1;

    static LayerSpec conv(std::size_t cin, std::size_t cout, std::size_t k, std::size_t out_h, std::size_t out_w);
    static LayerSpec linear(std::size_t din, std::size_t dout);
};

/// Cout·Hout·Wout·Cin·Kh·Kw.
Scalar count_ann_macs(const LayerSpec& spec);
/// MACs × input spike rate × T. Throws std::invalid_argument unless the rate
/// lies in [0, 1].
Scalar count_snn_synops(const LayerSpec& spec, Scalar spike_rate, std::size_t timesteps);

/// mJ for the given GFLOP counts: 4.6·ann + 0.9·snn.
Scalar energy_total(Scalar gflops_ann, Scalar gflops_snn);

struct EnergyObservation {
    Scalar gflops_ann = 0.0;
    Scalar gflops_snn = 0.0;
    Scalar e_total_mj = 0.0;
};

struct EnergyCoefficients {
    Scalar ann_pj = 0.0;
    Scalar snn_pj = 0.0;
};

/// Least-squares E ≈ a·ann + b·snn without intercept. Throws when the rows do
/// not determine both coefficients.
EnergyCoefficients fit_energy_coefficients(const std::vector<EnergyObservation>& rows);

enum class CostKind { ANN, SNN };

struct LayerCost {
    std::string name;
    CostKind kind = CostKind::ANN;
    Scalar macs = 0.0;        // dense MACs of one evaluation
    Scalar spike_rate = 1.0;  // input activity (SNN and encoding layers)
    std::size_t timesteps = 1;
    Scalar ops = 0.0;  // counted operations, averaged over samples
};

struct EnergyReport {
    Scalar gflops_ann = 0.0;
    Scalar gflops_snn = 0.0;
    Scalar e_total_mj = 0.0;
    std::size_t samples = 0;
    std::vector<LayerCost> layers;
};

void to_json(nlohmann::json& j, const EnergyReport& r);

/// Runs one forward per sample and averages per-layer operation counts.
/// Spike-driven convolutions go to the SNN column at their measured input
/// activity; everything real-valued (including the voxel encoding layer and
/// all fusion arithmetic) goes to the ANN column.
EnergyReport profile(const HybridNetwork& net, const Dataset& data, const std::vector<std::size_t>& indices = {});

}  // namespace hess
