#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hess/dataset.hpp"
#include "hess/fusion.hpp"
#include "hess/lif.hpp"
#include "hess/params.hpp"
#include "hess/tensor.hpp"
#include "hess/voxel.hpp"

namespace hess {

struct ScaleSpec {
    std::size_t factor = 2;  // input pixels per feature cell
    std::size_t channels = 16;
    bool operator==(const ScaleSpec&) const = default;
};

struct NetworkConfig {
    std::size_t input_channels = 1;
    std::size_t bins = 5;
    std::size_t timesteps = 5;
    std::vector<ScaleSpec> scales{{2, 16}, {4, 32}, {8, 64}};
    std::size_t num_classes = 3;
    std::size_t points = 4;
    std::size_t reduction = 4;
    bool atw_on = true;
    bool eds_on = true;
    bool csf_on = true;
    /// Re-bin the events to T bins when T != B; otherwise a mismatch is an error.
    bool remap_timesteps = true;
    std::uint64_t seed = 0;
    LIFConfig lif;

    /// Throws std::invalid_argument on an unusable configuration.
    void validate() const;
    /// Bins the SNN branch actually consumes.
    std::size_t input_bins() const;
    bool operator==(const NetworkConfig&) const;
};

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

/// Network inputs for a batch of N samples.
struct Batch {
    Tensor frames;  // N×Cin×H×W, intensities in [0, 1]
    Tensor voxel;   // N×T×H×W, z-normalized
    std::vector<std::vector<ReferencePointSet>> refs;  // [scale][sample]
    std::vector<int> labels;                            // N·H·W
    std::size_t size() const { return frames.defined() ? frames.dim(0) : 0; }
};

/// Voxelizes, normalizes and extracts reference points for the given samples.
/// Reference points come from the raw (unnormalized) voxel pooled to each scale.
Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices, const NetworkConfig& config);

/// Per-stage quantities recorded during a forward pass.
struct ForwardTrace {
    struct Stage {
        std::size_t height = 0, width = 0;  // feature size at this scale
        Scalar snn_input_activity = 0.0;    // nonzero fraction of the SNN conv input
        Scalar spike_rate = 0.0;            // output spikes of the LIF layer
        std::vector<std::size_t> ref_counts;
    };
    std::vector<Stage> stages;
    Scalar min_lif_margin = 0.0;
};

class HybridNetwork {
  public:
    explicit HybridNetwork(const NetworkConfig& config);

    const NetworkConfig& config() const { return config_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    /// Logits N×num_classes×H×W.
    Tensor forward(const Batch& batch, ForwardTrace* trace = nullptr) const;
    /// Same architecture with the SNN branch and both injectors removed.
    Tensor forward_frames_only(const Tensor& frames) const;

    /// Forward nonlinearity of every LIF layer (Sigmoid for gradient checks).
    void set_spike_function(SpikeFunction fn) { spike_fn_ = fn; }
    /// Per-stage LIF thresholds; gradient checks nudge them off crossings.
    std::vector<LIFConfig>& lif_configs() { return lif_; }

  private:
    struct AnnStage {
        Tensor weight, bias, gamma, beta;
        std::size_t stride = 2;
    };
    struct SnnStage {
        Tensor weight;
        std::size_t stride = 2;
    };

    Tensor ann_stage(const Tensor& x, std::size_t i) const;
    Tensor head(const std::vector<Tensor>& fused, std::size_t height, std::size_t width) const;

    NetworkConfig config_;
    ParamStore params_;
    std::vector<AnnStage> ann_;
    std::vector<SnnStage> snn_;
    std::vector<ATWParams> atw_;
    std::vector<EDSParams> eds_;
    std::vector<CSFParams> csf_ann_, csf_snn_;
    std::vector<Tensor> head_w_;
    Tensor head_b_;
    std::vector<LIFConfig> lif_;
    SpikeFunction spike_fn_ = SpikeFunction::Heaviside;
};

/// Mean softmax cross-entropy over non-ignored pixels.
Tensor segmentation_loss(const Tensor& logits, const std::vector<int>& labels, int ignore_index = 255);

/// Argmax over classes, ties toward the lower index. N·H·W labels.
std::vector<int> argmax_labels(const Tensor& logits);
std::vector<int> predict(const HybridNetwork& net, const Batch& batch);

}  // namespace hess
