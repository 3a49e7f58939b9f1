#include "hess/network.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

#include "hess/ops.hpp"

namespace hess {

void NetworkConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("network config: " + what); };
    if (input_channels != 1 && input_channels != 3) fail("input_channels must be 1 or 3");
    if (bins == 0) fail("bins must be >= 1");
    if (timesteps == 0) fail("timesteps must be >= 1");
    if (!remap_timesteps && bins != timesteps) {
        fail("bins (" + std::to_string(bins) + ") != timesteps (" + std::to_string(timesteps) +
             ") and timestep remapping is disabled");
    }
    if (scales.empty()) fail("need at least one scale");
    std::size_t prev = 1;
    for (const auto& s : scales) {
        if (s.factor <= prev || s.factor % prev != 0) {
            fail("scale factors must strictly increase by integer ratios (got " + std::to_string(s.factor) +
                 " after " + std::to_string(prev) + ")");
        }
        if (s.channels == 0 || s.channels % reduction != 0) {
            fail("channel width " + std::to_string(s.channels) + " not divisible by reduction " +
                 std::to_string(reduction));
        }
        prev = s.factor;
    }
    if (num_classes == 0) fail("num_classes must be >= 1");
    if (points == 0) fail("points must be >= 1");
    if (reduction == 0) fail("reduction must be >= 1");
    lif.validate();
}

std::size_t NetworkConfig::input_bins() const { return remap_timesteps ? timesteps : bins; }

bool NetworkConfig::operator==(const NetworkConfig& o) const {
    return input_channels == o.input_channels && bins == o.bins && timesteps == o.timesteps && scales == o.scales &&
           num_classes == o.num_classes && points == o.points && reduction == o.reduction && atw_on == o.atw_on &&
           eds_on == o.eds_on && csf_on == o.csf_on && remap_timesteps == o.remap_timesteps && seed == o.seed &&
           lif.tau == o.lif.tau && lif.v_threshold == o.lif.v_threshold && lif.v_reset == o.lif.v_reset &&
           lif.surrogate_alpha == o.lif.surrogate_alpha;
}

void to_json(nlohmann::json& j, const NetworkConfig& c) {
    nlohmann::json scales = nlohmann::json::array();
    for (const auto& s : c.scales) scales.push_back({s.factor, s.channels});
    j = {{"input_channels", c.input_channels},
         {"bins", c.bins},
         {"timesteps", c.timesteps},
         {"scales", scales},
         {"num_classes", c.num_classes},
         {"points", c.points},
         {"reduction", c.reduction},
         {"atw_on", c.atw_on},
         {"eds_on", c.eds_on},
         {"csf_on", c.csf_on},
         {"remap_timesteps", c.remap_timesteps},
         {"seed", c.seed},
         {"lif",
          {{"tau", c.lif.tau},
           {"v_threshold", c.lif.v_threshold},
           {"v_reset", c.lif.v_reset},
           {"surrogate_alpha", c.lif.surrogate_alpha}}}};
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
    NetworkConfig d;
    c.input_channels = j.value("input_channels", d.input_channels);
    c.bins = j.value("bins", d.bins);
    c.timesteps = j.value("timesteps", d.timesteps);
    c.scales = d.scales;
    if (j.contains("scales")) {
        c.scales.clear();
        for (const auto& s : j.at("scales")) c.scales.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
    }
    c.num_classes = j.value("num_classes", d.num_classes);
    c.points = j.value("points", d.points);
    c.reduction = j.value("reduction", d.reduction);
    c.atw_on = j.value("atw_on", d.atw_on);
    c.eds_on = j.value("eds_on", d.eds_on);
    c.csf_on = j.value("csf_on", d.csf_on);
    c.remap_timesteps = j.value("remap_timesteps", d.remap_timesteps);
    c.seed = j.value("seed", d.seed);
    c.lif = d.lif;
    if (j.contains("lif")) {
        const auto& l = j.at("lif");
        c.lif.tau = l.value("tau", d.lif.tau);
        c.lif.v_threshold = l.value("v_threshold", d.lif.v_threshold);
        c.lif.v_reset = l.value("v_reset", d.lif.v_reset);
        c.lif.surrogate_alpha = l.value("surrogate_alpha", d.lif.surrogate_alpha);
    }
}

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices, const NetworkConfig& config) {
    config.validate();
    if (indices.empty()) throw std::invalid_argument("make_batch: no samples selected");
    const std::size_t n = indices.size(), h = data.height, w = data.width, cin = config.input_channels;
    const std::size_t t = config.input_bins();
    for (const auto& s : config.scales)
        if (h % s.factor != 0 || w % s.factor != 0) {
            throw std::invalid_argument("make_batch: " + std::to_string(w) + "x" + std::to_string(h) +
                                        " input is not divisible by scale factor " + std::to_string(s.factor));
        }

    std::vector<Scalar> frames(n * cin * h * w), voxel(n * t * h * w);
    Batch batch;
    batch.refs.assign(config.scales.size(), {});
    batch.labels.resize(n * h * w);
    for (std::size_t b = 0; b < n; ++b) {
        if (indices[b] >= data.samples.size()) throw std::out_of_range("make_batch: sample index out of range");
        const Sample& s = data.samples[indices[b]];
        if (s.frame.width != w || s.frame.height != h || s.labels.width != w || s.labels.height != h) {
            throw std::invalid_argument("make_batch: sample " + std::to_string(indices[b]) +
                                        " does not match the dataset geometry");
        }
        for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t i = 0; i < h * w; ++i) frames[(b * cin + c) * h * w + i] = s.frame.pixels[i] / 255.0;
        for (std::size_t i = 0; i < h * w; ++i) batch.labels[b * h * w + i] = s.labels.pixels[i];

        const VoxelGrid raw = voxelize(s.events, t, s.t_start, s.t_end);
        const VoxelGrid norm = znorm(raw);
        std::copy(norm.data.begin(), norm.data.end(), voxel.begin() + static_cast<std::ptrdiff_t>(b * t * h * w));
        for (std::size_t i = 0; i < config.scales.size(); ++i) {
            const std::size_t f = config.scales[i].factor;
            batch.refs[i].push_back(extract_reference_points(downsample_voxel(raw, f), f));
        }
    }
    batch.frames = Tensor(Shape{n, cin, h, w}, std::move(frames));
    batch.voxel = Tensor(Shape{n, t, h, w}, std::move(voxel));
    return batch;
}

HybridNetwork::HybridNetwork(const NetworkConfig& config) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(config_.seed);
    std::size_t ann_in = config_.input_channels, snn_in = 1, prev_factor = 1;
    for (std::size_t i = 0; i < config_.scales.size(); ++i) {
        const std::size_t c = config_.scales[i].channels, stride = config_.scales[i].factor / prev_factor;
        const std::string pre = "s" + std::to_string(i) + ".";
        AnnStage a;
        a.stride = stride;
        a.weight = params_.add(pre + "ann.weight", uniform_fan_in(rng, {c, ann_in, 3, 3}, ann_in * 9));
        a.bias = params_.add(pre + "ann.bias", uniform_fan_in(rng, {c}, ann_in * 9));
        a.gamma = params_.add(pre + "ann.gamma", Tensor::full({c}, 1.0));
        a.beta = params_.add(pre + "ann.beta", Tensor::zeros({c}));
        ann_.push_back(a);
        SnnStage s;
        s.stride = stride;
        s.weight = params_.add(pre + "snn.weight", uniform_fan_in(rng, {c, snn_in, 3, 3}, snn_in * 9));
        snn_.push_back(s);
        if (config_.atw_on)
            atw_.push_back(ATWParams::create(c, config_.reduction, config_.points, rng, &params_, pre + "atw"));
        if (config_.eds_on) eds_.push_back(EDSParams::create(c, c, config_.points, rng, &params_, pre + "eds"));
        if (config_.csf_on) {
            csf_ann_.push_back(CSFParams::create(c, rng, &params_, pre + "csf_ann"));
            csf_snn_.push_back(CSFParams::create(c, rng, &params_, pre + "csf_snn"));
        }
        lif_.push_back(config_.lif);
        ann_in = snn_in = c;
        prev_factor = config_.scales[i].factor;
    }
    for (std::size_t i = 0; i < config_.scales.size(); ++i) {
        const std::size_t c = config_.scales[i].channels;
        head_w_.push_back(params_.add("head.w" + std::to_string(i),
                                      uniform_fan_in(rng, {config_.num_classes, c, 1, 1}, c)));
    }
    head_b_ = params_.add("head.bias", Tensor::zeros({config_.num_classes}));
}

Tensor HybridNetwork::ann_stage(const Tensor& x, std::size_t i) const {
    const auto& s = ann_[i];
    return relu(group_norm(conv2d(x, s.weight, s.bias, s.stride, 1), s.gamma, s.beta));
}

// Per-scale 1×1 projections to class logits, upsampled to the finest scale
// and summed, then upsampled to the input size.
Tensor HybridNetwork::head(const std::vector<Tensor>& fused, std::size_t height, std::size_t width) const {
    const std::size_t fh = fused[0].dim(2), fw = fused[0].dim(3);
    Tensor logits = conv2d(fused[0], head_w_[0], head_b_, 1, 0);
    for (std::size_t i = 1; i < fused.size(); ++i)
        logits = add(logits, upsample_bilinear(conv2d(fused[i], head_w_[i], Tensor(), 1, 0), fh, fw));
    return upsample_bilinear(logits, height, width);
}

Tensor HybridNetwork::forward(const Batch& batch, ForwardTrace* trace) const {
    const Tensor& frames = batch.frames;
    const Tensor& voxel = batch.voxel;
    if (!frames.defined() || frames.rank() != 4 || frames.dim(1) != config_.input_channels) {
        throw ShapeError("forward: frames must be N×" + std::to_string(config_.input_channels) + "×H×W");
    }
    const std::size_t n = frames.dim(0), h = frames.dim(2), w = frames.dim(3), t = config_.timesteps;
    if (!voxel.defined() || voxel.rank() != 4 || voxel.dim(0) != n || voxel.dim(2) != h || voxel.dim(3) != w) {
        throw ShapeError("forward: voxel must be N×B×H×W matching the frames " + shape_str(frames.shape()));
    }
    if (voxel.dim(1) != t) {
        throw std::invalid_argument("forward: voxel has " + std::to_string(voxel.dim(1)) + " bins but the SNN runs " +
                                    std::to_string(t) + " timesteps");
    }
    if (config_.eds_on && batch.refs.size() != config_.scales.size()) {
        throw std::invalid_argument("forward: need reference points for every scale");
    }
    if (trace) {
        trace->stages.clear();
        trace->min_lif_margin = std::numeric_limits<Scalar>::infinity();
    }

    Tensor ann_in = frames;
    Tensor snn_in = reshape(voxel, {n, t, 1, h, w});
    std::vector<Tensor> fused;
    for (std::size_t i = 0; i < config_.scales.size(); ++i) {
        const std::size_t c = config_.scales[i].channels;
        Tensor f_ann = ann_stage(ann_in, i);
        const std::size_t fh = f_ann.dim(2), fw = f_ann.dim(3);

        const std::size_t cin = snn_in.dim(2);
        Tensor currents = conv2d(reshape(snn_in, {n * t, cin, snn_in.dim(3), snn_in.dim(4)}), snn_[i].weight, Tensor(),
                                 snn_[i].stride, 1);
        LIFTrace lif_trace;
        Tensor spikes = lif_sequence(reshape(currents, {n, t, c, fh, fw}), lif_[i], spike_fn_, &lif_trace);

        Tensor f_ann_o = f_ann;
        if (config_.atw_on) {
            const auto& p = atw_[i];
            f_ann_o = atw_inject(f_ann, atw_collapse(spikes, atw_temporal_weights(spikes, p)), p);
        }
        Tensor s_o = config_.eds_on ? eds_inject(spikes, f_ann_o, batch.refs[i], eds_[i]) : spikes;
        fused.push_back(config_.csf_on ? csf_fuse(f_ann_o, s_o, csf_ann_[i], csf_snn_[i])
                                       : add(f_ann_o, sum_axis(s_o, 1)));

        if (trace) {
            ForwardTrace::Stage st;
            st.height = fh;
            st.width = fw;
            st.snn_input_activity = activity_rate(snn_in);
            st.spike_rate = activity_rate(spikes);
            if (i < batch.refs.size())
                for (const auto& r : batch.refs[i]) st.ref_counts.push_back(r.size());
            trace->stages.push_back(std::move(st));
            trace->min_lif_margin = std::min(trace->min_lif_margin, lif_trace.min_margin);
        }
        ann_in = f_ann_o;
        snn_in = s_o;
    }
    return head(fused, h, w);
}

Tensor HybridNetwork::forward_frames_only(const Tensor& frames) const {
    if (!frames.defined() || frames.rank() != 4 || frames.dim(1) != config_.input_channels) {
        throw ShapeError("forward_frames_only: frames must be N×" + std::to_string(config_.input_channels) + "×H×W");
    }
    Tensor x = frames;
    std::vector<Tensor> fused;
    for (std::size_t i = 0; i < config_.scales.size(); ++i) {
        x = ann_stage(x, i);
        fused.push_back(config_.csf_on ? csf_select(x, csf_ann_[i]) : x);
    }
    return head(fused, frames.dim(2), frames.dim(3));
}

Tensor segmentation_loss(const Tensor& logits, const std::vector<int>& labels, int ignore_index) {
    return cross_entropy(logits, labels, ignore_index);
}

std::vector<int> argmax_labels(const Tensor& logits) {
    if (logits.rank() != 4) throw ShapeError("argmax_labels: expected N×K×H×W logits");
    const std::size_t n = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
    std::vector<int> out(n * hw, 0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
            std::size_t best = 0;
            Scalar best_v = logits[b * k * hw + i];
            for (std::size_t c = 1; c < k; ++c) {
                const Scalar v = logits[(b * k + c) * hw + i];
                if (v > best_v) {
                    best_v = v;
                    best = c;
                }
            }
            out[b * hw + i] = static_cast<int>(best);
        }
    return out;
}

std::vector<int> predict(const HybridNetwork& net, const Batch& batch) {
    NoGradGuard guard;
    return argmax_labels(net.forward(batch));
}

}  // namespace hess
