#include "hess/harness.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

#include "hess/image_io.hpp"

namespace hess {

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.num_classes != num_classes) throw std::invalid_argument("confusion matrices differ in class count");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    return *this;
}

ConfusionMatrix confusion(const std::vector<int>& pred, const std::vector<int>& gt, std::size_t num_classes,
                          int ignore_index) {
    if (pred.size() != gt.size()) {
        throw std::invalid_argument("confusion: " + std::to_string(pred.size()) + " predictions for " +
                                    std::to_string(gt.size()) + " labels");
    }
    ConfusionMatrix cm(num_classes);
    const int k = static_cast<int>(num_classes);
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] == ignore_index) continue;
        if (gt[i] < 0 || gt[i] >= k) {
            throw std::out_of_range("confusion: label " + std::to_string(gt[i]) + " at pixel " + std::to_string(i) +
                                    " outside [0, " + std::to_string(k) + ")");
        }
        if (pred[i] < 0 || pred[i] >= k) {
            throw std::out_of_range("confusion: prediction " + std::to_string(pred[i]) + " at pixel " +
                                    std::to_string(i) + " outside [0, " + std::to_string(k) + ")");
        }
        ++cm.counts[static_cast<std::size_t>(gt[i]) * num_classes + static_cast<std::size_t>(pred[i])];
    }
    return cm;
}

Metrics metrics(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (total == 0) throw std::invalid_argument("metrics: confusion matrix has no scored pixels");
    const std::size_t k = cm.num_classes;
    Metrics m;
    std::uint64_t trace = 0;
    Scalar iou_sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < k; ++c) {
        const std::uint64_t tp = cm.at(c, c);
        std::uint64_t fp = 0, fn = 0;
        for (std::size_t o = 0; o < k; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        trace += tp;
        const std::uint64_t uni = tp + fp + fn;
        if (uni == 0) {
            m.iou.emplace_back();
            continue;
        }
        const Scalar iou = static_cast<Scalar>(tp) / static_cast<Scalar>(uni);
        m.iou.emplace_back(iou);
        iou_sum += iou;
        ++present;
    }
    m.accuracy = static_cast<Scalar>(trace) / static_cast<Scalar>(total);
    m.miou = iou_sum / static_cast<Scalar>(present);
    return m;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
    nlohmann::json iou = nlohmann::json::array();
    for (const auto& v : r.metrics.iou) iou.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t g = 0; g < r.confusion.num_classes; ++g) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t p = 0; p < r.confusion.num_classes; ++p) row.push_back(r.confusion.at(g, p));
        rows.push_back(row);
    }
    j = {{"accuracy", r.metrics.accuracy},
         {"miou", r.metrics.miou},
         {"iou", iou},
         {"samples", r.samples},
         {"confusion", rows}};
    if (r.energy) j["energy"] = *r.energy;
}

EvalReport run_eval(const HybridNetwork& net, const Dataset& data, const EvalOptions& options) {
    if (data.samples.empty()) throw std::invalid_argument("run_eval: dataset is empty");
    if (options.batch_size == 0) throw std::invalid_argument("run_eval: batch_size must be >= 1");
    const std::size_t k = net.config().num_classes, hw = static_cast<std::size_t>(data.width) * data.height;
    if (options.emit_images) std::filesystem::create_directories(*options.emit_images);

    EvalReport report;
    report.confusion = ConfusionMatrix(k);
    for (std::size_t start = 0; start < data.samples.size(); start += options.batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(start + options.batch_size, data.samples.size()); ++i) idx.push_back(i);
        const Batch batch = make_batch(data, idx, net.config());
        const std::vector<int> pred = predict(net, batch);
        report.confusion += confusion(pred, batch.labels, k);
        if (options.emit_images) {
            for (std::size_t b = 0; b < idx.size(); ++b) {
                GrayImage img{data.width, data.height, std::vector<std::uint8_t>(hw)};
                for (std::size_t i = 0; i < hw; ++i) img.pixels[i] = static_cast<std::uint8_t>(pred[b * hw + i]);
                char stem[32];
                std::snprintf(stem, sizeof stem, "%05zu_pred", idx[b]);
                write_pgm(img, *options.emit_images / (std::string(stem) + ".pgm"));
                write_label_ppm(img, *options.emit_images / (std::string(stem) + ".ppm"));
            }
        }
    }
    report.samples = data.samples.size();
    report.metrics = metrics(report.confusion);
    if (options.with_energy) report.energy = profile(net, data);
    return report;
}

void to_json(nlohmann::json& j, const ExperimentRow& r) {
    j = {{"label", r.label},
         {"timesteps", r.config.timesteps},
         {"atw_on", r.config.atw_on},
         {"eds_on", r.config.eds_on},
         {"csf_on", r.config.csf_on},
         {"parameters", r.parameters},
         {"accuracy", r.accuracy},
         {"miou", r.miou},
         {"final_loss", r.final_loss},
         {"gflops_ann", r.energy.gflops_ann},
         {"gflops_snn", r.energy.gflops_snn},
         {"e_total_mj", r.energy.e_total_mj}};
}

ExperimentRow run_experiment(const std::string& label, const NetworkConfig& net_cfg, const TrainConfig& train_cfg,
                             const Dataset& train_set, const Dataset& test_set) {
    HybridNetwork net(net_cfg);
    const TrainResult trained = train(net, train_set, train_cfg);
    const EvalReport eval = run_eval(net, test_set);
    ExperimentRow row;
    row.label = label;
    row.config = net_cfg;
    row.parameters = net.params().count();
    row.accuracy = eval.metrics.accuracy;
    row.miou = eval.metrics.miou;
    row.final_loss = trained.losses.back();
    row.energy = profile(net, test_set);
    return row;
}

std::vector<ExperimentRow> timestep_sweep(const NetworkConfig& base, const TrainConfig& train_cfg,
                                          const Dataset& train_set, const Dataset& test_set,
                                          const std::vector<std::size_t>& timesteps) {
    if (timesteps.empty()) throw std::invalid_argument("timestep_sweep: empty timestep list");
    std::vector<ExperimentRow> rows;
    for (auto t : timesteps) {
        if (t == 0) throw std::invalid_argument("timestep_sweep: T must be >= 1");
        NetworkConfig cfg = base;
        cfg.timesteps = t;
        cfg.bins = t;
        rows.push_back(run_experiment("T=" + std::to_string(t), cfg, train_cfg, train_set, test_set));
    }
    return rows;
}

std::vector<NetworkConfig> ablation_configs(const NetworkConfig& base) {
    static const bool table[8][3] = {{false, false, false}, {true, false, false}, {false, true, false},
                                     {false, false, true},  {true, true, false},  {true, false, true},
                                     {false, true, true},   {true, true, true}};
    std::vector<NetworkConfig> out;
    for (const auto& row : table) {
        NetworkConfig c = base;
        c.atw_on = row[0];
        c.eds_on = row[1];
        c.csf_on = row[2];
        out.push_back(c);
    }
    return out;
}

std::vector<ExperimentRow> ablation(const NetworkConfig& base, const TrainConfig& train_cfg, const Dataset& train_set,
                                    const Dataset& test_set) {
    std::vector<ExperimentRow> rows;
    for (const auto& cfg : ablation_configs(base)) {
        std::string label = "F-E";
        if (cfg.atw_on) label += "+ATW";
        if (cfg.eds_on) label += "+EDS";
        if (cfg.csf_on) label += "+CSF";
        rows.push_back(run_experiment(label, cfg, train_cfg, train_set, test_set));
    }
    return rows;
}

ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("experiment config: expected a JSON object");
    ExperimentConfig c;
    if (j.contains("network")) c.network = j.at("network").get<NetworkConfig>();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    if (j.contains("synthetic")) {
        const auto& s = j.at("synthetic");
        SyntheticSplit split;
        split.train_seed = s.value("train_seed", split.train_seed);
        split.test_seed = s.value("test_seed", split.test_seed);
        split.train_samples = s.value("train_samples", split.train_samples);
        split.test_samples = s.value("test_samples", split.test_samples);
        split.scene.width = s.value("width", split.scene.width);
        split.scene.height = s.value("height", split.scene.height);
        split.scene.num_classes = s.value("classes", split.scene.num_classes);
        split.scene.num_shapes = s.value("shapes", split.scene.num_shapes);
        c.synthetic = split;
    }
    c.network.validate();
    c.train.validate();
    return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    try {
        return parse_experiment_config(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

std::pair<Dataset, Dataset> make_synthetic_split(const SyntheticSplit& split) {
    return {make_synthetic_dataset(split.train_seed, split.scene, split.train_samples),
            make_synthetic_dataset(split.test_seed, split.scene, split.test_samples)};
}

void print_table(std::ostream& out, const std::vector<ExperimentRow>& rows) {
    char line[160];
    std::snprintf(line, sizeof line, "%-16s %3s %3s %3s %3s %8s %8s %8s %10s %10s %9s\n", "config", "T", "ATW", "EDS",
                  "CSF", "params", "acc", "mIoU", "GFLOP_ANN", "GFLOP_SNN", "E(mJ)");
    out << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-16s %3zu %3s %3s %3s %8zu %8.4f %8.4f %10.6f %10.6f %9.6f\n",
                      r.label.c_str(), r.config.timesteps, r.config.atw_on ? "on" : "-", r.config.eds_on ? "on" : "-",
                      r.config.csf_on ? "on" : "-", r.parameters, r.accuracy, r.miou, r.energy.gflops_ann,
                      r.energy.gflops_snn, r.energy.e_total_mj);
        out << line;
    }
}

}  // namespace hess
