#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "hess/dataset.hpp"
#include "hess/energy.hpp"
#include "hess/events.hpp"
#include "hess/gradcheck.hpp"
#include "hess/harness.hpp"
#include "hess/train.hpp"
#include "hess/voxel.hpp"

using namespace hess;

namespace {

void write_json(const nlohmann::json& j, const std::string& path) {
    if (path.empty() || path == "-") {
        std::cout << j.dump(2) << "\n";
        return;
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

std::pair<Dataset, Dataset> experiment_data(const ExperimentConfig& cfg, const std::string& train_dir,
                                            const std::string& test_dir) {
    if (!train_dir.empty()) {
        Dataset train = load_dataset(train_dir);
        Dataset test = test_dir.empty() ? train : load_dataset(test_dir);
        return {std::move(train), std::move(test)};
    }
    if (cfg.synthetic) return make_synthetic_split(*cfg.synthetic);
    return make_synthetic_split(SyntheticSplit{});
}

std::vector<std::size_t> parse_list(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t v = 0;
        const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (ec != std::errc{} || end != item.data() + item.size())
            throw std::invalid_argument("bad timestep list entry '" + item + "'");
        out.push_back(v);
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid ANN/SNN event segmentation toolkit"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic moving-shapes dataset");
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    SyntheticConfig gen_cfg;
    std::size_t gen_samples = 10;
    gen->add_option("--seed", gen_seed);
    gen->add_option("--out-dir", gen_out)->required();
    gen->add_option("--width", gen_cfg.width);
    gen->add_option("--height", gen_cfg.height);
    gen->add_option("--classes", gen_cfg.num_classes);
    gen->add_option("--shapes", gen_cfg.num_shapes);
    gen->add_option("--samples", gen_samples);

    auto* vox = app.add_subcommand("voxelize", "Voxelize an event file to JSON");
    std::string vox_events, vox_out;
    std::size_t vox_bins = 5;
    std::uint32_t vox_w = 0, vox_h = 0;
    std::optional<std::uint64_t> vox_t0, vox_t1;
    vox->add_option("--events", vox_events)->required()->check(CLI::ExistingFile);
    vox->add_option("--bins", vox_bins)->required();
    vox->add_option("--out", vox_out)->required();
    vox->add_option("--width", vox_w, "Sensor width (CSV input)");
    vox->add_option("--height", vox_h, "Sensor height (CSV input)");
    vox->add_option("--t-start", vox_t0, "Window start in us (default: first event)");
    vox->add_option("--t-end", vox_t1, "Window end in us (default: last event)");

    auto* tr = app.add_subcommand("train", "Train a network");
    std::string tr_config, tr_data, tr_out;
    tr->add_option("--config", tr_config)->check(CLI::ExistingFile);
    tr->add_option("--data", tr_data)->required()->check(CLI::ExistingDirectory);
    tr->add_option("--out", tr_out)->required();

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    std::string ev_ckpt, ev_data, ev_report, ev_images;
    ev->add_option("--ckpt", ev_ckpt)->required()->check(CLI::ExistingFile);
    ev->add_option("--data", ev_data)->required()->check(CLI::ExistingDirectory);
    ev->add_option("--report", ev_report);
    ev->add_option("--emit-images", ev_images);

    auto* pr = app.add_subcommand("profile", "Operation counts and energy of a checkpoint");
    std::string pr_ckpt, pr_data, pr_report;
    pr->add_option("--ckpt", pr_ckpt)->required()->check(CLI::ExistingFile);
    pr->add_option("--data", pr_data)->required()->check(CLI::ExistingDirectory);
    pr->add_option("--report", pr_report);

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    std::string gc_module = "all";
    gc->add_option("--module", gc_module)->check(CLI::IsMember({"all", "atw", "eds", "csf", "lif", "net"}));

    auto* sw = app.add_subcommand("sweep-timesteps", "Train and evaluate at several timestep counts");
    std::string sw_config, sw_list = "1,3,5,7", sw_data, sw_test, sw_report;
    sw->add_option("--config", sw_config)->check(CLI::ExistingFile);
    sw->add_option("--list", sw_list);
    sw->add_option("--data", sw_data, "Training dataset directory (default: synthetic section of the config)");
    sw->add_option("--test-data", sw_test);
    sw->add_option("--report", sw_report);

    auto* ab = app.add_subcommand("ablate", "Train and evaluate the eight fusion-module combinations");
    std::string ab_config, ab_data, ab_test, ab_report;
    ab->add_option("--config", ab_config)->check(CLI::ExistingFile);
    ab->add_option("--data", ab_data);
    ab->add_option("--test-data", ab_test);
    ab->add_option("--report", ab_report);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            save_dataset(make_synthetic_dataset(gen_seed, gen_cfg, gen_samples), gen_out);
            std::cout << "wrote " << gen_samples << " samples to " << gen_out << "\n";
        } else if (vox->parsed()) {
            const EventStream stream = read_events(vox_events, vox_w, vox_h);
            std::uint64_t t0 = 0, t1 = 1;
            if (!stream.events.empty()) {
                t0 = stream.events.front().t;
                t1 = std::max(stream.events.back().t, t0 + 1);
            }
            const VoxelGrid g = voxelize(stream, vox_bins, vox_t0.value_or(t0), vox_t1.value_or(t1));
            write_json({{"bins", g.bins},
                        {"height", g.height},
                        {"width", g.width},
                        {"t_start", g.t_start},
                        {"t_end", g.t_end},
                        {"data", g.data}},
                       vox_out);
        } else if (tr->parsed()) {
            const ExperimentConfig cfg = tr_config.empty() ? ExperimentConfig{} : load_experiment_config(tr_config);
            const Dataset data = load_dataset(tr_data);
            HybridNetwork net(cfg.network);
            AdamW opt(net.params(), cfg.train.weight_decay);
            const std::size_t every = std::max<std::size_t>(1, cfg.train.iterations / 20);
            train(net, data, cfg.train, &opt, [&](std::size_t it, Scalar loss, Scalar lr) {
                if ((it + 1) % every == 0 || it + 1 == cfg.train.iterations)
                    std::printf("iter %6zu  loss %.6f  lr %.3e\n", it + 1, loss, lr);
            });
            save_checkpoint(tr_out, net, &opt);
            std::cout << "saved " << tr_out << "\n";
        } else if (ev->parsed()) {
            const Checkpoint ck = load_checkpoint(ev_ckpt);
            EvalOptions opts;
            if (!ev_images.empty()) opts.emit_images = ev_images;
            const EvalReport r = run_eval(ck.net, load_dataset(ev_data), opts);
            std::printf("samples %zu  accuracy %.4f  mIoU %.4f\n", r.samples, r.metrics.accuracy, r.metrics.miou);
            if (!ev_report.empty()) write_json(r, ev_report);
        } else if (pr->parsed()) {
            const Checkpoint ck = load_checkpoint(pr_ckpt);
            const EnergyReport r = profile(ck.net, load_dataset(pr_data));
            std::printf("%-16s %4s %14s %8s %14s\n", "layer", "kind", "MACs", "rate", "ops");
            for (const auto& l : r.layers)
                std::printf("%-16s %4s %14.0f %8.4f %14.1f\n", l.name.c_str(), l.kind == CostKind::ANN ? "ANN" : "SNN",
                            l.macs, l.spike_rate, l.ops);
            std::printf("GFLOP ANN %.6f  GFLOP SNN %.6f  E %.6f mJ\n", r.gflops_ann, r.gflops_snn, r.e_total_mj);
            if (!pr_report.empty()) write_json(r, pr_report);
        } else if (gc->parsed()) {
            bool ok = true;
            for (const auto& r : run_gradchecks(gc_module)) {
                std::printf("%-4s max_rel_error %.3e  tolerance %.0e  entries %zu  instances %zu  skipped %zu  %s\n",
                            r.module.c_str(), r.max_rel_error, r.tolerance, r.entries, r.instances, r.skipped,
                            r.passed() ? "ok" : "FAILED");
                ok = ok && r.passed();
            }
            return ok ? 0 : 1;
        } else if (sw->parsed()) {
            const ExperimentConfig cfg = sw_config.empty() ? ExperimentConfig{} : load_experiment_config(sw_config);
            const auto [train_set, test_set] = experiment_data(cfg, sw_data, sw_test);
            const auto rows = timestep_sweep(cfg.network, cfg.train, train_set, test_set, parse_list(sw_list));
            print_table(std::cout, rows);
            if (!sw_report.empty()) write_json(rows, sw_report);
        } else if (ab->parsed()) {
            const ExperimentConfig cfg = ab_config.empty() ? ExperimentConfig{} : load_experiment_config(ab_config);
            const auto [train_set, test_set] = experiment_data(cfg, ab_data, ab_test);
            const auto rows = ablation(cfg.network, cfg.train, train_set, test_set);
            print_table(std::cout, rows);
            if (!ab_report.empty()) write_json(rows, ab_report);
        }
    } catch (const std::exception& e) {
        std::cerr << "hess: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
