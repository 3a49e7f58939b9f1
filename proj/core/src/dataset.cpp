#include "hess/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace hess {

namespace {

std::string stem(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05zu", i);
    return buf;
}

}  // namespace

Dataset make_synthetic_dataset(std::uint64_t seed, const SyntheticConfig& config, std::size_t count) {
    SyntheticConfig cfg = config;
    cfg.frame_count = 2;
    Dataset data;
    data.width = cfg.width;
    data.height = cfg.height;
    data.num_classes = cfg.num_classes;
    for (std::size_t i = 0; i < count; ++i) {
        auto scene = gen_synthetic(seed + i, cfg);
        Sample s;
        s.frame = scene.frames.back();
        s.labels = scene.labels.back();
        s.events = std::move(scene.events);
        s.t_start = scene.frame_times.front();
        s.t_end = scene.frame_times.back();
        data.samples.push_back(std::move(s));
    }
    return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json meta;
    meta["width"] = data.width;
    meta["height"] = data.height;
    meta["num_classes"] = data.num_classes;
    meta["samples"] = nlohmann::json::array();
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        const auto& s = data.samples[i];
        const auto name = stem(i);
        write_evt1(s.events, dir / (name + ".evt"));
        write_pgm(s.frame, dir / (name + "_frame.pgm"));
        write_pgm(s.labels, dir / (name + "_label.pgm"));
        meta["samples"].push_back({{"name", name}, {"t_start", s.t_start}, {"t_end", s.t_end}});
    }
    std::ofstream out(dir / "dataset.json", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (dir / "dataset.json").string());
    out << meta.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "dataset.json");
    if (!in) throw std::runtime_error("cannot open " + (dir / "dataset.json").string());
    nlohmann::json meta;
    try {
        in >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error((dir / "dataset.json").string() + ": " + e.what());
    }
    Dataset data;
    data.width = meta.at("width").get<std::uint32_t>();
    data.height = meta.at("height").get<std::uint32_t>();
    data.num_classes = meta.at("num_classes").get<int>();
    for (const auto& entry : meta.at("samples")) {
        const auto name = entry.at("name").get<std::string>();
        Sample s;
        s.events = read_evt1(dir / (name + ".evt"));
        s.frame = read_pgm(dir / (name + "_frame.pgm"));
        s.labels = read_pgm(dir / (name + "_label.pgm"));
        s.t_start = entry.at("t_start").get<std::uint64_t>();
        s.t_end = entry.at("t_end").get<std::uint64_t>();
        if (s.frame.width != data.width || s.frame.height != data.height || s.labels.width != data.width ||
            s.labels.height != data.height || s.events.width != data.width || s.events.height != data.height) {
            throw std::runtime_error(name + ": geometry does not match dataset.json");
        }
        data.samples.push_back(std::move(s));
    }
    return data;
}

Sample flip_horizontal(const Sample& sample) {
    Sample out = sample;
    const std::size_t w = sample.frame.width;
    for (std::size_t y = 0; y < sample.frame.height; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            out.frame.pixels[y * w + x] = sample.frame.pixels[y * w + (w - 1 - x)];
            out.labels.pixels[y * w + x] = sample.labels.pixels[y * w + (w - 1 - x)];
        }
    for (auto& e : out.events.events) e.x = static_cast<std::uint16_t>(out.events.width - 1 - e.x);
    return out;
}

}  // namespace hess
