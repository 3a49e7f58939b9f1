#include "hess/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace hess {

double class_intensity(int class_id, int num_classes) {
    if (class_id <= 0) return 0.1;
    const int levels = std::max(1, num_classes - 2);
    return 0.4 + 0.6 * static_cast<double>(class_id - 1) / static_cast<double>(levels);
}

double log_intensity(double intensity) { return std::log1p(9.0 * intensity) / std::log(10.0); }

namespace {

bool covers(const MovingRect& r, double frac, double px, double py) {
    const double x = r.x0 + r.vx * frac;
    const double y = r.y0 + r.vy * frac;
    return px >= x && px < x + r.w && py >= y && py < y + r.h;
}

// Index of the topmost shape covering each pixel centre, -1 for background.
std::vector<int> coverage(const SyntheticConfig& cfg, const std::vector<MovingRect>& shapes, std::uint64_t t) {
    const double frac = static_cast<double>(t) / static_cast<double>(cfg.duration_us);
    std::vector<int> owner(std::size_t{cfg.width} * cfg.height, -1);
    for (std::size_t s = 0; s < shapes.size(); ++s)
        for (std::uint32_t y = 0; y < cfg.height; ++y)
            for (std::uint32_t x = 0; x < cfg.width; ++x)
                if (covers(shapes[s], frac, x + 0.5, y + 0.5)) owner[std::size_t{y} * cfg.width + x] = static_cast<int>(s);
    return owner;
}

GrayImage to_image(const SyntheticConfig& cfg, const std::vector<double>& intensity) {
    GrayImage img{cfg.width, cfg.height, {}};
    img.pixels.reserve(intensity.size());
    for (double v : intensity) img.pixels.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    return img;
}

std::vector<MovingRect> random_shapes(std::mt19937_64& rng, const SyntheticConfig& cfg) {
    std::vector<MovingRect> shapes;
    const double w = cfg.width, h = cfg.height;
    std::uniform_int_distribution<int> cls(1, cfg.num_classes - 1);
    for (std::size_t i = 0; i < cfg.num_shapes; ++i) {
        MovingRect r;
        r.w = std::uniform_real_distribution<double>(w / 8, w / 3)(rng);
        r.h = std::uniform_real_distribution<double>(h / 8, h / 3)(rng);
        r.x0 = std::uniform_real_distribution<double>(0, w - r.w)(rng);
        r.y0 = std::uniform_real_distribution<double>(0, h - r.h)(rng);
        const double x1 = std::clamp(r.x0 + std::uniform_real_distribution<double>(-w / 6, w / 6)(rng), 0.0, w - r.w);
        const double y1 = std::clamp(r.y0 + std::uniform_real_distribution<double>(-h / 6, h / 6)(rng), 0.0, h - r.h);
        r.vx = x1 - r.x0;
        r.vy = y1 - r.y0;
        r.class_id = cls(rng);
        shapes.push_back(r);
    }
    return shapes;
}

}  // namespace

std::vector<double> render_intensity(const SyntheticConfig& config, const std::vector<MovingRect>& shapes,
                                     std::uint64_t t) {
    const auto owner = coverage(config, shapes, t);
    std::vector<double> out(owner.size());
    for (std::size_t i = 0; i < owner.size(); ++i)
        out[i] = class_intensity(owner[i] < 0 ? 0 : shapes[static_cast<std::size_t>(owner[i])].class_id,
                                 config.num_classes);
    return out;
}

std::vector<std::uint8_t> render_labels(const SyntheticConfig& config, const std::vector<MovingRect>& shapes,
                                        std::uint64_t t) {
    const auto owner = coverage(config, shapes, t);
    std::vector<std::uint8_t> out(owner.size());
    for (std::size_t i = 0; i < owner.size(); ++i)
        out[i] = static_cast<std::uint8_t>(owner[i] < 0 ? 0 : shapes[static_cast<std::size_t>(owner[i])].class_id);
    return out;
}

std::vector<std::uint64_t> micro_step_times(const SyntheticConfig& config) {
    const std::size_t steps = (config.frame_count - 1) * config.substeps;
    std::vector<std::uint64_t> times(steps + 1);
    for (std::size_t m = 0; m <= steps; ++m) times[m] = config.duration_us * m / steps;
    return times;
}

SyntheticScene gen_synthetic(std::uint64_t seed, const SyntheticConfig& config) {
    if (config.width < 16 || config.height < 16) throw std::invalid_argument("gen_synthetic: width and height must be >= 16");
    if (config.num_classes < 2) throw std::invalid_argument("gen_synthetic: num_classes must be >= 2");
    if (config.num_classes > 255) throw std::invalid_argument("gen_synthetic: at most 255 classes");
    if (config.frame_count < 2 || config.substeps < 1 || config.duration_us == 0) {
        throw std::invalid_argument("gen_synthetic: need frame_count >= 2, substeps >= 1, duration > 0");
    }
    for (const auto& s : config.shapes)
        if (s.class_id < 1 || s.class_id >= config.num_classes)
            throw std::invalid_argument("gen_synthetic: shape class outside [1, num_classes)");

    std::mt19937_64 rng(seed);
    SyntheticScene scene;
    scene.shapes = config.shapes.empty() ? random_shapes(rng, config) : config.shapes;
    scene.events.width = config.width;
    scene.events.height = config.height;

    for (std::size_t f = 0; f < config.frame_count; ++f) {
        const std::uint64_t t = config.duration_us * f / (config.frame_count - 1);
        scene.frame_times.push_back(t);
        scene.frames.push_back(to_image(config, render_intensity(config, scene.shapes, t)));
        scene.labels.push_back(GrayImage{config.width, config.height, render_labels(config, scene.shapes, t)});
    }

    const auto times = micro_step_times(config);
    std::vector<double> prev = render_intensity(config, scene.shapes, times[0]);
    for (auto& v : prev) v = log_intensity(v);
    for (std::size_t m = 1; m < times.size(); ++m) {
        std::vector<double> cur = render_intensity(config, scene.shapes, times[m]);
        for (std::size_t i = 0; i < cur.size(); ++i) {
            cur[i] = log_intensity(cur[i]);
            const double delta = cur[i] - prev[i];
            if (std::abs(delta) > config.contrast_threshold) {
                Event e;
                e.x = static_cast<std::uint16_t>(i % config.width);
                e.y = static_cast<std::uint16_t>(i / config.width);
                e.t = times[m];
                e.p = delta > 0 ? 1 : -1;
                scene.events.events.push_back(e);
            }
        }
        prev = std::move(cur);
    }
    return scene;
}

}  // namespace hess
