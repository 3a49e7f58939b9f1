#pragma once

#include <cstdint>
#include <vector>

#include "hess/events.hpp"
#include "hess/image_io.hpp"

namespace hess {

/// Axis-aligned rectangle moving at constant velocity. Positions are in
/// pixels; velocity is pixels per full scene duration.
struct MovingRect {
    double x0 = 0, y0 = 0;
    double w = 1, h = 1;
    double vx = 0, vy = 0;
    int class_id = 1;
};

struct SyntheticConfig {
    std::uint32_t width = 64;
    std::uint32_t height = 64;
    std::uint64_t duration_us = 50'000;
    std::size_t num_shapes = 3;
    int num_classes = 3;
    std::size_t frame_count = 2;
    /// Micro-steps between consecutive frames at which events are sampled.
    std::size_t substeps = 10;
    double contrast_threshold = 0.15;
    /// When non-empty, used instead of randomly drawn shapes.
    std::vector<MovingRect> shapes;
};

struct SyntheticScene {
    EventStream events;
    std::vector<std::uint64_t> frame_times;
    std::vector<GrayImage> frames;
    std::vector<GrayImage> labels;
    std::vector<MovingRect> shapes;
};

/// Deterministic moving-rectangles scene. Events fire at each micro-step on
/// pixels whose log intensity changed by more than the contrast threshold
/// since the previous micro-step.
SyntheticScene gen_synthetic(std::uint64_t seed, const SyntheticConfig& config);

/// Intensity in [0, 1] of every pixel at time t (row-major).
std::vector<double> render_intensity(const SyntheticConfig& config, const std::vector<MovingRect>& shapes,
                                     std::uint64_t t);

/// Class label of every pixel at time t; background is 0.
std::vector<std::uint8_t> render_labels(const SyntheticConfig& config, const std::vector<MovingRect>& shapes,
                                        std::uint64_t t);

/// log(1 + 9 I) / log(10): maps [0, 1] onto [0, 1].
double log_intensity(double intensity);

/// Timestamps of every micro-step, starting at 0 and ending at duration_us.
std::vector<std::uint64_t> micro_step_times(const SyntheticConfig& config);

/// Grey level assigned to a class (background is class 0).
double class_intensity(int class_id, int num_classes);

}  // namespace hess
