#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "hess/events.hpp"
#include "hess/image_io.hpp"
#include "hess/synthetic.hpp"

namespace hess {

/// One training/evaluation example: a frame, the events of the window that
/// ends at the frame, and the frame's label map.
struct Sample {
    GrayImage frame;
    GrayImage labels;
    EventStream events;
    std::uint64_t t_start = 0;
    std::uint64_t t_end = 1;
};

struct Dataset {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    int num_classes = 0;
    std::vector<Sample> samples;
};

/// `count` independent two-frame scenes; sample i uses seed `seed + i`.
Dataset make_synthetic_dataset(std::uint64_t seed, const SyntheticConfig& config, std::size_t count);

/// Directory layout: dataset.json plus, per sample NNNNN, NNNNN.evt,
/// NNNNN_frame.pgm and NNNNN_label.pgm.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Mirror frame, labels and events about the vertical axis.
Sample flip_horizontal(const Sample& sample);

}  // namespace hess
