#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "hess/events.hpp"
#include "hess/tensor.hpp"

namespace hess {

/// bins×height×width event voxel over the window [t_start, t_end].
struct VoxelGrid {
    std::size_t bins = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<Scalar> data;
    std::uint64_t t_start = 0;
    std::uint64_t t_end = 1;

    Scalar at(std::size_t b, std::size_t y, std::size_t x) const { return data[(b * height + y) * width + x]; }
    Scalar& at(std::size_t b, std::size_t y, std::size_t x) { return data[(b * height + y) * width + x]; }

    /// As a 1×bins×H×W tensor.
    Tensor to_tensor() const;
};

/// Bilinear-in-time accumulation: each event adds p·max(0, 1 − |b − τ|) to
/// bin b at its pixel, with τ its timestamp scaled to [0, B−1]. Events at
/// t_end map to τ = B−1.
VoxelGrid voxelize(const EventStream& stream, std::size_t bins, std::uint64_t t_start, std::uint64_t t_end);

/// (V − mean)/max(std, 1e-8) over every entry, population std.
VoxelGrid znorm(const VoxelGrid& grid);

/// Per-bin average pooling with kernel = stride = factor.
VoxelGrid downsample_voxel(const VoxelGrid& grid, std::size_t factor);

/// Integer (y, x) locations at some feature scale.
struct ReferencePointSet {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t scale = 1;  // sensor pixels per feature cell
    std::vector<std::pair<std::size_t, std::size_t>> points;

    bool empty() const { return points.empty(); }
    std::size_t size() const { return points.size(); }
};

/// Cells with Σ_b |V(b)[y, x]| > 0, row-major.
ReferencePointSet extract_reference_points(const VoxelGrid& grid, std::size_t scale = 1);

/// Split the stream into consecutive windows of `events_per_window` events.
/// The last window may be shorter.
std::vector<EventStream> split_by_count(const EventStream& stream, std::size_t events_per_window);

}  // namespace hess
