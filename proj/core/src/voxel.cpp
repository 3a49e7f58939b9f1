#include "hess/voxel.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace hess {

Tensor VoxelGrid::to_tensor() const { return Tensor(Shape{1, bins, height, width}, data); }

VoxelGrid voxelize(const EventStream& stream, std::size_t bins, std::uint64_t t_start, std::uint64_t t_end) {
    if (bins == 0) throw std::invalid_argument("voxelize: bins must be >= 1");
    if (t_end <= t_start) throw std::invalid_argument("voxelize: t_end must be greater than t_start");
    VoxelGrid grid;
    grid.bins = bins;
    grid.height = stream.height;
    grid.width = stream.width;
    grid.t_start = t_start;
    grid.t_end = t_end;
    grid.data.assign(bins * grid.height * grid.width, 0.0);

    const Scalar span = static_cast<Scalar>(t_end - t_start);
    const Scalar last_bin = static_cast<Scalar>(bins - 1);
    for (std::size_t i = 0; i < stream.events.size(); ++i) {
        const Event& e = stream.events[i];
        if (e.t < t_start || e.t > t_end) {
            throw std::out_of_range("voxelize: event " + std::to_string(i) + " at t=" + std::to_string(e.t) +
                                    " lies outside the window [" + std::to_string(t_start) + ", " +
                                    std::to_string(t_end) + "]");
        }
        if (e.x >= grid.width || e.y >= grid.height) {
            throw std::out_of_range("voxelize: event " + std::to_string(i) + " outside sensor geometry");
        }
        const Scalar tau = static_cast<Scalar>(e.t - t_start) / span * last_bin;
        // Only floor(tau) and floor(tau)+1 have a positive kernel weight.
        const auto lo = static_cast<std::size_t>(std::floor(tau));
        for (std::size_t b = lo; b <= lo + 1 && b < bins; ++b) {
            const Scalar weight = 1.0 - std::abs(static_cast<Scalar>(b) - tau);
            if (weight > 0.0) grid.at(b, e.y, e.x) += static_cast<Scalar>(e.p) * weight;
        }
    }
    return grid;
}

VoxelGrid znorm(const VoxelGrid& grid) {
    VoxelGrid out = grid;
    const auto n = static_cast<Scalar>(grid.data.size());
    if (grid.data.empty()) return out;
    Scalar mu = 0.0;
    for (auto v : grid.data) mu += v;
    mu /= n;
    Scalar var = 0.0;
    for (auto v : grid.data) var += (v - mu) * (v - mu);
    var /= n;
    const Scalar denom = std::max(std::sqrt(var), 1e-8);
    for (auto& v : out.data) v = (v - mu) / denom;
    return out;
}

VoxelGrid downsample_voxel(const VoxelGrid& grid, std::size_t factor) {
    if (factor == 0 || grid.height % factor != 0 || grid.width % factor != 0) {
        throw std::invalid_argument("downsample_voxel: factor " + std::to_string(factor) + " does not divide " +
                                    std::to_string(grid.height) + "x" + std::to_string(grid.width));
    }
    VoxelGrid out;
    out.bins = grid.bins;
    out.height = grid.height / factor;
    out.width = grid.width / factor;
    out.t_start = grid.t_start;
    out.t_end = grid.t_end;
    out.data.assign(out.bins * out.height * out.width, 0.0);
    const Scalar inv = 1.0 / static_cast<Scalar>(factor * factor);
    for (std::size_t b = 0; b < grid.bins; ++b)
        for (std::size_t y = 0; y < out.height; ++y)
            for (std::size_t x = 0; x < out.width; ++x) {
                Scalar acc = 0.0;
                for (std::size_t dy = 0; dy < factor; ++dy)
                    for (std::size_t dx = 0; dx < factor; ++dx) acc += grid.at(b, y * factor + dy, x * factor + dx);
                out.at(b, y, x) = acc * inv;
            }
    return out;
}

ReferencePointSet extract_reference_points(const VoxelGrid& grid, std::size_t scale) {
    ReferencePointSet refs;
    refs.height = grid.height;
    refs.width = grid.width;
    refs.scale = scale;
    for (std::size_t y = 0; y < grid.height; ++y)
        for (std::size_t x = 0; x < grid.width; ++x) {
            Scalar mass = 0.0;
            for (std::size_t b = 0; b < grid.bins; ++b) mass += std::abs(grid.at(b, y, x));
            if (mass > 0.0) refs.points.emplace_back(y, x);
        }
    return refs;
}

std::vector<EventStream> split_by_count(const EventStream& stream, std::size_t events_per_window) {
    if (events_per_window == 0) throw std::invalid_argument("split_by_count: window size must be >= 1");
    std::vector<EventStream> windows;
    for (std::size_t i = 0; i < stream.events.size(); i += events_per_window) {
        EventStream w{stream.width, stream.height, {}};
        const std::size_t end = std::min(stream.events.size(), i + events_per_window);
        w.events.assign(stream.events.begin() + static_cast<long>(i), stream.events.begin() + static_cast<long>(end));
        windows.push_back(std::move(w));
    }
    return windows;
}

}  // namespace hess
