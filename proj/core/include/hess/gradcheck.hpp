#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hess/network.hpp"
#include "hess/ops.hpp"

namespace hess {

struct ModuleGradCheck {
    std::string module;
    Scalar max_rel_error = 0.0;
    std::size_t entries = 0;
    std::size_t instances = 0;  // random instances checked
    std::size_t skipped = 0;    // instances too close to a kink or reset crossing
    Scalar tolerance = 0.0;
    bool passed() const { return instances > 0 && max_rel_error <= tolerance; }
};

/// Finite-difference checks on random instances. Instances whose sampling
/// coordinates lie within 1e-3 of a grid line, or whose membranes pass within
/// 1e-3 of the threshold, are skipped. Tolerance 1e-4.
ModuleGradCheck gradcheck_lif(std::uint64_t seed = 24, std::size_t instances = 20);
ModuleGradCheck gradcheck_atw(std::uint64_t seed = 23, std::size_t instances = 5);
ModuleGradCheck gradcheck_eds(std::uint64_t seed = 29, std::size_t instances = 5);
ModuleGradCheck gradcheck_csf(std::uint64_t seed = 31, std::size_t instances = 5);

/// Whole network on a 16×16 synthetic sample with sigmoid spikes. Per-stage
/// thresholds are moved off the nearest membrane crossing first. Tolerance 1e-3.
ModuleGradCheck gradcheck_network(std::uint64_t seed = 37, std::size_t entries_per_param = 4);

/// `module` is one of all, lif, atw, eds, csf, net.
std::vector<ModuleGradCheck> run_gradchecks(const std::string& module);

}  // namespace hess
