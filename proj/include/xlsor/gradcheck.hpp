#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xlsor/tensor.hpp"

namespace xlsor {

// Rebuilds a scalar loss from fresh leaf nodes; called once per perturbation.
using GraphBuilder = std::function<NodePtr(const std::vector<NodePtr>&)>;

// Max relative error between analytic gradients and central finite
// differences over every element of every leaf. Relative error uses
// |a - n| / max(|a|, |n|, 1e-3).
double max_rel_error(const GraphBuilder& build, const std::vector<Tensor>& leaf_values,
                     double eps = 1e-5);

struct GradCheck {
    std::string name;
    int cases = 0;
    double max_err = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

// Finite-difference coverage of every differentiable operation plus the
// full tiny segmentor, `trials` seeded random cases each.
std::vector<GradCheck> run_gradient_suite(int trials = 20, std::uint64_t seed = 1234);

bool gradient_suite_passed(const std::vector<GradCheck>& checks);

} // namespace xlsor
