#pragma once

#include <cstdint>
#include <vector>

#include "xlsor/mask.hpp"

#include "json.hpp"

namespace xlsor {

// Pixel-wise confusion between a predicted and a reference mask.
struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::uint64_t total() const { return tp + fp + fn + tn; }
};

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt);

// Overlap scores. Degenerate denominators: 1.0 when both masks are empty
// (perfect agreement), 0.0 when the empty denominator comes with
// disagreement.
double dice(const ConfusionCounts& c);
double precision(const ConfusionCounts& c);
double recall(const ConfusionCounts& c);
double volumetric_similarity(const ConfusionCounts& c);

// Max of the two directed mean nearest-neighbour distances between the
// foreground point sets, exact exhaustive search, Euclidean pixel units
// scaled by `spacing`. Throws UndefinedMetricError when either side is
// empty.
double averaged_hausdorff(const BinaryMask& a, const BinaryMask& b, double spacing = 1.0);

struct MetricStats {
    double mean = 0.0;
    double stdev = 0.0; // population standard deviation
    int n = 0;          // images contributing a defined value
    int n_undefined = 0;
    std::vector<double> per_image; // defined values, input order
};

// The five scores in the reporting order REC, PRE, DICE, AVD, VS.
struct MetricReport {
    MetricStats rec, pre, dice, avd, vs;
};

MetricReport evaluate_dataset(const std::vector<BinaryMask>& pred,
                              const std::vector<BinaryMask>& gt, double spacing = 1.0);

// Fixed key order {rec, pre, dice, avd, vs}, each {mean, std, n, n_undefined}.
nlohmann::ordered_json report_to_json(const MetricReport& r);

} // namespace xlsor
