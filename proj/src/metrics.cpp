#include "xlsor/metrics.hpp"

#include <cmath>
#include <limits>

#include "xlsor/errors.hpp"

namespace xlsor {

namespace {

void require_binary(const BinaryMask& m, const char* what) {
    if (m.h <= 0 || m.w <= 0 || m.data.size() != static_cast<std::size_t>(m.h) * m.w)
        throw InputError(std::string(what) + ": malformed mask");
    for (auto v : m.data)
        if (v != 0 && v != 1) throw InputError(std::string(what) + ": mask values must be 0 or 1");
}

std::vector<std::pair<int, int>> foreground(const BinaryMask& m) {
    std::vector<std::pair<int, int>> pts;
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x)
            if (m.at(y, x)) pts.emplace_back(y, x);
    return pts;
}

double directed_mean_distance(const std::vector<std::pair<int, int>>& from,
                              const std::vector<std::pair<int, int>>& to) {
    double acc = 0.0;
    for (const auto& [ay, ax] : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& [by, bx] : to) {
            const double dy = ay - by, dx = ax - bx;
            const double d2 = dy * dy + dx * dx;
            if (d2 < best) best = d2;
        }
        acc += std::sqrt(best);
    }
    return acc / static_cast<double>(from.size());
}

MetricStats finalize(std::vector<double> values, int undefined) {
    MetricStats s;
    s.n = static_cast<int>(values.size());
    s.n_undefined = undefined;
    s.per_image = std::move(values);
    if (s.n == 0) return s;
    double sum = 0.0;
    for (double v : s.per_image) sum += v;
    s.mean = sum / s.n;
    double var = 0.0;
    for (double v : s.per_image) var += (v - s.mean) * (v - s.mean);
    s.stdev = std::sqrt(var / s.n);
    return s;
}

} // namespace

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
    require_binary(pred, "confusion pred");
    require_binary(gt, "confusion gt");
    if (pred.h != gt.h || pred.w != gt.w) throw InputError("confusion: mask shapes differ");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
        if (p && g)
            ++c.tp;
        else if (p && !g)
            ++c.fp;
        else if (!p && g)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

double dice(const ConfusionCounts& c) {
    const std::uint64_t denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) return 1.0; // both masks empty
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double precision(const ConfusionCounts& c) {
    const std::uint64_t denom = c.tp + c.fp;
    if (denom == 0) return c.fn == 0 ? 1.0 : 0.0;
    return static_cast<double>(c.tp) / static_cast<double>(denom);
}

double recall(const ConfusionCounts& c) {
    const std::uint64_t denom = c.tp + c.fn;
    if (denom == 0) return c.fp == 0 ? 1.0 : 0.0;
    return static_cast<double>(c.tp) / static_cast<double>(denom);
}

double volumetric_similarity(const ConfusionCounts& c) {
    const std::uint64_t denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) return 1.0;
    const double diff = c.fp >= c.fn ? static_cast<double>(c.fp - c.fn)
                                     : static_cast<double>(c.fn - c.fp);
    return 1.0 - diff / static_cast<double>(denom);
}

double averaged_hausdorff(const BinaryMask& a, const BinaryMask& b, double spacing) {
    require_binary(a, "averaged_hausdorff a");
    require_binary(b, "averaged_hausdorff b");
    if (a.h != b.h || a.w != b.w) throw InputError("averaged_hausdorff: mask shapes differ");
    const auto pa = foreground(a);
    const auto pb = foreground(b);
    if (pa.empty() || pb.empty())
        throw UndefinedMetricError("averaged_hausdorff: undefined for an empty mask");
    const double ab = directed_mean_distance(pa, pb);
    const double ba = directed_mean_distance(pb, pa);
    return spacing * (ab > ba ? ab : ba);
}

MetricReport evaluate_dataset(const std::vector<BinaryMask>& pred,
                              const std::vector<BinaryMask>& gt, double spacing) {
    if (pred.size() != gt.size())
        throw InputError("evaluate_dataset: prediction and ground-truth counts differ");
    std::vector<double> recs, pres, dices, avds, vss;
    int avd_undefined = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const ConfusionCounts c = confusion(pred[i], gt[i]);
        recs.push_back(recall(c));
        pres.push_back(precision(c));
        dices.push_back(dice(c));
        vss.push_back(volumetric_similarity(c));
        if (pred[i].foreground_count() == 0 || gt[i].foreground_count() == 0)
            ++avd_undefined;
        else
            avds.push_back(averaged_hausdorff(pred[i], gt[i], spacing));
    }
    MetricReport r;
    r.rec = finalize(std::move(recs), 0);
    r.pre = finalize(std::move(pres), 0);
    r.dice = finalize(std::move(dices), 0);
    r.avd = finalize(std::move(avds), avd_undefined);
    r.vs = finalize(std::move(vss), 0);
    return r;
}

nlohmann::ordered_json report_to_json(const MetricReport& r) {
    auto stats = [](const MetricStats& s) {
        nlohmann::ordered_json j;
        j["mean"] = s.mean;
        j["std"] = s.stdev;
        j["n"] = s.n;
        j["n_undefined"] = s.n_undefined;
        return j;
    };
    nlohmann::ordered_json j;
    j["rec"] = stats(r.rec);
    j["pre"] = stats(r.pre);
    j["dice"] = stats(r.dice);
    j["avd"] = stats(r.avd);
    j["vs"] = stats(r.vs);
    return j;
}

} // namespace xlsor
