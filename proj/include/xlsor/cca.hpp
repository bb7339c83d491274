#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "xlsor/mask.hpp"
#include "xlsor/rng.hpp"
#include "xlsor/tensor.hpp"

namespace xlsor {

// Channel count of the query/key projections for a C-channel input.
inline int reduced_channels(int c) { return c / 8 > 1 ? c / 8 : 1; }

// The criss-cross set of pixel (x, y): its full column top-to-bottom, then
// its row left-to-right with (x, y) itself excluded. Size H + W - 1, center
// contained exactly once.
std::vector<std::pair<int, int>> crisscross_set(int x, int y, int H, int W);

// Learnable 1x1 projections of a criss-cross attention module.
struct CCAWeights {
    NodePtr query; // C' x C x 1 x 1
    NodePtr key;   // C' x C x 1 x 1
    NodePtr value; // C  x C x 1 x 1

    static CCAWeights init(int channels, Rng& rng);
    int channels() const { return value->value.dim(0); }
    int reduced() const { return query->value.dim(0); }
    std::vector<NodePtr> nodes() const { return {query, key, value}; }
};

struct CCAResult {
    NodePtr output;   // N x C x H x W, residual included
    Tensor attention; // N x (H+W-1) x H x W, rows sum to 1
};

// One criss-cross attention pass: project, score each pixel against its
// criss-cross set, softmax, aggregate values, add the residual.
CCAResult cca_forward(const NodePtr& h, const CCAWeights& w);

// `passes` criss-cross passes sharing one set of weights.
NodePtr rcca_forward(const NodePtr& h, const CCAWeights& w, int passes = 2);

// Dense baseline: identical to cca_forward except every pixel attends to
// all H*W positions. Serves as oracle and benchmark reference.
NodePtr nonlocal_forward(const NodePtr& h, const CCAWeights& w);

// The attention graph ops, exposed so the gradient suite can probe them
// in isolation. Affinity maps are N x S x H x W with S = H+W-1 (criss-cross,
// column then row with center excluded from the row) or S = H*W (dense,
// row-major).
NodePtr cc_affinity(const NodePtr& q, const NodePtr& k);
NodePtr cc_aggregate(const NodePtr& attn, const NodePtr& v);
NodePtr nl_affinity(const NodePtr& q, const NodePtr& k);
NodePtr nl_aggregate(const NodePtr& attn, const NodePtr& v);

// Marks every output pixel whose value moves by more than `tol` when the
// input is nudged by `delta` at (x, y), probing one channel at a time.
BinaryMask influence_map(const std::function<Tensor(const Tensor&)>& forward, const Tensor& h,
                         int x, int y, double delta = 1e-3, double tol = 1e-12);

enum class AttentionKind { crisscross, nonlocal_dense };

// Multiply count of affinity + aggregation for one pass, shared projections
// excluded: H*W*(H+W-1)*(Cr+C) criss-cross, H*W*H*W*(Cr+C) dense.
std::uint64_t attention_cost(int H, int W, int C, int Cr, AttentionKind kind);

struct AttentionBench {
    int h = 0, w = 0, channels = 0, reduced = 0;
    std::uint64_t crisscross_multiplies = 0, nonlocal_multiplies = 0;
    double crisscross_seconds = 0.0, nonlocal_seconds = 0.0;
};

// Single-threaded wall-time comparison of the two attention kinds on a
// random 1 x channels x size x size map.
AttentionBench bench_attention(int size, int channels, std::uint64_t seed, int repeats = 2);

} // namespace xlsor
