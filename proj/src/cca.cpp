#include "xlsor/cca.hpp"

#include <chrono>
#include <cmath>
#include <cstring>

namespace xlsor {

namespace {

// Coordinate of entry s in the criss-cross set of (x, y): s < H walks the
// column, the remainder walks the row skipping x.
inline std::pair<int, int> omega_coord(int x, int y, int H, int s) {
    if (s < H) return {x, s};
    const int t = s - H;
    return {t < x ? t : t + 1, y};
}

void check_projection_shapes(const NodePtr& h, const CCAWeights& w) {
    if (h->value.ndim() != 4) throw ShapeError("attention input must be NxCxHxW");
    const int C = h->value.dim(1);
    if (w.query->value.dim(1) != C || w.key->value.dim(1) != C || w.value->value.dim(1) != C)
        throw ShapeError("attention: projection channels do not match input channels");
    if (w.query->value.dim(0) != w.key->value.dim(0))
        throw ShapeError("attention: query and key projections must agree");
    if (w.value->value.dim(0) != C)
        throw ShapeError("attention: value projection must preserve channel count");
}

NodePtr make_op_node(Tensor value, std::vector<NodePtr> parents, const char* op,
                     std::function<void(GraphNode&)> backprop) {
    auto n = std::make_shared<GraphNode>();
    n->grad = Tensor(value.shape);
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
    n->op = op;
    return n;
}

} // namespace

std::vector<std::pair<int, int>> crisscross_set(int x, int y, int H, int W) {
    if (x < 0 || x >= W || y < 0 || y >= H)
        throw ArgumentError("crisscross_set: coordinates out of range");
    std::vector<std::pair<int, int>> out;
    out.reserve(static_cast<std::size_t>(H + W - 1));
    for (int s = 0; s < H + W - 1; ++s) out.push_back(omega_coord(x, y, H, s));
    return out;
}

CCAWeights CCAWeights::init(int channels, Rng& rng) {
    if (channels < 1) throw ArgumentError("CCAWeights: channels must be >= 1");
    const int cr = reduced_channels(channels);
    const double std_dev = std::sqrt(2.0 / channels);
    auto draw = [&](int out_c) {
        Tensor t({out_c, channels, 1, 1});
        for (double& v : t.data) v = std_dev * rng.normal();
        return make_node(std::move(t));
    };
    CCAWeights w;
    w.query = draw(cr);
    w.key = draw(cr);
    w.value = draw(channels);
    return w;
}

namespace {

// The attention kernels work on channel-contiguous pixel vectors so the
// inner dot/axpy loops are unit-stride. [n][c][p] <-> [n][p][c].
std::vector<double> to_pixel_major(const std::vector<double>& src, int N, int C, int HW) {
    std::vector<double> dst(src.size());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* s = src.data() + (static_cast<std::size_t>(n) * C + c) * HW;
            double* d = dst.data() + static_cast<std::size_t>(n) * HW * C + c;
            for (int p = 0; p < HW; ++p) d[static_cast<std::size_t>(p) * C] = s[p];
        }
    return dst;
}

void add_from_pixel_major(const std::vector<double>& src, std::vector<double>& dst, int N, int C,
                          int HW) {
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* s = src.data() + static_cast<std::size_t>(n) * HW * C + c;
            double* d = dst.data() + (static_cast<std::size_t>(n) * C + c) * HW;
            for (int p = 0; p < HW; ++p) d[p] += s[static_cast<std::size_t>(p) * C];
        }
}

// Pixel index of entry s in the attention set of pixel p = y*W + x.
inline int cc_member(int p, int y, int x, int H, int W, int s) {
    (void)p;
    if (s < H) return s * W + x;
    const int t = s - H;
    return y * W + (t < x ? t : t + 1);
}

inline int nl_member(int p, int y, int x, int H, int W, int s) {
    (void)p;
    (void)y;
    (void)x;
    (void)H;
    (void)W;
    return s;
}

template <typename MemberFn>
Tensor affinity_forward(const Tensor& q, const Tensor& k, int S, MemberFn member) {
    const int N = q.dim(0), Cr = q.dim(1), H = q.dim(2), W = q.dim(3);
    const int HW = H * W;
    const std::vector<double> qT = to_pixel_major(q.data, N, Cr, HW);
    const std::vector<double> kT = to_pixel_major(k.data, N, Cr, HW);

    Tensor out({N, S, H, W});
    for (int n = 0; n < N; ++n) {
        const double* qn = qT.data() + static_cast<std::size_t>(n) * HW * Cr;
        const double* kn = kT.data() + static_cast<std::size_t>(n) * HW * Cr;
        double* on = out.data.data() + static_cast<std::size_t>(n) * S * HW;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int p = y * W + x;
                const double* qp = qn + static_cast<std::size_t>(p) * Cr;
                for (int s = 0; s < S; ++s) {
                    const double* kp = kn + static_cast<std::size_t>(member(p, y, x, H, W, s)) * Cr;
                    double acc = 0.0;
                    for (int c = 0; c < Cr; ++c) acc += qp[c] * kp[c];
                    on[static_cast<std::size_t>(s) * HW + p] = acc;
                }
            }
    }
    return out;
}

template <typename MemberFn>
void affinity_backward(const GraphNode& self, GraphNode& q, GraphNode& k, int S, MemberFn member) {
    const int N = q.value.dim(0), Cr = q.value.dim(1), H = q.value.dim(2), W = q.value.dim(3);
    const int HW = H * W;
    const std::vector<double> qT = to_pixel_major(q.value.data, N, Cr, HW);
    const std::vector<double> kT = to_pixel_major(k.value.data, N, Cr, HW);
    std::vector<double> gqT(qT.size(), 0.0), gkT(kT.size(), 0.0);

    for (int n = 0; n < N; ++n) {
        const double* gn = self.grad.data.data() + static_cast<std::size_t>(n) * S * HW;
        const std::size_t base = static_cast<std::size_t>(n) * HW * Cr;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int p = y * W + x;
                const double* qp = qT.data() + base + static_cast<std::size_t>(p) * Cr;
                double* gqp = gqT.data() + base + static_cast<std::size_t>(p) * Cr;
                for (int s = 0; s < S; ++s) {
                    const double g = gn[static_cast<std::size_t>(s) * HW + p];
                    if (g == 0.0) continue;
                    const std::size_t i = base + static_cast<std::size_t>(member(p, y, x, H, W, s)) * Cr;
                    const double* kp = kT.data() + i;
                    double* gkp = gkT.data() + i;
                    for (int c = 0; c < Cr; ++c) {
                        gqp[c] += g * kp[c];
                        gkp[c] += g * qp[c];
                    }
                }
            }
    }
    add_from_pixel_major(gqT, q.grad.data, N, Cr, HW);
    add_from_pixel_major(gkT, k.grad.data, N, Cr, HW);
}

template <typename MemberFn>
Tensor aggregate_forward(const Tensor& attn, const Tensor& v, int S, MemberFn member) {
    const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
    const int HW = H * W;
    const std::vector<double> vT = to_pixel_major(v.data, N, C, HW);
    std::vector<double> outT(vT.size(), 0.0);

    for (int n = 0; n < N; ++n) {
        const double* an = attn.data.data() + static_cast<std::size_t>(n) * S * HW;
        const std::size_t base = static_cast<std::size_t>(n) * HW * C;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int p = y * W + x;
                double* op = outT.data() + base + static_cast<std::size_t>(p) * C;
                for (int s = 0; s < S; ++s) {
                    const double a = an[static_cast<std::size_t>(s) * HW + p];
                    const double* vp = vT.data() + base +
                                       static_cast<std::size_t>(member(p, y, x, H, W, s)) * C;
                    for (int c = 0; c < C; ++c) op[c] += a * vp[c];
                }
            }
    }
    Tensor out({N, C, H, W});
    add_from_pixel_major(outT, out.data, N, C, HW);
    return out;
}

template <typename MemberFn>
void aggregate_backward(const GraphNode& self, GraphNode& attn, GraphNode& v, int S,
                        MemberFn member) {
    const int N = v.value.dim(0), C = v.value.dim(1), H = v.value.dim(2), W = v.value.dim(3);
    const int HW = H * W;
    const std::vector<double> vT = to_pixel_major(v.value.data, N, C, HW);
    const std::vector<double> gT = to_pixel_major(self.grad.data, N, C, HW);
    std::vector<double> gvT(vT.size(), 0.0);

    for (int n = 0; n < N; ++n) {
        const double* an = attn.value.data.data() + static_cast<std::size_t>(n) * S * HW;
        double* gan = attn.grad.data.data() + static_cast<std::size_t>(n) * S * HW;
        const std::size_t base = static_cast<std::size_t>(n) * HW * C;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int p = y * W + x;
                const double* gp = gT.data() + base + static_cast<std::size_t>(p) * C;
                for (int s = 0; s < S; ++s) {
                    const std::size_t i = base + static_cast<std::size_t>(member(p, y, x, H, W, s)) * C;
                    const double a = an[static_cast<std::size_t>(s) * HW + p];
                    const double* vp = vT.data() + i;
                    double* gvp = gvT.data() + i;
                    double aacc = 0.0;
                    for (int c = 0; c < C; ++c) {
                        aacc += gp[c] * vp[c];
                        gvp[c] += a * gp[c];
                    }
                    gan[static_cast<std::size_t>(s) * HW + p] += aacc;
                }
            }
    }
    add_from_pixel_major(gvT, v.grad.data, N, C, HW);
}

void check_attention_shape(const NodePtr& attn, const NodePtr& v, int S, const char* what) {
    if (attn->value.ndim() != 4 || attn->value.dim(0) != v->value.dim(0) ||
        attn->value.dim(1) != S || attn->value.dim(2) != v->value.dim(2) ||
        attn->value.dim(3) != v->value.dim(3))
        throw ShapeError(std::string(what) + ": attention shape does not match value map");
}

} // namespace

NodePtr cc_affinity(const NodePtr& q, const NodePtr& k) {
    if (!q->value.same_shape(k->value)) throw ShapeError("cc_affinity: q/k shapes differ");
    const int H = q->value.dim(2), W = q->value.dim(3);
    const int S = H + W - 1;
    Tensor out = affinity_forward(q->value, k->value, S, cc_member);
    NodePtr qp = q, kp = k;
    return make_op_node(std::move(out), {q, k}, "cc_affinity", [qp, kp, S](GraphNode& self) {
        affinity_backward(self, *qp, *kp, S, cc_member);
    });
}

NodePtr cc_aggregate(const NodePtr& attn, const NodePtr& v) {
    const int H = v->value.dim(2), W = v->value.dim(3);
    const int S = H + W - 1;
    check_attention_shape(attn, v, S, "cc_aggregate");
    Tensor out = aggregate_forward(attn->value, v->value, S, cc_member);
    NodePtr ap = attn, vp = v;
    return make_op_node(std::move(out), {attn, v}, "cc_aggregate", [ap, vp, S](GraphNode& self) {
        aggregate_backward(self, *ap, *vp, S, cc_member);
    });
}

NodePtr nl_affinity(const NodePtr& q, const NodePtr& k) {
    if (!q->value.same_shape(k->value)) throw ShapeError("nl_affinity: q/k shapes differ");
    const int S = q->value.dim(2) * q->value.dim(3);
    Tensor out = affinity_forward(q->value, k->value, S, nl_member);
    NodePtr qp = q, kp = k;
    return make_op_node(std::move(out), {q, k}, "nl_affinity", [qp, kp, S](GraphNode& self) {
        affinity_backward(self, *qp, *kp, S, nl_member);
    });
}

NodePtr nl_aggregate(const NodePtr& attn, const NodePtr& v) {
    const int S = v->value.dim(2) * v->value.dim(3);
    check_attention_shape(attn, v, S, "nl_aggregate");
    Tensor out = aggregate_forward(attn->value, v->value, S, nl_member);
    NodePtr ap = attn, vp = v;
    return make_op_node(std::move(out), {attn, v}, "nl_aggregate", [ap, vp, S](GraphNode& self) {
        aggregate_backward(self, *ap, *vp, S, nl_member);
    });
}

CCAResult cca_forward(const NodePtr& h, const CCAWeights& w) {
    check_projection_shapes(h, w);
    NodePtr q = conv2d(h, w.query, nullptr);
    NodePtr k = conv2d(h, w.key, nullptr);
    NodePtr v = conv2d(h, w.value, nullptr);
    NodePtr attn = softmax(cc_affinity(q, k), 1);
    NodePtr out = add(cc_aggregate(attn, v), h);
    return {out, attn->value};
}

NodePtr rcca_forward(const NodePtr& h, const CCAWeights& w, int passes) {
    if (passes < 1) throw ArgumentError("rcca_forward: passes must be >= 1");
    NodePtr cur = h;
    for (int p = 0; p < passes; ++p) cur = cca_forward(cur, w).output;
    return cur;
}

NodePtr nonlocal_forward(const NodePtr& h, const CCAWeights& w) {
    check_projection_shapes(h, w);
    NodePtr q = conv2d(h, w.query, nullptr);
    NodePtr k = conv2d(h, w.key, nullptr);
    NodePtr v = conv2d(h, w.value, nullptr);
    NodePtr attn = softmax(nl_affinity(q, k), 1);
    return add(nl_aggregate(attn, v), h);
}

BinaryMask influence_map(const std::function<Tensor(const Tensor&)>& forward, const Tensor& h,
                         int x, int y, double delta, double tol) {
    if (h.ndim() != 4) throw ShapeError("influence_map: input must be NxCxHxW");
    const int C = h.dim(1), H = h.dim(2), W = h.dim(3);
    if (x < 0 || x >= W || y < 0 || y >= H)
        throw ArgumentError("influence_map: source pixel out of range");
    if (!h.all_finite()) throw ArgumentError("influence_map: input must be finite");

    const Tensor base = forward(h);
    const int OC = base.dim(1);
    BinaryMask marked(H, W);
    for (int c = 0; c < C; ++c) {
        Tensor probe = h;
        probe.at4(0, c, y, x) += delta;
        const Tensor out = forward(probe);
        if (!out.same_shape(base)) throw ShapeError("influence_map: forward output shape varies");
        for (int vy = 0; vy < H; ++vy)
            for (int vx = 0; vx < W; ++vx) {
                if (marked.at(vy, vx)) continue;
                for (int oc = 0; oc < OC; ++oc) {
                    if (std::fabs(out.at4(0, oc, vy, vx) - base.at4(0, oc, vy, vx)) > tol) {
                        marked.at(vy, vx) = 1;
                        break;
                    }
                }
            }
    }
    return marked;
}

std::uint64_t attention_cost(int H, int W, int C, int Cr, AttentionKind kind) {
    if (H < 1 || W < 1 || C < 1 || Cr < 1)
        throw ArgumentError("attention_cost: dimensions must be positive");
    const std::uint64_t hw = static_cast<std::uint64_t>(H) * W;
    const std::uint64_t per_pixel = static_cast<std::uint64_t>(Cr) + C;
    const std::uint64_t set_size =
        kind == AttentionKind::crisscross ? static_cast<std::uint64_t>(H + W - 1) : hw;
    return hw * set_size * per_pixel;
}

AttentionBench bench_attention(int size, int channels, std::uint64_t seed, int repeats) {
    if (size < 1 || channels < 1 || repeats < 1)
        throw ArgumentError("bench_attention: size, channels, repeats must be positive");
    Rng rng(seed);
    Tensor h({1, channels, size, size});
    for (double& v : h.data) v = rng.normal();
    CCAWeights w = CCAWeights::init(channels, rng);

    auto time_best = [&](auto&& fn) {
        double best = 0.0;
        for (int r = 0; r < repeats; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            fn();
            const auto t1 = std::chrono::steady_clock::now();
            const double s = std::chrono::duration<double>(t1 - t0).count();
            if (r == 0 || s < best) best = s;
        }
        return best;
    };

    AttentionBench b;
    b.h = b.w = size;
    b.channels = channels;
    b.reduced = reduced_channels(channels);
    b.crisscross_multiplies = attention_cost(size, size, channels, b.reduced, AttentionKind::crisscross);
    b.nonlocal_multiplies = attention_cost(size, size, channels, b.reduced, AttentionKind::nonlocal_dense);
    b.crisscross_seconds = time_best([&] { cca_forward(make_node(h), w); });
    b.nonlocal_seconds = time_best([&] { nonlocal_forward(make_node(h), w); });
    return b;
}

} // namespace xlsor
