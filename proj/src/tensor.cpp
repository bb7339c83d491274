#include "xlsor/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace xlsor {

std::size_t Tensor::numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)), data(numel(shape), 0.0) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != data.size()) throw ShapeError("tensor data length does not match shape");
}

Tensor Tensor::full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

NodePtr make_node(Tensor value) {
    auto n = std::make_shared<GraphNode>();
    n->grad = Tensor(value.shape);
    n->value = std::move(value);
    return n;
}

namespace {

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

void require_4d(const Tensor& t, const char* what) {
    if (t.ndim() != 4) throw ShapeError(std::string(what) + " must be 4-d (NxCxHxW)");
}

} // namespace

void conv2d_output_extent(int H, int W, int kh, int kw, int stride, int padding,
                          int dilation, int& out_h, int& out_w) {
    if (stride < 1) throw ArgumentError("conv2d: stride must be >= 1");
    if (dilation < 1) throw ArgumentError("conv2d: dilation must be >= 1");
    if (padding < 0) throw ArgumentError("conv2d: padding must be >= 0");
    if (kh < 1 || kw < 1) throw ArgumentError("conv2d: kernel extents must be >= 1");
    out_h = (H + 2 * padding - dilation * (kh - 1) - 1) / stride + 1;
    out_w = (W + 2 * padding - dilation * (kw - 1) - 1) / stride + 1;
    if (out_h < 1 || out_w < 1) throw ArgumentError("conv2d: output extent would be empty");
}

namespace {

// Valid output range [lo, hi] for one kernel tap so the inner loops run
// branch-free: in = out*stride + k*dilation - padding must land in [0, extent).
inline void tap_range(int extent, int out_extent, int stride, int padding, int k, int dilation,
                      int& lo, int& hi) {
    const int base = k * dilation - padding;
    lo = base < 0 ? (-base + stride - 1) / stride : 0;
    const int num = extent - 1 - base;
    hi = num < 0 ? -1 : num / stride;
    if (hi > out_extent - 1) hi = out_extent - 1;
}

} // namespace

NodePtr conv2d(const NodePtr& input, const NodePtr& weight, const NodePtr& bias,
               int stride, int padding, int dilation) {
    require_4d(input->value, "conv2d input");
    require_4d(weight->value, "conv2d weight");
    const int N = input->value.dim(0), C = input->value.dim(1);
    const int H = input->value.dim(2), W = input->value.dim(3);
    const int O = weight->value.dim(0), KH = weight->value.dim(2), KW = weight->value.dim(3);
    if (weight->value.dim(1) != C)
        throw ShapeError("conv2d: input channels do not match weight channels");
    if (bias && (bias->value.ndim() != 1 || bias->value.dim(0) != O))
        throw ShapeError("conv2d: bias must have one value per output channel");

    int OH = 0, OW = 0;
    conv2d_output_extent(H, W, KH, KW, stride, padding, dilation, OH, OW);

    Tensor out({N, O, OH, OW});
    const double* in = input->value.data.data();
    const double* wt = weight->value.data.data();
    double* ov = out.data.data();
    for (int n = 0; n < N; ++n) {
        for (int o = 0; o < O; ++o) {
            double* out_plane = ov + (static_cast<std::size_t>(n) * O + o) * OH * OW;
            const double b = bias ? bias->value.data[o] : 0.0;
            std::fill(out_plane, out_plane + static_cast<std::size_t>(OH) * OW, b);
            for (int c = 0; c < C; ++c) {
                const double* in_plane = in + (static_cast<std::size_t>(n) * C + c) * H * W;
                const double* w_plane = wt + ((static_cast<std::size_t>(o) * C + c) * KH) * KW;
                for (int ky = 0; ky < KH; ++ky) {
                    int oy_lo, oy_hi;
                    tap_range(H, OH, stride, padding, ky, dilation, oy_lo, oy_hi);
                    for (int kx = 0; kx < KW; ++kx) {
                        const double wv = w_plane[ky * KW + kx];
                        int ox_lo, ox_hi;
                        tap_range(W, OW, stride, padding, kx, dilation, ox_lo, ox_hi);
                        const int ybase = ky * dilation - padding;
                        const int xbase = kx * dilation - padding;
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const double* in_row =
                                in_plane + static_cast<std::size_t>(oy * stride + ybase) * W + xbase;
                            double* out_row = out_plane + static_cast<std::size_t>(oy) * OW;
                            for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                out_row[ox] += wv * in_row[ox * stride];
                        }
                    }
                }
            }
        }
    }

    std::vector<NodePtr> parents{input, weight};
    if (bias) parents.push_back(bias);
    NodePtr in_p = input, w_p = weight, b_p = bias;
    return make_op_node(std::move(out), std::move(parents), "conv2d",
                        [in_p, w_p, b_p, stride, padding, dilation, N, C, H, W, O, KH, KW, OH,
                         OW](GraphNode& self) {
        const double* go = self.grad.data.data();
        const double* in = in_p->value.data.data();
        const double* wt = w_p->value.data.data();
        double* gin = in_p->grad.data.data();
        double* gw = w_p->grad.data.data();
        for (int n = 0; n < N; ++n) {
            for (int o = 0; o < O; ++o) {
                const double* go_plane = go + (static_cast<std::size_t>(n) * O + o) * OH * OW;
                if (b_p) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < static_cast<std::size_t>(OH) * OW; ++i)
                        s += go_plane[i];
                    b_p->grad.data[o] += s;
                }
                for (int c = 0; c < C; ++c) {
                    const double* in_plane = in + (static_cast<std::size_t>(n) * C + c) * H * W;
                    double* gin_plane = gin + (static_cast<std::size_t>(n) * C + c) * H * W;
                    const double* w_plane = wt + ((static_cast<std::size_t>(o) * C + c) * KH) * KW;
                    double* gw_plane = gw + ((static_cast<std::size_t>(o) * C + c) * KH) * KW;
                    for (int ky = 0; ky < KH; ++ky) {
                        int oy_lo, oy_hi;
                        tap_range(H, OH, stride, padding, ky, dilation, oy_lo, oy_hi);
                        for (int kx = 0; kx < KW; ++kx) {
                            const double wv = w_plane[ky * KW + kx];
                            double wacc = 0.0;
                            int ox_lo, ox_hi;
                            tap_range(W, OW, stride, padding, kx, dilation, ox_lo, ox_hi);
                            const int ybase = ky * dilation - padding;
                            const int xbase = kx * dilation - padding;
                            for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                                const std::size_t row = static_cast<std::size_t>(oy * stride + ybase) * W + xbase;
                                const double* in_row = in_plane + row;
                                double* gin_row = gin_plane + row;
                                const double* go_row = go_plane + static_cast<std::size_t>(oy) * OW;
                                for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                    const double g = go_row[ox];
                                    gin_row[ox * stride] += wv * g;
                                    wacc += in_row[ox * stride] * g;
                                }
                            }
                            gw_plane[ky * KW + kx] += wacc;
                        }
                    }
                }
            }
        }
    });
}

NodePtr relu(const NodePtr& x) {
    Tensor out = x->value;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    NodePtr xp = x;
    return make_op_node(std::move(out), {x}, "relu", [xp](GraphNode& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (xp->value.data[i] > 0.0) xp->grad.data[i] += self.grad.data[i];
    });
}

NodePtr sigmoid(const NodePtr& x) {
    Tensor out = x->value;
    for (double& v : out.data) {
        if (v >= 0.0) {
            v = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            v = e / (1.0 + e);
        }
    }
    NodePtr xp = x;
    return make_op_node(std::move(out), {x}, "sigmoid", [xp](GraphNode& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double s = self.value.data[i];
            xp->grad.data[i] += self.grad.data[i] * s * (1.0 - s);
        }
    });
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
    if (!a->value.same_shape(b->value)) throw ShapeError("add: operand shapes differ");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b->value.data[i];
    NodePtr ap = a, bp = b;
    return make_op_node(std::move(out), {a, b}, "add", [ap, bp](GraphNode& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            ap->grad.data[i] += self.grad.data[i];
            bp->grad.data[i] += self.grad.data[i];
        }
    });
}

NodePtr scale(const NodePtr& x, double c) {
    Tensor out = x->value;
    for (double& v : out.data) v *= c;
    NodePtr xp = x;
    return make_op_node(std::move(out), {x}, "scale", [xp, c](GraphNode& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            xp->grad.data[i] += c * self.grad.data[i];
    });
}

NodePtr softmax(const NodePtr& x, int axis) {
    const auto& shape = x->value.shape;
    if (axis < 0 || axis >= x->value.ndim()) throw ShapeError("softmax: axis out of range");
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(shape[i]);
    for (int i = axis + 1; i < x->value.ndim(); ++i) inner *= static_cast<std::size_t>(shape[i]);
    const std::size_t len = static_cast<std::size_t>(shape[axis]);

    Tensor out(x->value.shape);
    const double* xv = x->value.data.data();
    double* ov = out.data.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * len * inner + i;
            double m = xv[base];
            for (std::size_t k = 1; k < len; ++k) m = std::max(m, xv[base + k * inner]);
            double sum = 0.0;
            for (std::size_t k = 0; k < len; ++k) {
                const double e = std::exp(xv[base + k * inner] - m);
                ov[base + k * inner] = e;
                sum += e;
            }
            for (std::size_t k = 0; k < len; ++k) ov[base + k * inner] /= sum;
        }
    }

    NodePtr xp = x;
    return make_op_node(std::move(out), {x}, "softmax",
                        [xp, outer, inner, len](GraphNode& self) {
        const double* p = self.value.data.data();
        const double* gy = self.grad.data.data();
        double* gx = xp->grad.data.data();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t base = o * len * inner + i;
                double dot = 0.0;
                for (std::size_t k = 0; k < len; ++k)
                    dot += gy[base + k * inner] * p[base + k * inner];
                for (std::size_t k = 0; k < len; ++k) {
                    const std::size_t j = base + k * inner;
                    gx[j] += p[j] * (gy[j] - dot);
                }
            }
        }
    });
}

NodePtr mse_loss(const NodePtr& pred, const Tensor& target) {
    if (!pred->value.same_shape(target)) throw ShapeError("mse_loss: shapes differ");
    const std::size_t n = pred->value.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pred->value.data[i] - target.data[i];
        acc += d * d;
    }
    Tensor out = Tensor::scalar(acc / static_cast<double>(n));
    NodePtr pp = pred;
    Tensor tgt = target;
    return make_op_node(std::move(out), {pred}, "mse_loss", [pp, tgt, n](GraphNode& self) {
        const double g = self.grad.data[0] * 2.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            pp->grad.data[i] += g * (pp->value.data[i] - tgt.data[i]);
    });
}

NodePtr upsample_nearest(const NodePtr& x, int factor) {
    if (factor < 1) throw ArgumentError("upsample_nearest: factor must be >= 1");
    require_4d(x->value, "upsample_nearest input");
    const int N = x->value.dim(0), C = x->value.dim(1);
    const int H = x->value.dim(2), W = x->value.dim(3);
    Tensor out({N, C, H * factor, W * factor});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H * factor; ++y)
                for (int xx = 0; xx < W * factor; ++xx)
                    out.at4(n, c, y, xx) = x->value.at4(n, c, y / factor, xx / factor);
    NodePtr xp = x;
    return make_op_node(std::move(out), {x}, "upsample_nearest",
                        [xp, factor, N, C, H, W](GraphNode& self) {
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H * factor; ++y)
                    for (int xx = 0; xx < W * factor; ++xx)
                        xp->grad.at4(n, c, y / factor, xx / factor) += self.grad.at4(n, c, y, xx);
    });
}

void backward(const NodePtr& loss) {
    if (!loss) throw ContractError("backward: null node");
    if (loss->value.size() != 1) throw ContractError("backward: loss must be scalar");

    // Iterative post-order DFS; cycles are impossible by construction but the
    // visited set also keeps shared subgraphs from being expanded twice.
    std::vector<GraphNode*> order;
    std::unordered_set<GraphNode*> visited;
    std::vector<std::pair<GraphNode*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            GraphNode* p = node->parents[next++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior grads are scratch space for this sweep; leaf grads accumulate.
    for (GraphNode* n : order)
        if (!n->is_leaf()) std::fill(n->grad.data.begin(), n->grad.data.end(), 0.0);

    if (loss->is_leaf()) {
        loss->grad.data[0] += 1.0;
        return;
    }
    loss->grad.data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        GraphNode* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

void zero_grads(const std::vector<NodePtr>& nodes) {
    for (const auto& n : nodes)
        std::fill(n->grad.data.begin(), n->grad.data.end(), 0.0);
}

} // namespace xlsor
