#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "xlsor/errors.hpp"

namespace xlsor {

// Dense row-major tensor of 64-bit floats. Canonical layouts are
// N x C x H x W for feature maps and O x C x kH x kW for conv kernels.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);
    Tensor(std::vector<int> s, std::vector<double> d);

    static std::size_t numel(const std::vector<int>& shape);
    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, double v);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    std::size_t size() const { return data.size(); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;

    // 4-d accessors for the N x C x H x W layout.
    double& at4(int n, int c, int y, int x) {
        return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    double at4(int n, int c, int y, int x) const {
        return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
};

struct GraphNode;
using NodePtr = std::shared_ptr<GraphNode>;

// A tensor with gradient storage and recorded provenance. Leaves have no
// parents; interior nodes carry a closure that pushes their grad into the
// grads of their parents. The graph is acyclic by construction.
struct GraphNode {
    Tensor value;
    Tensor grad;                     // same shape as value, zero-initialized
    std::vector<NodePtr> parents;
    std::function<void(GraphNode&)> backprop;
    const char* op = "leaf";

    bool is_leaf() const { return parents.empty(); }
};

NodePtr make_node(Tensor value);

// ---- differentiable operations -------------------------------------------

// Cross-correlation with stride / zero padding / dilation. `bias` may be
// null for bias-free projections.
NodePtr conv2d(const NodePtr& input, const NodePtr& weight, const NodePtr& bias,
               int stride = 1, int padding = 0, int dilation = 1);

// Output spatial extent for the conv2d contract; throws if degenerate.
void conv2d_output_extent(int H, int W, int kh, int kw, int stride, int padding,
                          int dilation, int& out_h, int& out_w);

NodePtr relu(const NodePtr& x);
NodePtr sigmoid(const NodePtr& x);
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr scale(const NodePtr& x, double c);

// Softmax along `axis`, computed with max-subtraction.
NodePtr softmax(const NodePtr& x, int axis);

// Mean over all elements of the squared difference. Target carries no grad.
NodePtr mse_loss(const NodePtr& pred, const Tensor& target);

// Each spatial value replicated factor x factor; gradient is the block sum.
NodePtr upsample_nearest(const NodePtr& x, int factor);

// Reverse-mode sweep from a scalar loss. Grads of interior nodes are
// recomputed per call; grads of leaves accumulate across calls.
void backward(const NodePtr& loss);

void zero_grads(const std::vector<NodePtr>& nodes);

} // namespace xlsor
