#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "camscope/label_map.hpp"
#include "camscope/tensor.hpp"

namespace camscope {

using NodeId = int;

enum class OpKind : std::uint8_t {
    Leaf,
    Conv2d,
    Relu,
    MaxPool2d,
    UpsampleBilinear,
    UpsampleNearest,
    Add,
    Mul,
    ScalarMul,
    ConcatChannels,
    MaskedSum,
    SoftmaxChannels,
    SoftmaxCrossEntropy,
    GlobalAvgPool,
    Linear,
    SumAll,
};

class Tape;

/// Handle to a recorded value; valid while its tape is alive.
struct Var {
    Tape* tape = nullptr;
    NodeId id = -1;
    const Tensor& value() const;
};

/// A scalar (numel == 1) node, the root of a backward pass.
struct ScalarTarget {
    double value = 0.0;
    NodeId node = -1;
    Tape* tape = nullptr;
};

/// Reverse-mode record of one forward pass. Nodes are stored in recording
/// order, which is also a valid topological order; a tape is confined to a
/// single thread and rebuilt per forward pass.
class Tape {
public:
    struct Node {
        OpKind op = OpKind::Leaf;
        std::vector<NodeId> inputs;
        Tensor value;
        // Op-specific integers: padding/stride, pool window, output extents,
        // channel index, upsample factor.
        int a = 0, b = 0, c = 0;
        double scalar = 0.0;
        // Op-specific index payload: argmax positions (MaxPool2d), flattened
        // pixel indices (MaskedSum), per-pixel labels (SoftmaxCrossEntropy).
        std::vector<std::int32_t> idx;
    };

    Var leaf(Tensor value);

    const Tensor& value(NodeId id) const;
    OpKind op_kind(NodeId id) const;
    int size() const { return static_cast<int>(nodes_.size()); }

    /// Accumulates chain-rule contributions by reverse traversal from
    /// `target` and returns the gradient for each wanted node id. Nodes the
    /// target does not depend on come back as zero tensors.
    std::map<NodeId, Tensor> backward(const ScalarTarget& target, const std::vector<NodeId>& wanted) const;

    NodeId push(Node n);
    const Node& node(NodeId id) const;

private:
    std::vector<Node> nodes_;
    void check_id(NodeId id) const;
};

/// Validates that `v` is a scalar node and wraps it as a backward target.
ScalarTarget as_scalar(Var v);

// Recorded primitives. All record onto the tape of their first argument;
// mixing tapes is an error.
Var conv2d(Var input, Var kernel, Var bias, int padding, int stride);
Var relu(Var x);
Var maxpool2d(Var x, int window);
Var upsample_bilinear(Var x, int out_h, int out_w);
Var upsample_nearest(Var x, int factor);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scalar_mul(Var x, double s);
Var concat_channels(Var a, Var b);
/// Sum of x[0, channel, i, j] over the given (i, j) pixels; empty set yields
/// the scalar 0 with no gradient flow.
Var masked_sum(Var x, int channel, const std::vector<std::pair<int, int>>& pixels);
Var softmax_channels(Var x);
/// Mean over pixels of -log softmax(logits)[label]; scalar output.
Var softmax_cross_entropy(Var logits, const LabelMap& labels);
Var global_avg_pool(Var x);
/// x: [B,K,1,1], weight: [O,K], bias: [O] -> [B,O,1,1].
Var linear(Var x, Var weight, Var bias);
Var sum_all(Var x);

/// Align-corners bilinear resize of one plane; exact on corner samples.
/// Shared by the recorded op and heatmap assembly.
void bilinear_resize_plane(const double* src, int in_h, int in_w, double* dst, int out_h, int out_w);

/// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per element.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace camscope
