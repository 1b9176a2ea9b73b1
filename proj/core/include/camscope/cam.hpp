#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "camscope/label_map.hpp"
#include "camscope/tape.hpp"
#include "camscope/tensor.hpp"
#include "camscope/unet.hpp"

namespace camscope::cam {

enum class Method { CamFc, GradCam, HiResCam, SegGradCam, SegHiResGradCam, SegXResCam };

/// CLI token for a method (cam_fc, grad, hires, seg_grad, seg_hires_grad,
/// seg_xres) and its inverse. parse_method lists valid names on failure.
std::string method_name(Method m);
Method parse_method(const std::string& token);

enum class ReluOrder { ReluThenUpsample, UpsampleThenRelu };

/// Which output pixels feed the target scalar.
struct PixelSetSpec {
    enum class Kind { WholeImage, PredictedClass, Rect, Points };
    Kind kind = Kind::WholeImage;
    int cls = 0;                               // PredictedClass
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;        // Rect, inclusive; x = column, y = row
    std::vector<std::pair<int, int>> points;   // Points, (row, col)
};

/// A spec resolved against a prediction: sorted, deduplicated (row, col)
/// indices. May be empty (a predicted class can be absent).
struct PixelSet {
    PixelSetSpec spec;
    std::vector<std::pair<int, int>> indices;
};

struct CamRequest {
    Method method = Method::SegHiResGradCam;
    int cls = 0;
    std::string layer;  // empty selects the deepest capture
    PixelSetSpec pixel_set;
    int xres_window = 1;
    ReluOrder relu_order = ReluOrder::ReluThenUpsample;
    bool softmax_target = false;  // explain post-softmax scores instead of raw logits
};

/// Both halves of a heatmap at output resolution: the signed combination and
/// its rectified counterpart.
struct Heatmap {
    Tensor pre_relu;   // [H, W]
    Tensor post_relu;  // [H, W]
    std::string method;
    std::string layer;
};

struct CamResult {
    Heatmap heatmap;
    LabelMap prediction;
    PixelSet pixel_set;
    std::vector<std::string> warnings;
};

PixelSet resolve_pixel_set(const PixelSetSpec& spec, const LabelMap& prediction);

/// Sum of class-`cls` logits over the set; empty set records the constant 0.
ScalarTarget target_scalar(Var logits, int cls, const PixelSet& m);

/// Per-channel spatial mean of the gradient; accepts [K,h,w] or [1,K,h,w].
Tensor grad_cam_weights(const Tensor& grad);

/// Identity passthrough: the raw gradient map is the weight map.
Tensor hires_weights(const Tensor& grad);

/// Max-pool the gradient with `window` (ceil grid at the edges), then
/// nearest-upsample back to (h, w). window 1 returns the input unchanged.
Tensor xres_pooled_weights(const Tensor& grad, int window);

enum class WeightMode { ScalarWeights, MapWeights };

/// Scalar mode: sum_k weights[k] * A[k]. Map mode: sum_k weights[k] ⊙ A[k].
/// The combination is then rectified and bilinearly upscaled in the order
/// given; pre_relu is always the signed upscaled combination.
Heatmap assemble_heatmap(const Tensor& weights, const Tensor& activations, WeightMode mode, int out_h,
                         int out_w, ReluOrder relu_order);

/// Warns when the target layer has collapsed to min(h, w) <= 2; at that
/// resolution the upscaled heatmap carries almost no spatial detail.
std::optional<std::string> check_resolution_collapse(const std::string& layer_name, int h, int w);

/// Shared engine: resolves the request against an already-recorded forward
/// pass and assembles the heatmap at (out_h, out_w).
CamResult run_on_forward(Tape& tape, NodeId logits, const std::vector<unet::CapturePoint>& captures,
                         const CamRequest& request, int out_h, int out_w);

/// One forward pass of `model` on `image`, then run_on_forward.
CamResult run(const unet::UNet& model, const Tensor& image, const CamRequest& request);

}  // namespace camscope::cam
