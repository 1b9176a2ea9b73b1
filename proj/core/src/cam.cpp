#include "camscope/cam.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace camscope::cam {

namespace {

const char* kMethodNames[] = {"cam_fc", "grad", "hires", "seg_grad", "seg_hires_grad", "seg_xres"};

struct Khw {
    int K, h, w;
    const double* data;
};

// Channel-plane view of a [K,h,w] or [1,K,h,w] tensor.
Khw khw_view(const Tensor& t, const char* what) {
    if (t.rank() == 3) return {t.shape[0], t.shape[1], t.shape[2], t.data.data()};
    if (t.rank() == 4 && t.shape[0] == 1) return {t.shape[1], t.shape[2], t.shape[3], t.data.data()};
    throw std::invalid_argument(std::string(what) + " must be [K,h,w] or [1,K,h,w], got shape " +
                                shape_str(t.shape));
}

}  // namespace

std::string method_name(Method m) {
    return kMethodNames[static_cast<int>(m)];
}

Method parse_method(const std::string& token) {
    for (int i = 0; i < 6; ++i) {
        if (token == kMethodNames[i]) return static_cast<Method>(i);
    }
    std::string valid;
    for (int i = 0; i < 6; ++i) {
        if (i) valid += ", ";
        valid += kMethodNames[i];
    }
    throw std::invalid_argument("unknown method '" + token + "' (valid: " + valid + ")");
}

PixelSet resolve_pixel_set(const PixelSetSpec& spec, const LabelMap& prediction) {
    const int H = prediction.h, W = prediction.w;
    PixelSet out;
    out.spec = spec;
    switch (spec.kind) {
        case PixelSetSpec::Kind::WholeImage:
            out.indices.reserve(static_cast<std::size_t>(H) * W);
            for (int i = 0; i < H; ++i) {
                for (int j = 0; j < W; ++j) out.indices.emplace_back(i, j);
            }
            break;
        case PixelSetSpec::Kind::PredictedClass:
            for (int i = 0; i < H; ++i) {
                for (int j = 0; j < W; ++j) {
                    if (prediction.at(i, j) == spec.cls) out.indices.emplace_back(i, j);
                }
            }
            break;
        case PixelSetSpec::Kind::Rect: {
            if (spec.x0 > spec.x1 || spec.y0 > spec.y1) {
                throw std::invalid_argument("pixel set rect has empty extent: x0 " + std::to_string(spec.x0) +
                                            " > x1 " + std::to_string(spec.x1) + " or y0 " +
                                            std::to_string(spec.y0) + " > y1 " + std::to_string(spec.y1));
            }
            if (spec.x0 < 0 || spec.y0 < 0 || spec.x1 >= W || spec.y1 >= H) {
                throw std::invalid_argument("pixel set rect (" + std::to_string(spec.x0) + "," +
                                            std::to_string(spec.y0) + ")-(" + std::to_string(spec.x1) + "," +
                                            std::to_string(spec.y1) + ") outside " + std::to_string(W) + "x" +
                                            std::to_string(H) + " output");
            }
            for (int i = spec.y0; i <= spec.y1; ++i) {
                for (int j = spec.x0; j <= spec.x1; ++j) out.indices.emplace_back(i, j);
            }
            break;
        }
        case PixelSetSpec::Kind::Points:
            for (const auto& [i, j] : spec.points) {
                if (i < 0 || i >= H || j < 0 || j >= W) {
                    throw std::invalid_argument("pixel set point (" + std::to_string(i) + "," +
                                                std::to_string(j) + ") outside " + std::to_string(H) + "x" +
                                                std::to_string(W) + " output");
                }
                out.indices.emplace_back(i, j);
            }
            std::sort(out.indices.begin(), out.indices.end());
            out.indices.erase(std::unique(out.indices.begin(), out.indices.end()), out.indices.end());
            break;
    }
    return out;
}

ScalarTarget target_scalar(Var logits, int cls, const PixelSet& m) {
    return as_scalar(masked_sum(logits, cls, m.indices));
}

Tensor grad_cam_weights(const Tensor& grad) {
    const Khw g = khw_view(grad, "grad_cam_weights input");
    Tensor out({g.K});
    const double inv_n = 1.0 / (static_cast<double>(g.h) * g.w);
    for (int k = 0; k < g.K; ++k) {
        const double* plane = g.data + static_cast<std::size_t>(k) * g.h * g.w;
        double s = 0.0;
        for (int i = 0; i < g.h * g.w; ++i) s += plane[i];
        out.data[static_cast<std::size_t>(k)] = s * inv_n;
    }
    return out;
}

Tensor hires_weights(const Tensor& grad) {
    khw_view(grad, "hires_weights input");
    return grad;
}

Tensor xres_pooled_weights(const Tensor& grad, int window) {
    const Khw g = khw_view(grad, "xres_pooled_weights input");
    if (window < 1) {
        throw std::invalid_argument("xres window must be >= 1, got " + std::to_string(window));
    }
    if (window > g.h || window > g.w) {
        throw std::invalid_argument("xres window " + std::to_string(window) + " exceeds feature map " +
                                    std::to_string(g.h) + "x" + std::to_string(g.w));
    }
    if (window == 1) return grad;
    const int ph = (g.h + window - 1) / window;
    const int pw = (g.w + window - 1) / window;
    Tensor out(grad.shape);
    for (int k = 0; k < g.K; ++k) {
        const double* plane = g.data + static_cast<std::size_t>(k) * g.h * g.w;
        double* oplane = out.data.data() + static_cast<std::size_t>(k) * g.h * g.w;
        std::vector<double> pooled(static_cast<std::size_t>(ph) * pw);
        for (int u = 0; u < ph; ++u) {
            for (int v = 0; v < pw; ++v) {
                double best = -HUGE_VAL;
                for (int y = u * window; y < std::min((u + 1) * window, g.h); ++y) {
                    for (int x = v * window; x < std::min((v + 1) * window, g.w); ++x) {
                        best = std::max(best, plane[static_cast<std::size_t>(y) * g.w + x]);
                    }
                }
                pooled[static_cast<std::size_t>(u) * pw + v] = best;
            }
        }
        for (int y = 0; y < g.h; ++y) {
            for (int x = 0; x < g.w; ++x) {
                oplane[static_cast<std::size_t>(y) * g.w + x] =
                    pooled[static_cast<std::size_t>(y / window) * pw + x / window];
            }
        }
    }
    return out;
}

Heatmap assemble_heatmap(const Tensor& weights, const Tensor& activations, WeightMode mode, int out_h,
                         int out_w, ReluOrder relu_order) {
    const Khw a = khw_view(activations, "assemble_heatmap activations");
    if (out_h < a.h || out_w < a.w) {
        throw std::invalid_argument("assemble_heatmap: output " + std::to_string(out_h) + "x" +
                                    std::to_string(out_w) + " smaller than feature map " +
                                    std::to_string(a.h) + "x" + std::to_string(a.w));
    }
    const std::size_t plane = static_cast<std::size_t>(a.h) * a.w;
    std::vector<double> combined(plane, 0.0);
    if (mode == WeightMode::ScalarWeights) {
        if (weights.numel() != a.K) {
            throw std::invalid_argument("assemble_heatmap: " + std::to_string(weights.numel()) +
                                        " scalar weights for " + std::to_string(a.K) + " channels");
        }
        for (int k = 0; k < a.K; ++k) {
            const double wk = weights.data[static_cast<std::size_t>(k)];
            const double* ap = a.data + static_cast<std::size_t>(k) * plane;
            for (std::size_t i = 0; i < plane; ++i) combined[i] += wk * ap[i];
        }
    } else {
        const Khw w = khw_view(weights, "assemble_heatmap map weights");
        if (w.K != a.K || w.h != a.h || w.w != a.w) {
            throw std::invalid_argument("assemble_heatmap: weight map " + shape_str(weights.shape) +
                                        " does not match activations " + shape_str(activations.shape));
        }
        for (int k = 0; k < a.K; ++k) {
            const double* wp = w.data + static_cast<std::size_t>(k) * plane;
            const double* ap = a.data + static_cast<std::size_t>(k) * plane;
            for (std::size_t i = 0; i < plane; ++i) combined[i] += wp[i] * ap[i];
        }
    }

    Heatmap heat;
    heat.pre_relu = Tensor({out_h, out_w});
    heat.post_relu = Tensor({out_h, out_w});
    bilinear_resize_plane(combined.data(), a.h, a.w, heat.pre_relu.data.data(), out_h, out_w);
    if (relu_order == ReluOrder::ReluThenUpsample) {
        std::vector<double> rect(combined);
        for (double& v : rect) v = v > 0.0 ? v : 0.0;
        bilinear_resize_plane(rect.data(), a.h, a.w, heat.post_relu.data.data(), out_h, out_w);
    } else {
        for (std::size_t i = 0; i < heat.pre_relu.data.size(); ++i) {
            heat.post_relu.data[i] = heat.pre_relu.data[i] > 0.0 ? heat.pre_relu.data[i] : 0.0;
        }
    }
    return heat;
}

std::optional<std::string> check_resolution_collapse(const std::string& layer_name, int h, int w) {
    if (std::min(h, w) > 2) return std::nullopt;
    return "resolution collapse: layer '" + layer_name + "' feature map is " + std::to_string(h) + "x" +
           std::to_string(w) + "; deeper pooling has erased nearly all spatial detail and the upscaled "
           "heatmap will be close to uniform";
}

CamResult run_on_forward(Tape& tape, NodeId logits, const std::vector<unet::CapturePoint>& captures,
                         const CamRequest& request, int out_h, int out_w) {
    if (request.method == Method::CamFc) {
        throw std::invalid_argument(
            "cam_fc requires a model ending in global average pooling and a fully connected layer; "
            "this model exposes no such head");
    }
    if (captures.empty()) throw std::invalid_argument("run_on_forward: no capture points");

    const unet::CapturePoint* capture = nullptr;
    if (request.layer.empty()) {
        capture = &captures.back();
        for (const auto& c : captures) {
            if (c.name == "bottleneck") capture = &c;
        }
    } else {
        for (const auto& c : captures) {
            if (c.name == request.layer) capture = &c;
        }
        if (capture == nullptr) {
            std::string valid;
            for (const auto& c : captures) {
                if (!valid.empty()) valid += ", ";
                valid += c.name;
            }
            throw std::invalid_argument("unknown layer '" + request.layer + "' (valid: " + valid + ")");
        }
    }

    const Tensor& logit_val = tape.value(logits);
    const int num_classes = logit_val.shape[1];
    if (request.cls < 0 || request.cls >= num_classes) {
        throw std::invalid_argument("class " + std::to_string(request.cls) + " outside [0," +
                                    std::to_string(num_classes) + ")");
    }

    CamResult result;
    result.prediction = unet::predict_classes(logit_val);

    PixelSetSpec spec = request.pixel_set;
    if (request.method == Method::GradCam || request.method == Method::HiResCam) {
        spec = PixelSetSpec{};  // classification style: every output pixel
    }
    result.pixel_set = resolve_pixel_set(spec, result.prediction);

    Var scores{&tape, logits};
    if (request.softmax_target) scores = softmax_channels(scores);
    const ScalarTarget target = target_scalar(scores, request.cls, result.pixel_set);
    const Tensor& activations = tape.value(capture->node);
    Tensor grad = std::move(tape.backward(target, {capture->node}).at(capture->node));

    Tensor weights;
    WeightMode mode = WeightMode::MapWeights;
    switch (request.method) {
        case Method::GradCam:
        case Method::SegGradCam:
            weights = grad_cam_weights(grad);
            mode = WeightMode::ScalarWeights;
            break;
        case Method::HiResCam:
        case Method::SegHiResGradCam:
            weights = std::move(grad);
            break;
        case Method::SegXResCam:
            weights = xres_pooled_weights(grad, request.xres_window);
            break;
        default:
            break;
    }

    result.heatmap = assemble_heatmap(weights, activations, mode, out_h, out_w, request.relu_order);
    result.heatmap.method = method_name(request.method);
    result.heatmap.layer = capture->name;
    const Khw a = khw_view(activations, "capture");
    if (auto warning = check_resolution_collapse(capture->name, a.h, a.w)) {
        result.warnings.push_back(*warning);
    }
    return result;
}

CamResult run(const unet::UNet& model, const Tensor& image, const CamRequest& request) {
    unet::Forward f = model.forward(image);
    return run_on_forward(f.tape, f.logits, f.captures, request, image.shape[2], image.shape[3]);
}

}  // namespace camscope::cam
