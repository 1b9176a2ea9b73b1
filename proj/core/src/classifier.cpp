#include "camscope/classifier.hpp"

#include <cmath>
#include <stdexcept>

#include "camscope/rng.hpp"

namespace camscope::cam {

GapFcClassifier::GapFcClassifier(int in_channels, int c0, int c1, int num_classes, std::uint64_t seed)
    : in_channels_(in_channels), num_classes_(num_classes) {
    if (in_channels < 1 || c0 < 1 || c1 < 1) {
        throw std::invalid_argument("GapFcClassifier: channel counts must be >= 1");
    }
    if (num_classes < 2) {
        throw std::invalid_argument("GapFcClassifier: num_classes must be >= 2, got " +
                                    std::to_string(num_classes));
    }
    Rng rng(seed);
    auto he_conv = [&](int out, int in) {
        Tensor t({out, in, 3, 3});
        const double std_dev = std::sqrt(2.0 / (static_cast<double>(in) * 9.0));
        for (double& v : t.data) v = rng.normal(0.0, std_dev);
        return t;
    };
    params_.emplace("conv1.weight", he_conv(c0, in_channels));
    params_.emplace("conv1.bias", Tensor({c0}));
    params_.emplace("conv2.weight", he_conv(c1, c0));
    params_.emplace("conv2.bias", Tensor({c1}));
    Tensor fc({num_classes, c1});
    const double fc_std = std::sqrt(1.0 / static_cast<double>(c1));
    for (double& v : fc.data) v = rng.normal(0.0, fc_std);
    params_.emplace("fc.weight", std::move(fc));
    params_.emplace("fc.bias", Tensor({num_classes}));
}

GapFcClassifier::Forward GapFcClassifier::forward(const Tensor& image) const {
    if (image.rank() != 4 || image.shape[0] != 1 || image.shape[1] != in_channels_) {
        throw std::invalid_argument("GapFcClassifier::forward expects image [1," +
                                    std::to_string(in_channels_) + ",H,W], got shape " +
                                    shape_str(image.shape));
    }
    if (image.shape[2] % 2 != 0 || image.shape[3] % 2 != 0) {
        throw std::invalid_argument("GapFcClassifier::forward: input " + std::to_string(image.shape[2]) +
                                    "x" + std::to_string(image.shape[3]) + " not divisible by 2");
    }
    Forward f;
    Tape& tape = f.tape;
    auto P = [&](const std::string& name) { return tape.leaf(params_.at(name)); };
    Var x = tape.leaf(image);
    x = relu(conv2d(x, P("conv1.weight"), P("conv1.bias"), 1, 1));
    x = maxpool2d(x, 2);
    x = relu(conv2d(x, P("conv2.weight"), P("conv2.bias"), 1, 1));
    f.captures.push_back({"features", x.id});
    Var pooled = global_avg_pool(x);
    Var logits = linear(pooled, P("fc.weight"), P("fc.bias"));
    f.logits = logits.id;
    return f;
}

CamResult cam_fc(const GapFcClassifier& model, const Tensor& image, int cls, ReluOrder relu_order) {
    auto wit = model.params().find("fc.weight");
    auto bit = model.params().find("fc.bias");
    if (wit == model.params().end() || bit == model.params().end() || wit->second.rank() != 2) {
        throw std::invalid_argument(
            "cam_fc requires a model ending in global average pooling and a fully connected layer; "
            "fc parameters are missing or malformed");
    }
    const Tensor& fc = wit->second;
    if (cls < 0 || cls >= fc.shape[0]) {
        throw std::invalid_argument("class " + std::to_string(cls) + " outside [0," +
                                    std::to_string(fc.shape[0]) + ")");
    }

    GapFcClassifier::Forward f = model.forward(image);
    const unet::CapturePoint& capture = f.captures.back();
    const Tensor& activations = f.tape.value(capture.node);
    const int K = activations.shape[1];
    if (fc.shape[1] != K) {
        throw std::invalid_argument("cam_fc: fc.weight has " + std::to_string(fc.shape[1]) +
                                    " columns but the captured features have " + std::to_string(K) +
                                    " channels");
    }

    Tensor weights({K});
    for (int k = 0; k < K; ++k) weights.data[static_cast<std::size_t>(k)] = fc.data[static_cast<std::size_t>(cls) * K + k];

    CamResult result;
    result.heatmap = assemble_heatmap(weights, activations, WeightMode::ScalarWeights, image.shape[2],
                                      image.shape[3], relu_order);
    result.heatmap.method = method_name(Method::CamFc);
    result.heatmap.layer = capture.name;
    result.prediction = unet::predict_classes(f.tape.value(f.logits));
    result.pixel_set = resolve_pixel_set(PixelSetSpec{}, result.prediction);
    if (auto warning = check_resolution_collapse(capture.name, activations.shape[2], activations.shape[3])) {
        result.warnings.push_back(*warning);
    }
    return result;
}

CamResult run_classifier(const GapFcClassifier& model, const Tensor& image, const CamRequest& request) {
    if (request.method == Method::CamFc) {
        return cam_fc(model, image, request.cls, request.relu_order);
    }
    GapFcClassifier::Forward f = model.forward(image);
    return run_on_forward(f.tape, f.logits, f.captures, request, image.shape[2], image.shape[3]);
}

}  // namespace camscope::cam
