#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "camscope/cam.hpp"
#include "camscope/tape.hpp"
#include "camscope/tensor.hpp"
#include "camscope/unet.hpp"

namespace camscope::cam {

/// Small classification network ending in global average pooling and a fully
/// connected layer: conv3x3 + ReLU, 2x2 max-pool, conv3x3 + ReLU (captured as
/// "features"), GAP, FC. On this head the class score is linear in the pooled
/// features, which pins down closed-form channel weights.
class GapFcClassifier {
public:
    GapFcClassifier(int in_channels, int c0, int c1, int num_classes, std::uint64_t seed);

    const std::map<std::string, Tensor>& params() const { return params_; }
    std::map<std::string, Tensor>& params() { return params_; }
    int num_classes() const { return num_classes_; }
    int in_channels() const { return in_channels_; }

    struct Forward {
        Tape tape;
        NodeId logits = -1;  // [1, num_classes, 1, 1]
        std::vector<unet::CapturePoint> captures;
    };
    Forward forward(const Tensor& image) const;

private:
    int in_channels_;
    int num_classes_;
    std::map<std::string, Tensor> params_;
};

/// Channel weights read directly off the FC row of class `cls`, applied to
/// the captured features. Errors unless the model ends in a GAP + FC head
/// with consistent shapes.
CamResult cam_fc(const GapFcClassifier& model, const Tensor& image, int cls,
                 ReluOrder relu_order = ReluOrder::ReluThenUpsample);

/// Seg-style CAM on the classifier's 1x1 output head (the pixel set is that
/// single output pixel).
CamResult run_classifier(const GapFcClassifier& model, const Tensor& image, const CamRequest& request);

}  // namespace camscope::cam
