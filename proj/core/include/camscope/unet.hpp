#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "camscope/label_map.hpp"
#include "camscope/tape.hpp"
#include "camscope/tensor.hpp"

namespace camscope::unet {

struct UNetConfig {
    int depth = 4;
    /// Channel widths per level, deepest first.
    std::vector<int> channels = {64, 32, 16, 8};
    int in_channels = 1;
    int num_classes = 4;
    std::uint64_t seed = 0;
};

/// Named activation recorded during a forward pass; the node id addresses the
/// live tape of the same Forward.
struct CapturePoint {
    std::string name;
    NodeId node = -1;
};

/// One forward pass: the tape, the logits node, the image leaf, every
/// per-level capture in forward order, and the tape node of each parameter
/// leaf.
struct Forward {
    Tape tape;
    NodeId logits = -1;
    NodeId input = -1;
    std::vector<CapturePoint> captures;
    std::map<std::string, NodeId> param_nodes;
};

/// Encoder-decoder segmentation network. Two 3x3 conv + ReLU blocks per
/// level, 2x2 max-pool down, nearest upsample + conv up, skip concatenation,
/// 1x1 conv head producing per-pixel class logits.
class UNet {
public:
    /// Validates the config and draws He-style initial weights from its seed.
    explicit UNet(UNetConfig config);

    const UNetConfig& config() const { return config_; }
    const std::map<std::string, Tensor>& params() const { return params_; }
    std::map<std::string, Tensor>& params() { return params_; }

    /// Capture names in forward order: enc1.post .. bottleneck .. dec1.post.
    std::vector<std::string> capture_names() const;

    /// Input extents must be divisible by this (one 2x pool per encoder level).
    int pool_divisor() const;

    /// Records one pass over `image` [1, in_channels, H, W] on a fresh tape.
    Forward forward(const Tensor& image) const;

private:
    UNetConfig config_;
    std::map<std::string, Tensor> params_;
};

/// Per-pixel argmax over the channel axis; ties go to the lower class index.
LabelMap predict_classes(const Tensor& logits);

/// Binary weight file, bit-exact round trip. Throws IoError on malformed or
/// truncated files, std::invalid_argument on config/shape inconsistencies.
void save_weights(const UNet& model, const std::string& path);
UNet load_weights(const std::string& path);

}  // namespace camscope::unet
