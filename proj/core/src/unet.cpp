#include "camscope/unet.hpp"

#include <cmath>
#include <stdexcept>

#include "camscope/rng.hpp"

namespace camscope::unet {

namespace {

void validate_config(const UNetConfig& c) {
    if (c.depth < 2) {
        throw std::invalid_argument("UNetConfig.depth must be >= 2, got " + std::to_string(c.depth));
    }
    if (static_cast<int>(c.channels.size()) != c.depth) {
        throw std::invalid_argument("UNetConfig.channels must list one width per level (depth " +
                                    std::to_string(c.depth) + "), got " +
                                    std::to_string(c.channels.size()) + " entries");
    }
    for (std::size_t i = 0; i < c.channels.size(); ++i) {
        if (c.channels[i] < 1) {
            throw std::invalid_argument("UNetConfig.channels[" + std::to_string(i) + "] must be >= 1, got " +
                                        std::to_string(c.channels[i]));
        }
    }
    if (c.in_channels < 1) {
        throw std::invalid_argument("UNetConfig.in_channels must be >= 1, got " +
                                    std::to_string(c.in_channels));
    }
    if (c.num_classes < 2) {
        throw std::invalid_argument("UNetConfig.num_classes must be >= 2, got " +
                                    std::to_string(c.num_classes));
    }
}

struct ParamSpec {
    std::string name;
    std::vector<int> shape;
};

// Parameter shapes in forward order. channels are deepest first, so encoder
// level n (1 = shallowest) has width channels[depth - n].
std::vector<ParamSpec> param_specs(const UNetConfig& c) {
    const int depth = c.depth;
    auto ch = [&](int n) { return c.channels[static_cast<std::size_t>(depth - n)]; };
    const int ch_deep = c.channels[0];
    std::vector<ParamSpec> specs;
    auto conv = [&](const std::string& name, int out, int in, int k) {
        specs.push_back({name + ".weight", {out, in, k, k}});
        specs.push_back({name + ".bias", {out}});
    };
    int prev = c.in_channels;
    for (int n = 1; n < depth; ++n) {
        conv("enc" + std::to_string(n) + ".conv1", ch(n), prev, 3);
        conv("enc" + std::to_string(n) + ".conv2", ch(n), ch(n), 3);
        prev = ch(n);
    }
    conv("bottleneck.conv1", ch_deep, prev, 3);
    conv("bottleneck.conv2", ch_deep, ch_deep, 3);
    int upper = ch_deep;
    for (int n = depth - 1; n >= 1; --n) {
        const std::string d = "dec" + std::to_string(n);
        conv(d + ".up", ch(n), upper, 3);
        conv(d + ".conv1", ch(n), 2 * ch(n), 3);
        conv(d + ".conv2", ch(n), ch(n), 3);
        upper = ch(n);
    }
    conv("head", c.num_classes, ch(1), 1);
    return specs;
}

}  // namespace

UNet::UNet(UNetConfig config) : config_(std::move(config)) {
    validate_config(config_);
    Rng rng(config_.seed);
    for (const ParamSpec& spec : param_specs(config_)) {
        Tensor t(spec.shape);
        if (t.rank() == 4) {
            const double fan_in = static_cast<double>(spec.shape[1]) * spec.shape[2] * spec.shape[3];
            const double std_dev = std::sqrt(2.0 / fan_in);
            for (double& v : t.data) v = rng.normal(0.0, std_dev);
        }
        params_.emplace(spec.name, std::move(t));
    }
}

std::vector<std::string> UNet::capture_names() const {
    std::vector<std::string> names;
    for (int n = 1; n < config_.depth; ++n) names.push_back("enc" + std::to_string(n) + ".post");
    names.push_back("bottleneck");
    for (int n = config_.depth - 1; n >= 1; --n) names.push_back("dec" + std::to_string(n) + ".post");
    return names;
}

int UNet::pool_divisor() const {
    return 1 << (config_.depth - 1);
}

Forward UNet::forward(const Tensor& image) const {
    if (image.rank() != 4 || image.shape[0] != 1) {
        throw std::invalid_argument("forward expects image [1," + std::to_string(config_.in_channels) +
                                    ",H,W], got shape " + shape_str(image.shape));
    }
    if (image.shape[1] != config_.in_channels) {
        throw std::invalid_argument("forward: image has " + std::to_string(image.shape[1]) +
                                    " channels, model expects " + std::to_string(config_.in_channels));
    }
    const int div = pool_divisor();
    if (image.shape[2] % div != 0 || image.shape[3] % div != 0) {
        throw std::invalid_argument("forward: input " + std::to_string(image.shape[2]) + "x" +
                                    std::to_string(image.shape[3]) + " not divisible by " +
                                    std::to_string(div) + " (depth " + std::to_string(config_.depth) +
                                    " pools " + std::to_string(config_.depth - 1) + " times)");
    }

    Forward f;
    Tape& tape = f.tape;
    auto P = [&](const std::string& name) {
        Var v = tape.leaf(params_.at(name));
        f.param_nodes.emplace(name, v.id);
        return v;
    };
    auto conv_block = [&](Var x, const std::string& name) {
        return relu(conv2d(x, P(name + ".weight"), P(name + ".bias"), 1, 1));
    };

    Var x = tape.leaf(image);
    f.input = x.id;
    std::vector<Var> skips;
    for (int n = 1; n < config_.depth; ++n) {
        const std::string e = "enc" + std::to_string(n);
        x = conv_block(x, e + ".conv1");
        x = conv_block(x, e + ".conv2");
        f.captures.push_back({e + ".post", x.id});
        skips.push_back(x);
        x = maxpool2d(x, 2);
    }
    x = conv_block(x, "bottleneck.conv1");
    x = conv_block(x, "bottleneck.conv2");
    f.captures.push_back({"bottleneck", x.id});
    for (int n = config_.depth - 1; n >= 1; --n) {
        const std::string d = "dec" + std::to_string(n);
        x = upsample_nearest(x, 2);
        x = conv_block(x, d + ".up");
        x = concat_channels(x, skips[static_cast<std::size_t>(n - 1)]);
        x = conv_block(x, d + ".conv1");
        x = conv_block(x, d + ".conv2");
        f.captures.push_back({d + ".post", x.id});
    }
    Var logits = conv2d(x, P("head.weight"), P("head.bias"), 0, 1);
    f.logits = logits.id;
    return f;
}

LabelMap predict_classes(const Tensor& logits) {
    if (logits.rank() != 4 || logits.shape[0] != 1) {
        throw std::invalid_argument("predict_classes expects logits [1,C,H,W], got shape " +
                                    shape_str(logits.shape));
    }
    const int C = logits.shape[1], H = logits.shape[2], W = logits.shape[3];
    LabelMap out;
    out.h = H;
    out.w = W;
    out.ids.assign(static_cast<std::size_t>(H) * W, 0);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            int best = 0;
            double bv = logits.at4(0, 0, y, x);
            for (int c = 1; c < C; ++c) {
                const double v = logits.at4(0, c, y, x);
                if (v > bv) {
                    bv = v;
                    best = c;
                }
            }
            out.ids[static_cast<std::size_t>(y) * W + x] = best;
        }
    }
    return out;
}

}  // namespace camscope::unet
