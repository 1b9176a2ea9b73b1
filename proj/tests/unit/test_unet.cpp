#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "camscope/errors.hpp"
#include "camscope/tensor.hpp"
#include "camscope/unet.hpp"

using namespace camscope;
using unet::UNet;
using unet::UNetConfig;

namespace {

// Parameter count written straight from the architecture description, kept
// independent of the shape bookkeeping inside the model.
std::int64_t expected_param_count(const UNetConfig& c) {
    const auto width = [&](int level) { return c.channels[static_cast<std::size_t>(c.depth - level)]; };
    std::int64_t total = 0;
    const auto conv = [&](int out, int in, int k) { total += static_cast<std::int64_t>(out) * in * k * k + out; };
    int prev = c.in_channels;
    for (int n = 1; n < c.depth; ++n) {
        conv(width(n), prev, 3);
        conv(width(n), width(n), 3);
        prev = width(n);
    }
    conv(c.channels[0], prev, 3);
    conv(c.channels[0], c.channels[0], 3);
    int upper = c.channels[0];
    for (int n = c.depth - 1; n >= 1; --n) {
        conv(width(n), upper, 3);
        conv(width(n), 2 * width(n), 3);
        conv(width(n), width(n), 3);
        upper = width(n);
    }
    conv(c.num_classes, width(1), 1);
    return total;
}

std::int64_t actual_param_count(const UNet& model) {
    std::int64_t total = 0;
    for (const auto& [name, t] : model.params()) total += static_cast<std::int64_t>(t.numel());
    return total;
}

bool params_bitwise_equal(const UNet& a, const UNet& b) {
    if (a.params().size() != b.params().size()) return false;
    for (const auto& [name, t] : a.params()) {
        const auto it = b.params().find(name);
        if (it == b.params().end() || it->second.shape != t.shape) return false;
        if (std::memcmp(t.data.data(), it->second.data.data(), t.data.size() * sizeof(double)) != 0)
            return false;
    }
    return true;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("construction is deterministic per seed and differs across seeds") {
    const UNetConfig cfg{2, {8, 4}, 1, 3, 0};
    CHECK(params_bitwise_equal(UNet(cfg), UNet(cfg)));

    UNetConfig other = cfg;
    other.seed = 1;
    CHECK_FALSE(params_bitwise_equal(UNet(cfg), UNet(other)));
}

TEST_CASE("initial conv weights follow the fan-in scaled normal") {
    const UNet model(UNetConfig{2, {16, 16}, 1, 2, 123});
    const Tensor& w = model.params().at("bottleneck.conv2.weight");
    REQUIRE(w.shape == std::vector<int>{16, 16, 3, 3});
    double mean = 0.0;
    for (double v : w.data) mean += v;
    mean /= static_cast<double>(w.data.size());
    double var = 0.0;
    for (double v : w.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(w.data.size());
    const double expected_std = std::sqrt(2.0 / (16.0 * 3.0 * 3.0));
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::sqrt(var) == doctest::Approx(expected_std).epsilon(0.10));

    for (const auto& [name, t] : model.params()) {
        if (t.rank() == 1) {
            for (double v : t.data) CHECK(v == 0.0);  // biases start at zero
        }
    }
}

TEST_CASE("parameter totals match a hand-derived count") {
    const UNetConfig deep{4, {64, 32, 16, 8}, 1, 4, 0};
    CHECK(actual_param_count(UNet(deep)) == expected_param_count(deep));

    const UNetConfig odd{3, {10, 6, 4}, 2, 5, 7};
    CHECK(actual_param_count(UNet(odd)) == expected_param_count(odd));
}

TEST_CASE("forward produces per-pixel logits and the documented captures") {
    const UNet model(UNetConfig{2, {8, 4}, 1, 3, 1});
    Tensor image = Tensor::full({1, 1, 16, 16}, 0.5);
    const unet::Forward f = model.forward(image);
    CHECK(f.tape.value(f.logits).shape == std::vector<int>{1, 3, 16, 16});

    REQUIRE(f.captures.size() == 3);
    CHECK(f.captures[0].name == "enc1.post");
    CHECK(f.captures[1].name == "bottleneck");
    CHECK(f.captures[2].name == "dec1.post");
    CHECK(f.tape.value(f.captures[0].node).shape == std::vector<int>{1, 4, 16, 16});
    CHECK(f.tape.value(f.captures[1].node).shape == std::vector<int>{1, 8, 8, 8});
    CHECK(f.tape.value(f.captures[2].node).shape == std::vector<int>{1, 4, 16, 16});

    CHECK(model.capture_names() == std::vector<std::string>{"enc1.post", "bottleneck", "dec1.post"});
}

TEST_CASE("bottleneck shrinks by one pool per encoder level") {
    const UNet model(UNetConfig{4, {8, 8, 8, 8}, 1, 2, 0});
    CHECK(model.pool_divisor() == 8);
    const unet::Forward f = model.forward(Tensor::full({1, 1, 64, 64}, 0.1));
    for (const auto& cap : f.captures) {
        if (cap.name == "bottleneck") {
            CHECK(f.tape.value(cap.node).shape == std::vector<int>{1, 8, 8, 8});
        }
    }
}

TEST_CASE("forward rejects inputs the pooling chain cannot halve") {
    const UNet model(UNetConfig{3, {8, 4, 4}, 1, 2, 0});
    CHECK(model.pool_divisor() == 4);
    try {
        model.forward(Tensor::zeros({1, 1, 18, 16}));
        FAIL("expected invalid_argument");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("divisible by 4") != std::string::npos);
    }
    CHECK_THROWS_AS(model.forward(Tensor::zeros({1, 2, 16, 16})), std::invalid_argument);
    CHECK_THROWS_AS(model.forward(Tensor::zeros({1, 16, 16})), std::invalid_argument);
}

TEST_CASE("config validation names the offending field") {
    CHECK_THROWS_AS(UNet(UNetConfig{1, {8}, 1, 2, 0}), std::invalid_argument);
    CHECK_THROWS_AS(UNet(UNetConfig{3, {8, 4}, 1, 2, 0}), std::invalid_argument);
    CHECK_THROWS_AS(UNet(UNetConfig{2, {8, 0}, 1, 2, 0}), std::invalid_argument);
    CHECK_THROWS_AS(UNet(UNetConfig{2, {8, 4}, 0, 2, 0}), std::invalid_argument);
    CHECK_THROWS_AS(UNet(UNetConfig{2, {8, 4}, 1, 1, 0}), std::invalid_argument);
}

TEST_CASE("with zeroed weights the logits equal the head bias") {
    UNet model(UNetConfig{2, {8, 4}, 1, 3, 5});
    for (auto& [name, t] : model.params()) {
        for (double& v : t.data) v = 0.0;
    }
    model.params().at("head.bias") = Tensor::from({3}, {0.5, -1.0, 2.0});
    const unet::Forward f = model.forward(Tensor::full({1, 1, 16, 16}, 0.3));
    const Tensor& logits = f.tape.value(f.logits);
    for (int c = 0; c < 3; ++c) {
        const double want = model.params().at("head.bias").data[static_cast<std::size_t>(c)];
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) CHECK(logits.at4(0, c, y, x) == want);
        }
    }
}

TEST_CASE("predict_classes takes the per-pixel argmax with ties to the lower id") {
    Tensor logits = Tensor::zeros({1, 3, 2, 2});
    logits.at4(0, 2, 0, 0) = 1.0;                            // clear winner
    logits.at4(0, 0, 0, 1) = 4.0;                            // class 0 wins
    logits.at4(0, 1, 1, 0) = 2.0;
    logits.at4(0, 2, 1, 0) = 2.0;                            // tie 1 vs 2 -> 1
    const LabelMap pred = unet::predict_classes(logits);
    CHECK(pred.at(0, 0) == 2);
    CHECK(pred.at(0, 1) == 0);
    CHECK(pred.at(1, 0) == 1);
    CHECK(pred.at(1, 1) == 0);  // all-zero column ties to class 0

    CHECK_THROWS_AS(unet::predict_classes(Tensor::zeros({3, 2, 2})), std::invalid_argument);
}

TEST_CASE("weights survive a save/load round trip bitwise") {
    const auto path = temp_file("camscope_unet_roundtrip.csw");
    const UNet model(UNetConfig{2, {6, 3}, 1, 3, 42});
    unet::save_weights(model, path.string());
    const UNet loaded = unet::load_weights(path.string());
    CHECK(loaded.config().depth == 2);
    CHECK(loaded.config().channels == std::vector<int>{6, 3});
    CHECK(loaded.config().num_classes == 3);
    CHECK(params_bitwise_equal(model, loaded));
    std::filesystem::remove(path);
}

TEST_CASE("reloaded weights reproduce the original logits bitwise") {
    const auto path = temp_file("camscope_unet_logits.csw");
    const UNet model(UNetConfig{2, {6, 3}, 1, 3, 9});
    unet::save_weights(model, path.string());
    const UNet loaded = unet::load_weights(path.string());
    const Tensor image = Tensor::full({1, 1, 16, 16}, 0.25);
    const unet::Forward fa = model.forward(image);
    const unet::Forward fb = loaded.forward(image);
    const Tensor& la = fa.tape.value(fa.logits);
    const Tensor& lb = fb.tape.value(fb.logits);
    REQUIRE(la.shape == lb.shape);
    CHECK(std::memcmp(la.data.data(), lb.data.data(), la.data.size() * sizeof(double)) == 0);
    std::filesystem::remove(path);
}

TEST_CASE("malformed weight files are rejected with precise errors") {
    const auto path = temp_file("camscope_unet_malformed.csw");
    const UNet model(UNetConfig{2, {4, 2}, 1, 2, 0});
    unet::save_weights(model, path.string());

    const auto bytes_of = [&] {
        std::ifstream in(path, std::ios::binary);
        return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    const auto rewrite = [&](const std::vector<char>& bytes) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    };
    const std::vector<char> original = bytes_of();

    SUBCASE("corrupt magic") {
        std::vector<char> bad = original;
        bad[0] = 'X';
        rewrite(bad);
        try {
            unet::load_weights(path.string());
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("bad magic") != std::string::npos);
        }
    }
    SUBCASE("truncated payload") {
        std::vector<char> bad = original;
        bad.resize(bad.size() - 8);
        rewrite(bad);
        try {
            unet::load_weights(path.string());
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("truncated") != std::string::npos);
        }
    }
    SUBCASE("tampered parameter extent") {
        // Record layout: 8B magic, u16 version, 3x u32 config ints, u64 seed,
        // u32 channel count, 2x u32 channels, u32 param count, then the first
        // record: u32 name length, 21B "bottleneck.conv1.bias", u32 rank, u32
        // extent. That extent lives at byte 75.
        std::vector<char> bad = original;
        REQUIRE(bad.size() > 80);
        REQUIRE(static_cast<unsigned char>(bad[75]) == 4);
        bad[75] = 5;
        rewrite(bad);
        CHECK_THROWS_AS(unet::load_weights(path.string()), std::invalid_argument);
    }
    SUBCASE("missing file") {
        std::filesystem::remove(path);
        CHECK_THROWS_AS(unet::load_weights(path.string()), IoError);
    }
    std::filesystem::remove(path);
}
