#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "camscope/label_map.hpp"
#include "camscope/tensor.hpp"

namespace camscope::render {

/// 8-bit RGB, row-major, 3 bytes per pixel.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    RgbImage() = default;
    RgbImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(3) * w * h, 0) {}

    std::uint8_t* px(int x, int y) { return data.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
    const std::uint8_t* px(int x, int y) const {
        return data.data() + 3 * (static_cast<std::size_t>(y) * width + x);
    }
};

enum class NormalizeMode { MinMax, None };

/// MinMax sends min to 0 and max to 1; a constant map becomes all 0.5.
/// None clamps into [0, 1].
Tensor normalize_heatmap(const Tensor& map, NormalizeMode mode);

/// Piecewise-linear jet palette over fixed anchors, round-half-up to u8.
/// Input values must already lie in [0, 1].
RgbImage apply_colormap(const Tensor& map01);

/// out = round((1 - alpha) * base + alpha * heat) per channel.
RgbImage overlay(const RgbImage& base, const RgbImage& heat, double alpha);

/// Grayscale [0,1] map replicated into RGB (overlay base for figures).
RgbImage grayscale_to_rgb(const Tensor& map01);

/// Fixed per-class palette; class 0 is black, ids cycle beyond the palette.
RgbImage render_label_map(const LabelMap& labels);

/// White pixels mark set members on black.
RgbImage render_mask(int h, int w, const std::vector<std::pair<int, int>>& indices);

}  // namespace camscope::render
