#include "camscope/render.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace camscope::render {

namespace {

void require_2d(const Tensor& map, const char* what) {
    if (map.rank() != 2) {
        throw std::invalid_argument(std::string(what) + " expects a rank-2 map, got shape " +
                                    shape_str(map.shape));
    }
}

std::uint8_t round_half_up(double v) {
    return static_cast<std::uint8_t>(std::floor(v + 0.5));
}

struct Anchor {
    double t;
    double r, g, b;
};

constexpr Anchor kJet[] = {
    {0.0, 0, 0, 131}, {0.125, 0, 60, 170}, {0.375, 5, 255, 255},
    {0.625, 255, 255, 0}, {0.875, 250, 0, 0}, {1.0, 128, 0, 0},
};

constexpr std::uint8_t kClassPalette[][3] = {
    {0, 0, 0},      {230, 25, 75},  {60, 180, 75},  {255, 225, 25},
    {0, 130, 200},  {145, 30, 180}, {70, 240, 240}, {240, 50, 230},
};

}  // namespace

Tensor normalize_heatmap(const Tensor& map, NormalizeMode mode) {
    require_2d(map, "normalize_heatmap");
    Tensor out(map.shape);
    if (mode == NormalizeMode::None) {
        for (std::size_t i = 0; i < map.data.size(); ++i) {
            out.data[i] = std::min(1.0, std::max(0.0, map.data[i]));
        }
        return out;
    }
    const auto [lo_it, hi_it] = std::minmax_element(map.data.begin(), map.data.end());
    const double lo = *lo_it, hi = *hi_it;
    if (hi == lo) {
        std::fill(out.data.begin(), out.data.end(), 0.5);
        return out;
    }
    const double inv = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < map.data.size(); ++i) out.data[i] = (map.data[i] - lo) * inv;
    return out;
}

RgbImage apply_colormap(const Tensor& map01) {
    require_2d(map01, "apply_colormap");
    const int H = map01.shape[0], W = map01.shape[1];
    RgbImage img(W, H);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double v = map01.at2(y, x);
            if (!(v >= 0.0 && v <= 1.0)) {
                throw std::invalid_argument("apply_colormap: value " + std::to_string(v) + " at (" +
                                            std::to_string(y) + "," + std::to_string(x) +
                                            ") outside [0,1]");
            }
            std::size_t seg = 0;
            while (seg + 2 < std::size(kJet) && v > kJet[seg + 1].t) ++seg;
            const Anchor& a = kJet[seg];
            const Anchor& b = kJet[seg + 1];
            const double t = (v - a.t) / (b.t - a.t);
            std::uint8_t* p = img.px(x, y);
            p[0] = round_half_up(a.r + t * (b.r - a.r));
            p[1] = round_half_up(a.g + t * (b.g - a.g));
            p[2] = round_half_up(a.b + t * (b.b - a.b));
        }
    }
    return img;
}

RgbImage overlay(const RgbImage& base, const RgbImage& heat, double alpha) {
    if (base.width != heat.width || base.height != heat.height) {
        throw std::invalid_argument("overlay: base " + std::to_string(base.width) + "x" +
                                    std::to_string(base.height) + " vs heat " + std::to_string(heat.width) +
                                    "x" + std::to_string(heat.height));
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw std::invalid_argument("overlay: alpha " + std::to_string(alpha) + " outside [0,1]");
    }
    RgbImage out(base.width, base.height);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = round_half_up((1.0 - alpha) * base.data[i] + alpha * heat.data[i]);
    }
    return out;
}

RgbImage grayscale_to_rgb(const Tensor& map01) {
    require_2d(map01, "grayscale_to_rgb");
    const int H = map01.shape[0], W = map01.shape[1];
    RgbImage img(W, H);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double v = std::min(1.0, std::max(0.0, map01.at2(y, x)));
            const std::uint8_t g = round_half_up(255.0 * v);
            std::uint8_t* p = img.px(x, y);
            p[0] = p[1] = p[2] = g;
        }
    }
    return img;
}

RgbImage render_label_map(const LabelMap& labels) {
    RgbImage img(labels.w, labels.h);
    constexpr std::size_t n = std::size(kClassPalette);
    for (int y = 0; y < labels.h; ++y) {
        for (int x = 0; x < labels.w; ++x) {
            const auto& c = kClassPalette[static_cast<std::size_t>(labels.at(y, x)) % n];
            std::uint8_t* p = img.px(x, y);
            p[0] = c[0];
            p[1] = c[1];
            p[2] = c[2];
        }
    }
    return img;
}

RgbImage render_mask(int h, int w, const std::vector<std::pair<int, int>>& indices) {
    RgbImage img(w, h);
    for (const auto& [i, j] : indices) {
        if (i < 0 || i >= h || j < 0 || j >= w) {
            throw std::invalid_argument("render_mask: index (" + std::to_string(i) + "," +
                                        std::to_string(j) + ") outside " + std::to_string(h) + "x" +
                                        std::to_string(w));
        }
        std::uint8_t* p = img.px(j, i);
        p[0] = p[1] = p[2] = 255;
    }
    return img;
}

}  // namespace camscope::render
