#include <algorithm>
#include <stdexcept>
#include <string>

#include "camscope/rng.hpp"
#include "camscope/trainer.hpp"

namespace camscope::train {

namespace {

constexpr int kMinCanvas = 16;

double clamp01(double v) {
    return std::min(1.0, std::max(0.0, v));
}

// Paints every pixel the predicate accepts; later shapes overwrite earlier
// ones in both image and label.
template <typename Inside>
void rasterize(Tensor& image, LabelMap& label, int cls, double base, Rng& rng, int y0, int y1, int x0,
               int x1, Inside inside) {
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            if (!inside(y, x)) continue;
            image.at4(0, 0, y, x) = clamp01(base + 0.08 * (rng.uniform01() - 0.5));
            label.at(y, x) = cls;
        }
    }
}

}  // namespace

std::vector<Sample> synth_dataset(int n, int num_classes, int H, int W, std::uint64_t seed) {
    if (n < 0) throw std::invalid_argument("synth_dataset: n must be >= 0, got " + std::to_string(n));
    if (num_classes < 2) {
        throw std::invalid_argument("synth_dataset: num_classes must be >= 2, got " +
                                    std::to_string(num_classes));
    }
    if (std::min(H, W) < kMinCanvas) {
        throw std::invalid_argument("synth_dataset: canvas " + std::to_string(H) + "x" + std::to_string(W) +
                                    " too small for the shape set (minimum extent " +
                                    std::to_string(kMinCanvas) + ")");
    }

    Rng rng(seed);
    const int r_lo = std::min(H, W) / 8;
    const int r_hi = std::min(H, W) / 5;

    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
        Sample sample;
        sample.image = Tensor({1, 1, H, W});
        sample.label = LabelMap(H, W);
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                sample.image.at4(0, 0, y, x) = 0.2 * rng.uniform01();
            }
        }
        for (int cls = 1; cls < num_classes; ++cls) {
            const double base = 0.4 + 0.25 * (cls - 1);
            const int r = rng.uniform_int(r_lo, r_hi);
            const int cy = rng.uniform_int(r, H - 1 - r);
            const int cx = rng.uniform_int(r, W - 1 - r);
            switch ((cls - 1) % 3) {
                case 0: {  // disc: (x-cx)^2 + (y-cy)^2 <= r^2
                    rasterize(sample.image, sample.label, cls, base, rng, cy - r, cy + r, cx - r, cx + r,
                              [&](int y, int x) {
                                  const int dy = y - cy, dx = x - cx;
                                  return dy * dy + dx * dx <= r * r;
                              });
                    break;
                }
                case 1: {  // axis-aligned filled rectangle, inclusive bounds
                    const int hh = rng.uniform_int(r_lo, r);
                    rasterize(sample.image, sample.label, cls, base, rng, cy - hh, cy + hh, cx - r, cx + r,
                              [&](int, int) { return true; });
                    break;
                }
                default: {  // ring: ri^2 <= d^2 <= r^2
                    const int band = std::max(2, r / 3);
                    const int ri = r - band;
                    rasterize(sample.image, sample.label, cls, base, rng, cy - r, cy + r, cx - r, cx + r,
                              [&](int y, int x) {
                                  const int dy = y - cy, dx = x - cx;
                                  const int d2 = dy * dy + dx * dx;
                                  return d2 <= r * r && d2 >= ri * ri;
                              });
                    break;
                }
            }
        }
        out.push_back(std::move(sample));
    }
    return out;
}

}  // namespace camscope::train
