#pragma once

#include <string>

#include "camscope/label_map.hpp"
#include "camscope/render.hpp"
#include "camscope/tensor.hpp"

namespace camscope::render {

/// Binary P5 (gray) or P6 (RGB), maxval 255. Returns [1,1,H,W] or [1,3,H,W]
/// with values scaled to [0,1]. Malformed input raises IoError naming the
/// byte offset.
Tensor read_pgm_ppm(const std::string& path);

/// Binary P5 whose raw bytes are class ids (not intensities).
LabelMap read_label_pgm(const std::string& path);

/// Binary P6 with the fixed header "P6\n<w> <h>\n255\n"; byte-for-byte
/// deterministic for identical pixels.
void write_ppm(const RgbImage& img, const std::string& path);

}  // namespace camscope::render
