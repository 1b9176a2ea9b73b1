#pragma once

#include <vector>

namespace camscope {

/// Per-pixel integer class ids, row-major.
struct LabelMap {
    int h = 0;
    int w = 0;
    std::vector<int> ids;

    LabelMap() = default;
    LabelMap(int height, int width) : h(height), w(width), ids(static_cast<std::size_t>(height) * width, 0) {}

    int at(int i, int j) const { return ids[static_cast<std::size_t>(i) * w + j]; }
    int& at(int i, int j) { return ids[static_cast<std::size_t>(i) * w + j]; }
};

}  // namespace camscope
