#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace camscope {

/// Dense row-major tensor of doubles. Activations use the layout
/// [batch, channels, height, width]; kernels [out, in, kh, kw].
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);

    static Tensor zeros(std::vector<int> s);
    static Tensor full(std::vector<int> s, double value);
    static Tensor from(std::vector<int> s, std::vector<double> values);

    int rank() const { return static_cast<int>(shape.size()); }
    std::int64_t numel() const;
    int extent(int axis) const;

    double& at4(int b, int c, int y, int x);
    double at4(int b, int c, int y, int x) const;
    double& at2(int y, int x);
    double at2(int y, int x) const;
};

std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);
bool same_shape(const Tensor& a, const Tensor& b);

}  // namespace camscope
