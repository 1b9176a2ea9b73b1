#include "camscope/tensor.hpp"

#include <sstream>
#include <stdexcept>
#include <utility>

namespace camscope {

namespace {

std::int64_t checked_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
        if (e < 1) {
            throw std::invalid_argument("tensor extent must be >= 1, got " + std::to_string(e) +
                                        " in shape " + shape_str(shape));
        }
        n *= e;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> s) {
    const std::int64_t n = checked_numel(s);
    shape = std::move(s);
    data.assign(static_cast<std::size_t>(n), 0.0);
}

Tensor Tensor::zeros(std::vector<int> s) { return Tensor(std::move(s)); }

Tensor Tensor::full(std::vector<int> s, double value) {
    Tensor t(std::move(s));
    for (double& v : t.data) v = value;
    return t;
}

Tensor Tensor::from(std::vector<int> s, std::vector<double> values) {
    const std::int64_t n = checked_numel(s);
    if (n != static_cast<std::int64_t>(values.size())) {
        throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                    " does not match shape " + shape_str(s));
    }
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(values);
    return t;
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(data.size()); }

int Tensor::extent(int axis) const {
    if (axis < 0 || axis >= rank()) {
        throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for rank " +
                                    std::to_string(rank()));
    }
    return shape[static_cast<std::size_t>(axis)];
}

double& Tensor::at4(int b, int c, int y, int x) {
    const int C = shape[1], H = shape[2], W = shape[3];
    return data[static_cast<std::size_t>(((b * C + c) * H + y) * W + x)];
}

double Tensor::at4(int b, int c, int y, int x) const {
    const int C = shape[1], H = shape[2], W = shape[3];
    return data[static_cast<std::size_t>(((b * C + c) * H + y) * W + x)];
}

double& Tensor::at2(int y, int x) {
    const int W = shape[1];
    return data[static_cast<std::size_t>(y * W + x)];
}

double Tensor::at2(int y, int x) const {
    const int W = shape[1];
    return data[static_cast<std::size_t>(y * W + x)];
}

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

}  // namespace camscope
