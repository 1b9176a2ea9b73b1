#include "camscope/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace camscope {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void require_rank(const Tensor& t, int rank, const char* what) {
    require(t.rank() == rank, std::string(what) + " must have rank " + std::to_string(rank) +
                                  ", got shape " + shape_str(t.shape));
}

Tape* same_tape(Var a, Var b) {
    require(a.tape != nullptr && b.tape != nullptr, "op on default-constructed Var");
    require(a.tape == b.tape, "operands recorded on different tapes");
    return a.tape;
}

}  // namespace

const Tensor& Var::value() const {
    if (tape == nullptr) throw std::invalid_argument("value() on default-constructed Var");
    return tape->value(id);
}

void Tape::check_id(NodeId id) const {
    if (id < 0 || id >= size()) {
        throw std::invalid_argument("unknown node id " + std::to_string(id) + " (tape has " +
                                    std::to_string(size()) + " nodes)");
    }
}

Var Tape::leaf(Tensor value) {
    Node n;
    n.op = OpKind::Leaf;
    n.value = std::move(value);
    return Var{this, push(std::move(n))};
}

const Tensor& Tape::value(NodeId id) const {
    check_id(id);
    return nodes_[static_cast<std::size_t>(id)].value;
}

OpKind Tape::op_kind(NodeId id) const {
    check_id(id);
    return nodes_[static_cast<std::size_t>(id)].op;
}

NodeId Tape::push(Node n) {
    for (NodeId in : n.inputs) check_id(in);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

const Tape::Node& Tape::node(NodeId id) const {
    check_id(id);
    return nodes_[static_cast<std::size_t>(id)];
}

ScalarTarget as_scalar(Var v) {
    require(v.tape != nullptr, "as_scalar on default-constructed Var");
    const Tensor& t = v.value();
    require(t.numel() == 1, "backward target must be scalar (all extents 1), got shape " + shape_str(t.shape));
    return ScalarTarget{t.data[0], v.id, v.tape};
}

// ---------------------------------------------------------------------------
// Forward ops
// ---------------------------------------------------------------------------

Var conv2d(Var input, Var kernel, Var bias, int padding, int stride) {
    Tape* tape = same_tape(input, kernel);
    same_tape(input, bias);
    const Tensor& in = input.value();
    const Tensor& k = kernel.value();
    const Tensor& bi = bias.value();
    require_rank(in, 4, "conv2d input");
    require_rank(k, 4, "conv2d kernel");
    require_rank(bi, 1, "conv2d bias");
    require(padding >= 0, "conv2d padding must be >= 0, got " + std::to_string(padding));
    require(stride >= 1, "conv2d stride must be >= 1, got " + std::to_string(stride));
    const int B = in.shape[0], Cin = in.shape[1], H = in.shape[2], W = in.shape[3];
    const int Cout = k.shape[0], KCin = k.shape[1], kh = k.shape[2], kw = k.shape[3];
    require(KCin == Cin, "conv2d: kernel input channels (" + std::to_string(KCin) +
                             ") != input channels (" + std::to_string(Cin) + ")");
    require(bi.shape[0] == Cout, "conv2d: bias extent (" + std::to_string(bi.shape[0]) +
                                     ") != output channels (" + std::to_string(Cout) + ")");
    require(kh <= H + 2 * padding, "conv2d: kernel height " + std::to_string(kh) +
                                       " exceeds padded input height " + std::to_string(H + 2 * padding));
    require(kw <= W + 2 * padding, "conv2d: kernel width " + std::to_string(kw) +
                                       " exceeds padded input width " + std::to_string(W + 2 * padding));
    const int OH = (H + 2 * padding - kh) / stride + 1;
    const int OW = (W + 2 * padding - kw) / stride + 1;

    Tensor out({B, Cout, OH, OW});
    const double* ind = in.data.data();
    const double* kd = k.data.data();
    double* od = out.data.data();
    for (int b = 0; b < B; ++b) {
        for (int co = 0; co < Cout; ++co) {
            double* oplane = od + (static_cast<std::size_t>(b) * Cout + co) * OH * OW;
            const double bv = bi.data[static_cast<std::size_t>(co)];
            std::fill(oplane, oplane + static_cast<std::size_t>(OH) * OW, bv);
            for (int ci = 0; ci < Cin; ++ci) {
                const double* iplane = ind + (static_cast<std::size_t>(b) * Cin + ci) * H * W;
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wv = kd[((static_cast<std::size_t>(co) * Cin + ci) * kh + ky) * kw + kx];
                        if (wv == 0.0) continue;
                        const int oh_lo = padding > ky ? (padding - ky + stride - 1) / stride : 0;
                        const int oh_hi = std::min(OH, (H - 1 + padding - ky) / stride + 1);
                        const int ow_lo = padding > kx ? (padding - kx + stride - 1) / stride : 0;
                        const int ow_hi = std::min(OW, (W - 1 + padding - kx) / stride + 1);
                        for (int oh = oh_lo; oh < oh_hi; ++oh) {
                            const int iy = oh * stride + ky - padding;
                            const double* irow = iplane + static_cast<std::size_t>(iy) * W;
                            double* orow = oplane + static_cast<std::size_t>(oh) * OW;
                            if (stride == 1) {
                                const double* src = irow + (ow_lo + kx - padding);
                                for (int t = 0; t < ow_hi - ow_lo; ++t) orow[ow_lo + t] += wv * src[t];
                            } else {
                                for (int ow = ow_lo; ow < ow_hi; ++ow) {
                                    orow[ow] += wv * irow[ow * stride + kx - padding];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    Tape::Node n;
    n.op = OpKind::Conv2d;
    n.inputs = {input.id, kernel.id, bias.id};
    n.value = std::move(out);
    n.a = padding;
    n.b = stride;
    return Var{tape, tape->push(std::move(n))};
}

Var relu(Var x) {
    const Tensor& in = x.value();
    Tensor out = in;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    Tape::Node n;
    n.op = OpKind::Relu;
    n.inputs = {x.id};
    n.value = std::move(out);
    return Var{x.tape, x.tape->push(std::move(n))};
}

Var maxpool2d(Var x, int window) {
    const Tensor& in = x.value();
    require_rank(in, 4, "maxpool2d input");
    require(window >= 1, "maxpool2d window must be >= 1, got " + std::to_string(window));
    const int B = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
    require(H % window == 0, "maxpool2d: height " + std::to_string(H) + " not divisible by window " +
                                 std::to_string(window));
    require(W % window == 0, "maxpool2d: width " + std::to_string(W) + " not divisible by window " +
                                 std::to_string(window));
    const int OH = H / window, OW = W / window;
    Tensor out({B, C, OH, OW});
    std::vector<std::int32_t> argmax(out.data.size());
    const double* ind = in.data.data();
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const std::size_t ibase = (static_cast<std::size_t>(b) * C + c) * H * W;
            const std::size_t obase = (static_cast<std::size_t>(b) * C + c) * OH * OW;
            for (int oh = 0; oh < OH; ++oh) {
                for (int ow = 0; ow < OW; ++ow) {
                    double best = -HUGE_VAL;
                    std::int32_t best_idx = -1;
                    // ties keep the first hit in row-major scan order
                    for (int dy = 0; dy < window; ++dy) {
                        for (int dx = 0; dx < window; ++dx) {
                            const std::size_t ii = ibase + static_cast<std::size_t>(oh * window + dy) * W +
                                                   (ow * window + dx);
                            if (ind[ii] > best) {
                                best = ind[ii];
                                best_idx = static_cast<std::int32_t>(ii);
                            }
                        }
                    }
                    out.data[obase + static_cast<std::size_t>(oh) * OW + ow] = best;
                    argmax[obase + static_cast<std::size_t>(oh) * OW + ow] = best_idx;
                }
            }
        }
    }
    Tape::Node n;
    n.op = OpKind::MaxPool2d;
    n.inputs = {x.id};
    n.value = std::move(out);
    n.a = window;
    n.idx = std::move(argmax);
    return Var{x.tape, x.tape->push(std::move(n))};
}

namespace {

// Align-corners source coordinate split into floor index and fraction.
inline void ac_coord(int out_pos, int in_extent, int out_extent, int* i0, int* i1, double* frac) {
    if (in_extent == 1) {
        *i0 = *i1 = 0;
        *frac = 0.0;
        return;
    }
    const double src = static_cast<double>(out_pos) * static_cast<double>(in_extent - 1) /
                       static_cast<double>(out_extent - 1);
    int lo = static_cast<int>(src);
    if (lo > in_extent - 1) lo = in_extent - 1;
    *i0 = lo;
    *i1 = lo + 1 < in_extent ? lo + 1 : lo;
    *frac = src - lo;
}

}  // namespace

void bilinear_resize_plane(const double* src, int in_h, int in_w, double* dst, int out_h, int out_w) {
    for (int oy = 0; oy < out_h; ++oy) {
        int y0, y1;
        double fy;
        ac_coord(oy, in_h, out_h, &y0, &y1, &fy);
        const double* row0 = src + static_cast<std::size_t>(y0) * in_w;
        const double* row1 = src + static_cast<std::size_t>(y1) * in_w;
        double* orow = dst + static_cast<std::size_t>(oy) * out_w;
        for (int ox = 0; ox < out_w; ++ox) {
            int x0, x1;
            double fx;
            ac_coord(ox, in_w, out_w, &x0, &x1, &fx);
            const double top = (1.0 - fx) * row0[x0] + fx * row0[x1];
            const double bot = (1.0 - fx) * row1[x0] + fx * row1[x1];
            orow[ox] = (1.0 - fy) * top + fy * bot;
        }
    }
}

Var upsample_bilinear(Var x, int out_h, int out_w) {
    const Tensor& in = x.value();
    require_rank(in, 4, "upsample_bilinear input");
    const int B = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
    require(out_h >= H, "upsample_bilinear: downscale request, out height " + std::to_string(out_h) +
                            " < input height " + std::to_string(H));
    require(out_w >= W, "upsample_bilinear: downscale request, out width " + std::to_string(out_w) +
                            " < input width " + std::to_string(W));
    Tensor out({B, C, out_h, out_w});
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const double* ip = in.data.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
            double* op = out.data.data() + (static_cast<std::size_t>(b) * C + c) * out_h * out_w;
            bilinear_resize_plane(ip, H, W, op, out_h, out_w);
        }
    }
    Tape::Node n;
    n.op = OpKind::UpsampleBilinear;
    n.inputs = {x.id};
    n.value = std::move(out);
    n.a = out_h;
    n.b = out_w;
    return Var{x.tape, x.tape->push(std::move(n))};
}

Var upsample_nearest(Var x, int factor) {
    const Tensor& in = x.value();
    require_rank(in, 4, "upsample_nearest input");
    require(factor >= 1, "upsample_nearest factor must be >= 1, got " + std::to_string(factor));
    const int B = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
    const int OH = H * factor, OW = W * factor;
    Tensor out({B, C, OH, OW});
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const double* ip = in.data.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
            double* op = out.data.data() + (static_cast<std::size_t>(b) * C + c) * OH * OW;
            for (int oy = 0; oy < OH; ++oy) {
                const double* irow = ip + static_cast<std::size_t>(oy / factor) * W;
                double* orow = op + static_cast<std::size_t>(oy) * OW;
                for (int ox = 0; ox < OW; ++ox) orow[ox] = irow[ox / factor];
            }
        }
    }
    Tape::Node n;
    n.op = OpKind::UpsampleNearest;
    n.inputs = {x.id};
    n.value = std::move(out);
    n.a = factor;
    return Var{x.tape, x.tape->push(std::move(n))};
}

Var add(Var a, Var b) {
    Tape* tape = same_tape(a, b);
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    require(same_shape(ta, tb),
            "add: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out = ta;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
    Tape::Node n;
    n.op = OpKind::Add;
    n.inputs = {a.id, b.id};
    n.value = std::move(out);
    return Var{tape, tape->push(std::move(n))};
}

Var mul(Var a, Var b) {
    Tape* tape = same_tape(a, b);
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    require(same_shape(ta, tb),
            "mul: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out = ta;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
    Tape::Node n;
    n.op = OpKind::Mul;
    n.inputs = {a.id, b.id};
    n.value = std::move(out);
    return Var{tape, tape->push(std::move(n))};
}

Var scalar_mul(Var x, double s) {
    Tensor out = x.value();
    for (double& v : out.data) v *= s;
    Tape::Node n;
    n.op = OpKind::ScalarMul;
    n.inputs = {x.id};
    n.value = std::move(out);
    n.scalar = s;
    return Var{x.tape, x.tape->push(std::move(n))};
}

Var concat_channels(Var a, Var b) {
    Tape* tape = same_tape(a, b);
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    require_rank(ta, 4, "concat_channels lhs");
    require_rank(tb, 4, "concat_channels rhs");
    require(ta.shape[0] == tb.shape[0] && ta.shape[2] == tb.shape[2] && ta.shape[3] == tb.shape[3],
            "concat_channels: non-channel extents differ, " + shape_str(ta.shape) + " vs " +
                shape_str(tb.shape));
    const int B = ta.shape[0], C1 = ta.shape[1], C2 = tb.shape[1], H = ta.shape[2], W = ta.shape[3];
    Tensor out({B, C1 + C2, H, W});
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (int bb = 0; bb < B; ++bb) {
        std::copy(ta.data.begin() + static_cast<std::ptrdiff_t>(bb * C1 * plane),
                  ta.data.begin() + static_cast<std::ptrdiff_t>((bb + 1) * C1 * plane),
                  out.data.begin() + static_cast<std::ptrdiff_t>(bb * (C1 + C2) * plane));
        std::copy(tb.data.begin() + static_cast<std::ptrdiff_t>(bb * C2 * plane),
                  tb.data.begin() + static_cast<std::ptrdiff_t>((bb + 1) * C2 * plane),
                  out.data.begin() + static_cast<std::ptrdiff_t>((bb * (C1 + C2) + C1) * plane));
    }
    Tape::Node n;
    n.op = OpKind::ConcatChannels;
    n.inputs = {a.id, b.id};
    n.value = std::move(out);
    n.a = C1;
    return Var{tape, tape->push(std::move(n))};
}

Var masked_sum(Var x, int channel, const std::vector<std::pair<int, int>>& pixels) {
    const Tensor& in = x.value();
    require_rank(in, 4, "masked_sum input");
    const int C = in.shape[1], H = in.shape[2], W = in.shape[3];
    require(in.shape[0] == 1, "masked_sum expects batch extent 1, got " + std::to_string(in.shape[0]));
    require(channel >= 0 && channel < C,
            "masked_sum: channel " + std::to_string(channel) + " out of range [0," + std::to_string(C) + ")");
    std::vector<std::int32_t> flat;
    flat.reserve(pixels.size());
    double sum = 0.0;
    for (const auto& [i, j] : pixels) {
        require(i >= 0 && i < H && j >= 0 && j < W,
                "masked_sum: pixel (" + std::to_string(i) + "," + std::to_string(j) + ") outside " +
                    std::to_string(H) + "x" + std::to_string(W));
        flat.push_back(static_cast<std::int32_t>(i * W + j));
        sum += in.at4(0, channel, i, j);
    }
    Tape::Node n;
    n.op = OpKind::MaskedSum;
    n.inputs = {x.id};
    n.value = Tensor::from({1, 1, 1, 1}, {sum});
    n.a = channel;
    n.idx = std::move(flat);
    return Var{x.tape, x.tape->push(std::move(n))};
}

Var softmax_channels(Var x) {
    const Tensor& in = x.value();
    require_rank(in, 4, "softmax_channels input");
    const int B = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
    Tensor out(in.shape);
    for (int b = 0; b < B; ++b) {
        for (int y = 0; y < H; ++y) {
            for (int xx = 0; xx < W; ++xx) {
                double mx = -HUGE_VAL;
                for (int c = 0; c < C; ++c) mx = std::max(mx, in.at4(b, c, y, xx));
                double z = 0.0;
                for (int c = 0; c < C; ++c) z += std::exp(in.at4(b, c, y, xx) - mx);
                for (int c = 0; c < C; ++c) out.at4(b, c, y, xx) = std::exp(in.at4(b, c, y, xx) - mx) / z;
            }
        }
    }
    Tape::Node n;
    n.op = OpKind::SoftmaxChannels;
    n.inputs = {x.id};
    n.value = std::move(out);
    return Var{x.tape, x.tape->push(std::move(n))};
}

Var softmax_cross_entropy(Var logits, const LabelMap& labels) {
    const Tensor& in = logits.value();
    require_rank(in, 4, "softmax_cross_entropy logits");
    const int C = in.shape[1], H = in.shape[2], W = in.shape[3];
    require(in.shape[0] == 1, "softmax_cross_entropy expects batch extent 1");
    require(labels.h == H && labels.w == W,
            "softmax_cross_entropy: label map " + std::to_string(labels.h) + "x" + std::to_string(labels.w) +
                " does not match logits " + std::to_string(H) + "x" + std::to_string(W));
    std::vector<std::int32_t> lab(static_cast<std::size_t>(H) * W);
    double total = 0.0;
    for (int y = 0; y < H; ++y) {
        for (int xx = 0; xx < W; ++xx) {
            const int id = labels.at(y, xx);
            require(id >= 0 && id < C,
                    "softmax_cross_entropy: label id " + std::to_string(id) + " outside [0," +
                        std::to_string(C) + ") at (" + std::to_string(y) + "," + std::to_string(xx) + ")");
            lab[static_cast<std::size_t>(y) * W + xx] = id;
            double mx = -HUGE_VAL;
            for (int c = 0; c < C; ++c) mx = std::max(mx, in.at4(0, c, y, xx));
            double z = 0.0;
            for (int c = 0; c < C; ++c) z += std::exp(in.at4(0, c, y, xx) - mx);
            total += std::log(z) + mx - in.at4(0, id, y, xx);
        }
    }
    Tape::Node n;
    n.op = OpKind::SoftmaxCrossEntropy;
    n.inputs = {logits.id};
    n.value = Tensor::from({1, 1, 1, 1}, {total / (static_cast<double>(H) * W)});
    n.idx = std::move(lab);
    return Var{logits.tape, logits.tape->push(std::move(n))};
}

Var global_avg_pool(Var x) {
    const Tensor& in = x.value();
    require_rank(in, 4, "global_avg_pool input");
    const int B = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
    Tensor out({B, C, 1, 1});
    const double inv = 1.0 / (static_cast<double>(H) * W);
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const double* p = in.data.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
            double s = 0.0;
            for (int i = 0; i < H * W; ++i) s += p[i];
            out.at4(b, c, 0, 0) = s * inv;
        }
    }
    Tape::Node n;
    n.op = OpKind::GlobalAvgPool;
    n.inputs = {x.id};
    n.value = std::move(out);
    return Var{x.tape, x.tape->push(std::move(n))};
}

Var linear(Var x, Var weight, Var bias) {
    Tape* tape = same_tape(x, weight);
    same_tape(x, bias);
    const Tensor& in = x.value();
    const Tensor& w = weight.value();
    const Tensor& bi = bias.value();
    require_rank(in, 4, "linear input");
    require(in.shape[2] == 1 && in.shape[3] == 1,
            "linear expects pooled input [B,K,1,1], got " + shape_str(in.shape));
    require_rank(w, 2, "linear weight");
    require_rank(bi, 1, "linear bias");
    const int B = in.shape[0], K = in.shape[1], O = w.shape[0];
    require(w.shape[1] == K, "linear: weight columns (" + std::to_string(w.shape[1]) +
                                 ") != input features (" + std::to_string(K) + ")");
    require(bi.shape[0] == O, "linear: bias extent (" + std::to_string(bi.shape[0]) +
                                  ") != output features (" + std::to_string(O) + ")");
    Tensor out({B, O, 1, 1});
    for (int b = 0; b < B; ++b) {
        for (int o = 0; o < O; ++o) {
            double s = bi.data[static_cast<std::size_t>(o)];
            for (int k = 0; k < K; ++k) {
                s += w.data[static_cast<std::size_t>(o) * K + k] * in.at4(b, k, 0, 0);
            }
            out.at4(b, o, 0, 0) = s;
        }
    }
    Tape::Node n;
    n.op = OpKind::Linear;
    n.inputs = {x.id, weight.id, bias.id};
    n.value = std::move(out);
    return Var{tape, tape->push(std::move(n))};
}

Var sum_all(Var x) {
    const Tensor& in = x.value();
    double s = 0.0;
    for (double v : in.data) s += v;
    Tape::Node n;
    n.op = OpKind::SumAll;
    n.inputs = {x.id};
    n.value = Tensor::from({1, 1, 1, 1}, {s});
    return Var{x.tape, x.tape->push(std::move(n))};
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

std::map<NodeId, Tensor> Tape::backward(const ScalarTarget& target, const std::vector<NodeId>& wanted) const {
    require(target.tape == this, "backward: target recorded on a different tape");
    check_id(target.node);
    require(nodes_[static_cast<std::size_t>(target.node)].value.numel() == 1,
            "backward target must be scalar (all extents 1), got shape " +
                shape_str(nodes_[static_cast<std::size_t>(target.node)].value.shape));
    for (NodeId w : wanted) check_id(w);

    std::vector<std::vector<double>> grads(nodes_.size());
    auto grad_of = [&](NodeId id) -> std::vector<double>& {
        auto& g = grads[static_cast<std::size_t>(id)];
        if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(id)].value.data.size(), 0.0);
        return g;
    };
    grad_of(target.node)[0] = 1.0;

    for (NodeId id = target.node; id >= 0; --id) {
        if (grads[static_cast<std::size_t>(id)].empty()) continue;
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        const std::vector<double>& g = grads[static_cast<std::size_t>(id)];
        switch (n.op) {
            case OpKind::Leaf:
                break;
            case OpKind::Conv2d: {
                const Tensor& in = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
                const Tensor& k = nodes_[static_cast<std::size_t>(n.inputs[1])].value;
                const int padding = n.a, stride = n.b;
                const int B = in.shape[0], Cin = in.shape[1], H = in.shape[2], W = in.shape[3];
                const int Cout = k.shape[0], kh = k.shape[2], kw = k.shape[3];
                const int OH = n.value.shape[2], OW = n.value.shape[3];
                std::vector<double>& gin = grad_of(n.inputs[0]);
                std::vector<double>& gk = grad_of(n.inputs[1]);
                std::vector<double>& gb = grad_of(n.inputs[2]);
                for (int b = 0; b < B; ++b) {
                    for (int co = 0; co < Cout; ++co) {
                        const double* gplane = g.data() + (static_cast<std::size_t>(b) * Cout + co) * OH * OW;
                        double s = 0.0;
                        for (int i = 0; i < OH * OW; ++i) s += gplane[i];
                        gb[static_cast<std::size_t>(co)] += s;
                        for (int ci = 0; ci < Cin; ++ci) {
                            const double* iplane = in.data.data() + (static_cast<std::size_t>(b) * Cin + ci) * H * W;
                            double* giplane = gin.data() + (static_cast<std::size_t>(b) * Cin + ci) * H * W;
                            for (int ky = 0; ky < kh; ++ky) {
                                for (int kx = 0; kx < kw; ++kx) {
                                    const std::size_t kidx =
                                        ((static_cast<std::size_t>(co) * Cin + ci) * kh + ky) * kw + kx;
                                    const double wv = k.data[kidx];
                                    const int oh_lo = padding > ky ? (padding - ky + stride - 1) / stride : 0;
                                    const int oh_hi = std::min(OH, (H - 1 + padding - ky) / stride + 1);
                                    const int ow_lo = padding > kx ? (padding - kx + stride - 1) / stride : 0;
                                    const int ow_hi = std::min(OW, (W - 1 + padding - kx) / stride + 1);
                                    double kacc = 0.0;
                                    for (int oh = oh_lo; oh < oh_hi; ++oh) {
                                        const int iy = oh * stride + ky - padding;
                                        const double* grow = gplane + static_cast<std::size_t>(oh) * OW;
                                        const double* irow = iplane + static_cast<std::size_t>(iy) * W;
                                        double* girow = giplane + static_cast<std::size_t>(iy) * W;
                                        if (stride == 1) {
                                            const int off = kx - padding;
                                            for (int ow = ow_lo; ow < ow_hi; ++ow) {
                                                kacc += grow[ow] * irow[ow + off];
                                                girow[ow + off] += wv * grow[ow];
                                            }
                                        } else {
                                            for (int ow = ow_lo; ow < ow_hi; ++ow) {
                                                const int ix = ow * stride + kx - padding;
                                                kacc += grow[ow] * irow[ix];
                                                girow[ix] += wv * grow[ow];
                                            }
                                        }
                                    }
                                    gk[kidx] += kacc;
                                }
                            }
                        }
                    }
                }
                break;
            }
            case OpKind::Relu: {
                const Tensor& in = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
                std::vector<double>& gin = grad_of(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (in.data[i] > 0.0) gin[i] += g[i];
                }
                break;
            }
            case OpKind::MaxPool2d: {
                std::vector<double>& gin = grad_of(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gin[static_cast<std::size_t>(n.idx[i])] += g[i];
                }
                break;
            }
            case OpKind::UpsampleBilinear: {
                const Tensor& in = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
                const int B = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
                const int OH = n.a, OW = n.b;
                std::vector<double>& gin = grad_of(n.inputs[0]);
                for (int b = 0; b < B; ++b) {
                    for (int c = 0; c < C; ++c) {
                        const double* gp = g.data() + (static_cast<std::size_t>(b) * C + c) * OH * OW;
                        double* gi = gin.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
                        for (int oy = 0; oy < OH; ++oy) {
                            int y0, y1;
                            double fy;
                            ac_coord(oy, H, OH, &y0, &y1, &fy);
                            for (int ox = 0; ox < OW; ++ox) {
                                int x0, x1;
                                double fx;
                                ac_coord(ox, W, OW, &x0, &x1, &fx);
                                const double gv = gp[static_cast<std::size_t>(oy) * OW + ox];
                                gi[static_cast<std::size_t>(y0) * W + x0] += (1.0 - fy) * (1.0 - fx) * gv;
                                gi[static_cast<std::size_t>(y0) * W + x1] += (1.0 - fy) * fx * gv;
                                gi[static_cast<std::size_t>(y1) * W + x0] += fy * (1.0 - fx) * gv;
                                gi[static_cast<std::size_t>(y1) * W + x1] += fy * fx * gv;
                            }
                        }
                    }
                }
                break;
            }
            case OpKind::UpsampleNearest: {
                const Tensor& in = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
                const int B = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
                const int f = n.a;
                const int OH = H * f, OW = W * f;
                std::vector<double>& gin = grad_of(n.inputs[0]);
                for (int b = 0; b < B; ++b) {
                    for (int c = 0; c < C; ++c) {
                        const double* gp = g.data() + (static_cast<std::size_t>(b) * C + c) * OH * OW;
                        double* gi = gin.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
                        for (int oy = 0; oy < OH; ++oy) {
                            const std::size_t irow = static_cast<std::size_t>(oy / f) * W;
                            for (int ox = 0; ox < OW; ++ox) {
                                gi[irow + static_cast<std::size_t>(ox / f)] +=
                                    gp[static_cast<std::size_t>(oy) * OW + ox];
                            }
                        }
                    }
                }
                break;
            }
            case OpKind::Add: {
                std::vector<double>& ga = grad_of(n.inputs[0]);
                std::vector<double>& gb2 = grad_of(n.inputs[1]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb2[i] += g[i];
                }
                break;
            }
            case OpKind::Mul: {
                const Tensor& a = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
                const Tensor& b = nodes_[static_cast<std::size_t>(n.inputs[1])].value;
                std::vector<double>& ga = grad_of(n.inputs[0]);
                std::vector<double>& gb2 = grad_of(n.inputs[1]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * b.data[i];
                    gb2[i] += g[i] * a.data[i];
                }
                break;
            }
            case OpKind::ScalarMul: {
                std::vector<double>& gin = grad_of(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) gin[i] += n.scalar * g[i];
                break;
            }
            case OpKind::ConcatChannels: {
                const Tensor& a = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
                const Tensor& b = nodes_[static_cast<std::size_t>(n.inputs[1])].value;
                const int B = a.shape[0], C1 = a.shape[1], C2 = b.shape[1];
                const std::size_t plane = static_cast<std::size_t>(a.shape[2]) * a.shape[3];
                std::vector<double>& ga = grad_of(n.inputs[0]);
                std::vector<double>& gb2 = grad_of(n.inputs[1]);
                for (int bb = 0; bb < B; ++bb) {
                    const double* gsrc = g.data() + static_cast<std::size_t>(bb) * (C1 + C2) * plane;
                    double* pa = ga.data() + static_cast<std::size_t>(bb) * C1 * plane;
                    double* pb = gb2.data() + static_cast<std::size_t>(bb) * C2 * plane;
                    for (std::size_t i = 0; i < C1 * plane; ++i) pa[i] += gsrc[i];
                    for (std::size_t i = 0; i < C2 * plane; ++i) pb[i] += gsrc[C1 * plane + i];
                }
                break;
            }
            case OpKind::MaskedSum: {
                const Tensor& in = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
                const int H = in.shape[2], W = in.shape[3];
                std::vector<double>& gin = grad_of(n.inputs[0]);
                const std::size_t cbase = static_cast<std::size_t>(n.a) * H * W;
                for (std::int32_t flat : n.idx) gin[cbase + static_cast<std::size_t>(flat)] += g[0];
                break;
            }
            case OpKind::SoftmaxChannels: {
                const Tensor& y = n.value;
                const int B = y.shape[0], C = y.shape[1], H = y.shape[2], W = y.shape[3];
                std::vector<double>& gin = grad_of(n.inputs[0]);
                for (int b = 0; b < B; ++b) {
                    for (int yy = 0; yy < H; ++yy) {
                        for (int xx = 0; xx < W; ++xx) {
                            double dot = 0.0;
                            for (int c = 0; c < C; ++c) {
                                const std::size_t i =
                                    ((static_cast<std::size_t>(b) * C + c) * H + yy) * W + xx;
                                dot += g[i] * y.data[i];
                            }
                            for (int c = 0; c < C; ++c) {
                                const std::size_t i =
                                    ((static_cast<std::size_t>(b) * C + c) * H + yy) * W + xx;
                                gin[i] += y.data[i] * (g[i] - dot);
                            }
                        }
                    }
                }
                break;
            }
            case OpKind::SoftmaxCrossEntropy: {
                const Tensor& in = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
                const int C = in.shape[1], H = in.shape[2], W = in.shape[3];
                std::vector<double>& gin = grad_of(n.inputs[0]);
                const double scale = g[0] / (static_cast<double>(H) * W);
                for (int yy = 0; yy < H; ++yy) {
                    for (int xx = 0; xx < W; ++xx) {
                        double mx = -HUGE_VAL;
                        for (int c = 0; c < C; ++c) mx = std::max(mx, in.at4(0, c, yy, xx));
                        double z = 0.0;
                        for (int c = 0; c < C; ++c) z += std::exp(in.at4(0, c, yy, xx) - mx);
                        const int label = n.idx[static_cast<std::size_t>(yy) * W + xx];
                        for (int c = 0; c < C; ++c) {
                            const double p = std::exp(in.at4(0, c, yy, xx) - mx) / z;
                            const std::size_t i = ((static_cast<std::size_t>(c)) * H + yy) * W + xx;
                            gin[i] += scale * (p - (c == label ? 1.0 : 0.0));
                        }
                    }
                }
                break;
            }
            case OpKind::GlobalAvgPool: {
                const Tensor& in = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
                const int B = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
                std::vector<double>& gin = grad_of(n.inputs[0]);
                const double inv = 1.0 / (static_cast<double>(H) * W);
                for (int b = 0; b < B; ++b) {
                    for (int c = 0; c < C; ++c) {
                        const double gv = g[static_cast<std::size_t>(b) * C + c] * inv;
                        double* p = gin.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
                        for (int i = 0; i < H * W; ++i) p[i] += gv;
                    }
                }
                break;
            }
            case OpKind::Linear: {
                const Tensor& in = nodes_[static_cast<std::size_t>(n.inputs[0])].value;
                const Tensor& w = nodes_[static_cast<std::size_t>(n.inputs[1])].value;
                const int B = in.shape[0], K = in.shape[1], O = w.shape[0];
                std::vector<double>& gin = grad_of(n.inputs[0]);
                std::vector<double>& gw = grad_of(n.inputs[1]);
                std::vector<double>& gb2 = grad_of(n.inputs[2]);
                for (int b = 0; b < B; ++b) {
                    for (int o = 0; o < O; ++o) {
                        const double gv = g[static_cast<std::size_t>(b) * O + o];
                        gb2[static_cast<std::size_t>(o)] += gv;
                        for (int k = 0; k < K; ++k) {
                            gw[static_cast<std::size_t>(o) * K + k] += gv * in.at4(b, k, 0, 0);
                            gin[static_cast<std::size_t>(b) * K + k] +=
                                gv * w.data[static_cast<std::size_t>(o) * K + k];
                        }
                    }
                }
                break;
            }
            case OpKind::SumAll: {
                std::vector<double>& gin = grad_of(n.inputs[0]);
                for (double& v : gin) v += g[0];
                break;
            }
        }
    }

    std::map<NodeId, Tensor> out;
    for (NodeId w : wanted) {
        Tensor t(nodes_[static_cast<std::size_t>(w)].value.shape);
        if (!grads[static_cast<std::size_t>(w)].empty()) t.data = grads[static_cast<std::size_t>(w)];
        out.insert_or_assign(w, std::move(t));
    }
    return out;
}

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    require(h > 0.0, "finite_difference_grad: h must be > 0");
    Tensor grad(x.shape);
    Tensor probe = x;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double orig = x.data[i];
        probe.data[i] = orig + h;
        const double fp = f(probe);
        probe.data[i] = orig - h;
        const double fm = f(probe);
        probe.data[i] = orig;
        grad.data[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

}  // namespace camscope
