#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <cstring>
#include <vector>

#include "camscope/rng.hpp"
#include "camscope/tape.hpp"

using namespace camscope;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Direct six-loop cross-correlation, written independently of the tape op.
Tensor conv_oracle(const Tensor& in, const Tensor& k, const Tensor& bias, int pad, int stride) {
    const int B = in.shape[0], Cin = in.shape[1], H = in.shape[2], W = in.shape[3];
    const int Cout = k.shape[0], kh = k.shape[2], kw = k.shape[3];
    const int OH = (H + 2 * pad - kh) / stride + 1;
    const int OW = (W + 2 * pad - kw) / stride + 1;
    Tensor out({B, Cout, OH, OW});
    for (int b = 0; b < B; ++b) {
        for (int co = 0; co < Cout; ++co) {
            for (int oh = 0; oh < OH; ++oh) {
                for (int ow = 0; ow < OW; ++ow) {
                    double acc = bias.data[static_cast<std::size_t>(co)];
                    for (int ci = 0; ci < Cin; ++ci) {
                        for (int ky = 0; ky < kh; ++ky) {
                            for (int kx = 0; kx < kw; ++kx) {
                                const int iy = oh * stride + ky - pad;
                                const int ix = ow * stride + kx - pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += in.at4(b, ci, iy, ix) * k.at4(co, ci, ky, kx);
                            }
                        }
                    }
                    out.at4(b, co, oh, ow) = acc;
                }
            }
        }
    }
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape == b.shape);
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace

TEST_CASE("conv2d all-ones 3x3 sums to 9") {
    Tape tape;
    Var in = tape.leaf(Tensor::full({1, 1, 3, 3}, 1.0));
    Var k = tape.leaf(Tensor::full({1, 1, 3, 3}, 1.0));
    Var b = tape.leaf(Tensor::zeros({1}));
    Var out = conv2d(in, k, b, 0, 1);
    CHECK(out.value().shape == std::vector<int>{1, 1, 1, 1});
    CHECK(out.value().data[0] == doctest::Approx(9.0).epsilon(1e-15));
}

TEST_CASE("conv2d 1x1 identity kernel passes the value through") {
    Tape tape;
    Var in = tape.leaf(Tensor::from({1, 1, 1, 1}, {5.0}));
    Var k = tape.leaf(Tensor::from({1, 1, 1, 1}, {1.0}));
    Var b = tape.leaf(Tensor::zeros({1}));
    CHECK(conv2d(in, k, b, 0, 1).value().data[0] == 5.0);
}

TEST_CASE("conv2d matches the six-loop oracle") {
    Rng rng(42);
    for (const auto& [pad, stride] : std::vector<std::pair<int, int>>{{0, 1}, {1, 1}, {2, 2}}) {
        Tape tape;
        const Tensor in_t = random_tensor({1, 2, 4, 4}, rng);
        const Tensor k_t = random_tensor({3, 2, 3, 3}, rng);
        const Tensor b_t = random_tensor({3}, rng);
        Var out = conv2d(tape.leaf(in_t), tape.leaf(k_t), tape.leaf(b_t), pad, stride);
        CHECK(max_abs_diff(out.value(), conv_oracle(in_t, k_t, b_t, pad, stride)) < 1e-12);
    }
}

TEST_CASE("conv2d rejects mismatched channel counts") {
    Tape tape;
    Var in = tape.leaf(Tensor::zeros({1, 2, 4, 4}));
    Var k = tape.leaf(Tensor::zeros({3, 5, 3, 3}));
    Var b = tape.leaf(Tensor::zeros({3}));
    CHECK_THROWS_AS(conv2d(in, k, b, 1, 1), std::invalid_argument);
}

TEST_CASE("relu clamps negatives and passes positives") {
    Tape tape;
    Var x = tape.leaf(Tensor::from({1, 1, 1, 3}, {-1.0, 0.0, 2.0}));
    const Tensor& y = relu(x).value();
    CHECK(y.data == std::vector<double>{0.0, 0.0, 2.0});

    Var pos = tape.leaf(Tensor::from({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0}));
    CHECK(relu(pos).value().data == pos.value().data);
}

TEST_CASE("relu backward gates on positive inputs") {
    Tape tape;
    Var x = tape.leaf(Tensor::from({1, 1, 1, 2}, {-1.0, 3.0}));
    const ScalarTarget y = as_scalar(sum_all(relu(x)));
    const Tensor g = tape.backward(y, {x.id}).at(x.id);
    CHECK(g.data == std::vector<double>{0.0, 1.0});
}

TEST_CASE("maxpool2d picks window maxima and routes gradient to the argmax") {
    Tape tape;
    Var x = tape.leaf(Tensor::from({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0}));
    Var p = maxpool2d(x, 2);
    CHECK(p.value().data == std::vector<double>{4.0});
    const Tensor g = tape.backward(as_scalar(sum_all(p)), {x.id}).at(x.id);
    CHECK(g.data == std::vector<double>{0.0, 0.0, 0.0, 1.0});
}

TEST_CASE("maxpool2d keeps a constant map constant and breaks ties row-major-first") {
    Tape tape;
    Var c = tape.leaf(Tensor::full({1, 1, 4, 4}, 3.5));
    const Tensor& pooled = maxpool2d(c, 2).value();
    for (double v : pooled.data) CHECK(v == 3.5);

    Var t = tape.leaf(Tensor::full({1, 1, 2, 2}, 7.0));
    Var p = maxpool2d(t, 2);
    const Tensor g = tape.backward(as_scalar(sum_all(p)), {t.id}).at(t.id);
    CHECK(g.data == std::vector<double>{1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("maxpool2d rejects non-divisible extents") {
    Tape tape;
    Var x = tape.leaf(Tensor::zeros({1, 1, 3, 4}));
    CHECK_THROWS_AS(maxpool2d(x, 2), std::invalid_argument);
}

TEST_CASE("upsample_bilinear keeps constants and hits the linear midpoint") {
    Tape tape;
    Var c = tape.leaf(Tensor::full({1, 1, 2, 2}, 2.25));
    for (double v : upsample_bilinear(c, 5, 7).value().data) CHECK(v == doctest::Approx(2.25));

    Var x = tape.leaf(Tensor::from({1, 1, 2, 2}, {0.0, 1.0, 0.0, 1.0}));
    const Tensor& y = upsample_bilinear(x, 2, 3).value();
    CHECK(y.at4(0, 0, 0, 1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(y.at4(0, 0, 1, 1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("upsample_bilinear matches the closed-form align-corners formula") {
    Rng rng(7);
    Tape tape;
    const Tensor src = random_tensor({1, 2, 2, 2}, rng);
    const Tensor& out = upsample_bilinear(tape.leaf(src), 4, 4).value();
    for (int c = 0; c < 2; ++c) {
        for (int oy = 0; oy < 4; ++oy) {
            for (int ox = 0; ox < 4; ++ox) {
                const double sy = static_cast<double>(oy) * 1.0 / 3.0;  // (in_h-1)/(out_h-1)
                const double sx = static_cast<double>(ox) * 1.0 / 3.0;
                const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
                const int y1 = std::min(y0 + 1, 1), x1 = std::min(x0 + 1, 1);
                const double fy = sy - y0, fx = sx - x0;
                const double expect = (1 - fy) * ((1 - fx) * src.at4(0, c, y0, x0) + fx * src.at4(0, c, y0, x1)) +
                                      fy * ((1 - fx) * src.at4(0, c, y1, x0) + fx * src.at4(0, c, y1, x1));
                CHECK(out.at4(0, c, oy, ox) == doctest::Approx(expect).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("upsample_bilinear is exact on corners and rejects downscales") {
    Rng rng(11);
    Tape tape;
    const Tensor src = random_tensor({1, 1, 3, 5}, rng);
    const Tensor& out = upsample_bilinear(tape.leaf(src), 7, 9).value();
    CHECK(out.at4(0, 0, 0, 0) == src.at4(0, 0, 0, 0));
    CHECK(out.at4(0, 0, 0, 8) == src.at4(0, 0, 0, 4));
    CHECK(out.at4(0, 0, 6, 0) == src.at4(0, 0, 2, 0));
    CHECK(out.at4(0, 0, 6, 8) == src.at4(0, 0, 2, 4));

    Var x = tape.leaf(Tensor::zeros({1, 1, 4, 4}));
    CHECK_THROWS_AS(upsample_bilinear(x, 2, 4), std::invalid_argument);
}

TEST_CASE("upsample_nearest replicates blocks") {
    Tape tape;
    Var x = tape.leaf(Tensor::from({1, 1, 1, 2}, {3.0, 4.0}));
    const Tensor& y = upsample_nearest(x, 2).value();
    CHECK(y.shape == std::vector<int>{1, 1, 2, 4});
    CHECK(y.data == std::vector<double>{3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0});
}

TEST_CASE("backward of a plain sum is all ones; unreachable leaves get zeros") {
    Tape tape;
    Var a = tape.leaf(Tensor::full({1, 1, 2, 3}, 0.5));
    const Tensor ga = tape.backward(as_scalar(sum_all(a)), {a.id}).at(a.id);
    for (double v : ga.data) CHECK(v == 1.0);

    Var b = tape.leaf(Tensor::full({1, 1, 2, 2}, 1.0));
    Var dead = scalar_mul(b, -1.0);
    const Tensor gb = tape.backward(as_scalar(sum_all(relu(dead))), {b.id}).at(b.id);
    for (double v : gb.data) CHECK(v == 0.0);
}

TEST_CASE("backward validates its target and wanted ids") {
    Tape tape;
    Var x = tape.leaf(Tensor::zeros({1, 1, 2, 2}));
    CHECK_THROWS_AS(as_scalar(x), std::invalid_argument);
    const ScalarTarget y = as_scalar(sum_all(x));
    CHECK_THROWS_AS(tape.backward(y, {999}), std::invalid_argument);
}

TEST_CASE("backward agrees with finite differences on a conv-relu-conv stack") {
    Rng rng(3);
    const Tensor in_t = random_tensor({1, 2, 6, 6}, rng);
    const Tensor k1_t = random_tensor({3, 2, 3, 3}, rng);
    const Tensor k2_t = random_tensor({2, 3, 3, 3}, rng);
    const Tensor probe = random_tensor({1, 2, 6, 6}, rng);

    const auto value_for = [&](const Tensor& input) {
        Tape tape;
        Var in = tape.leaf(input);
        Var k1 = tape.leaf(k1_t);
        Var b1 = tape.leaf(Tensor::full({3}, 0.1));
        Var k2 = tape.leaf(k2_t);
        Var b2 = tape.leaf(Tensor::full({2}, -0.1));
        Var h = conv2d(in, k1, b1, 1, 1);
        // Shift away from ReLU kinks so finite differences stay two-sided.
        Var y = conv2d(relu(add(h, tape.leaf(Tensor::full(h.value().shape, 0.75)))), k2, b2, 1, 1);
        return as_scalar(sum_all(mul(y, tape.leaf(probe)))).value;
    };

    Tape tape;
    Var in = tape.leaf(in_t);
    Var k1 = tape.leaf(k1_t);
    Var b1 = tape.leaf(Tensor::full({3}, 0.1));
    Var k2 = tape.leaf(k2_t);
    Var b2 = tape.leaf(Tensor::full({2}, -0.1));
    Var h = conv2d(in, k1, b1, 1, 1);
    Var y = conv2d(relu(add(h, tape.leaf(Tensor::full(h.value().shape, 0.75)))), k2, b2, 1, 1);
    const ScalarTarget target = as_scalar(sum_all(mul(y, tape.leaf(probe))));
    const Tensor analytic = tape.backward(target, {in.id}).at(in.id);

    const Tensor numeric = finite_difference_grad(
        [&](const Tensor& x) { return value_for(x); }, in_t, 1e-5);

    for (std::size_t i = 0; i < analytic.data.size(); ++i) {
        const double rel = std::abs(analytic.data[i] - numeric.data[i]) /
                           std::max({1e-6, std::abs(analytic.data[i]), std::abs(numeric.data[i])});
        CHECK(rel < 1e-4);
    }
}

TEST_CASE("finite_difference_grad reproduces simple analytic gradients") {
    const Tensor ones = finite_difference_grad(
        [](const Tensor& t) {
            double s = 0.0;
            for (double v : t.data) s += v;
            return s;
        },
        Tensor::from({1, 1, 1, 3}, {0.3, -0.2, 5.0}), 1e-5);
    for (double v : ones.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));

    const Tensor sq = finite_difference_grad(
        [](const Tensor& t) {
            double s = 0.0;
            for (double v : t.data) s += v * v;
            return s;
        },
        Tensor::from({2}, {1.0, 2.0}), 1e-5);
    CHECK(sq.data[0] == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(sq.data[1] == doctest::Approx(4.0).epsilon(1e-6));
}

TEST_CASE("backward is linear in the target") {
    Rng rng(5);
    Tape tape;
    const Tensor x_t = random_tensor({1, 2, 4, 4}, rng);
    Var x = tape.leaf(x_t);
    Var k = tape.leaf(random_tensor({2, 2, 3, 3}, rng));
    Var b = tape.leaf(random_tensor({2}, rng));
    Var conv = conv2d(x, k, b, 1, 1);
    Var f = sum_all(conv);
    Var g = sum_all(mul(conv, tape.leaf(random_tensor(conv.value().shape, rng))));
    const double alpha = 1.7, beta = -0.6;
    Var combo = add(scalar_mul(f, alpha), scalar_mul(g, beta));

    const Tensor gf = tape.backward(as_scalar(f), {x.id}).at(x.id);
    const Tensor gg = tape.backward(as_scalar(g), {x.id}).at(x.id);
    const Tensor gc = tape.backward(as_scalar(combo), {x.id}).at(x.id);
    for (std::size_t i = 0; i < gc.data.size(); ++i) {
        CHECK(gc.data[i] == doctest::Approx(alpha * gf.data[i] + beta * gg.data[i]).epsilon(1e-10));
    }
}

TEST_CASE("forward and backward are bitwise deterministic") {
    const auto run = [] {
        Rng rng(13);
        Tape tape;
        Var x = tape.leaf(random_tensor({1, 2, 6, 6}, rng));
        Var k = tape.leaf(random_tensor({3, 2, 3, 3}, rng));
        Var b = tape.leaf(random_tensor({3}, rng));
        Var y = maxpool2d(relu(conv2d(x, k, b, 1, 1)), 2);
        const ScalarTarget t = as_scalar(sum_all(y));
        return tape.backward(t, {x.id, k.id}).at(k.id);
    };
    const Tensor first = run(), second = run();
    REQUIRE(first.data.size() == second.data.size());
    CHECK(std::memcmp(first.data.data(), second.data.data(), first.data.size() * sizeof(double)) == 0);
}

TEST_CASE("maxpool backward conserves the routed gradient mass") {
    Rng rng(17);
    Tape tape;
    const Tensor x_t = random_tensor({1, 3, 6, 6}, rng);
    Var x = tape.leaf(x_t);
    Var p = maxpool2d(x, 2);
    Var w = tape.leaf(random_tensor(p.value().shape, rng));
    const ScalarTarget t = as_scalar(sum_all(mul(p, w)));
    const auto grads = tape.backward(t, {x.id, p.id});
    double in_sum = 0.0, out_sum = 0.0;
    for (double v : grads.at(x.id).data) in_sum += v;
    for (double v : grads.at(p.id).data) out_sum += v;
    CHECK(in_sum == doctest::Approx(out_sum).epsilon(1e-12));
}

TEST_CASE("add, mul, scalar_mul and concat_channels behave elementwise") {
    Tape tape;
    Var a = tape.leaf(Tensor::from({1, 1, 1, 2}, {1.0, 2.0}));
    Var b = tape.leaf(Tensor::from({1, 1, 1, 2}, {10.0, 20.0}));
    CHECK(add(a, b).value().data == std::vector<double>{11.0, 22.0});
    CHECK(mul(a, b).value().data == std::vector<double>{10.0, 40.0});
    CHECK(scalar_mul(a, -1.5).value().data == std::vector<double>{-1.5, -3.0});

    Var c = concat_channels(a, b);
    CHECK(c.value().shape == std::vector<int>{1, 2, 1, 2});
    CHECK(c.value().data == std::vector<double>{1.0, 2.0, 10.0, 20.0});

    const auto g = tape.backward(as_scalar(sum_all(mul(a, b))), {a.id, b.id});
    CHECK(g.at(a.id).data == std::vector<double>{10.0, 20.0});
    CHECK(g.at(b.id).data == std::vector<double>{1.0, 2.0});
}

TEST_CASE("operations refuse operands from different tapes") {
    Tape t1, t2;
    Var a = t1.leaf(Tensor::zeros({1, 1, 1, 1}));
    Var b = t2.leaf(Tensor::zeros({1, 1, 1, 1}));
    CHECK_THROWS_AS(add(a, b), std::invalid_argument);
}

TEST_CASE("masked_sum matches a loop oracle and handles the empty set") {
    Rng rng(19);
    Tape tape;
    const Tensor x_t = random_tensor({1, 3, 4, 5}, rng);
    Var x = tape.leaf(x_t);
    const std::vector<std::pair<int, int>> pixels = {{0, 0}, {1, 4}, {3, 2}, {2, 2}};
    Var s = masked_sum(x, 1, pixels);
    double expect = 0.0;
    for (const auto& [i, j] : pixels) expect += x_t.at4(0, 1, i, j);
    CHECK(s.value().data[0] == doctest::Approx(expect).epsilon(1e-12));

    const Tensor g = tape.backward(as_scalar(s), {x.id}).at(x.id);
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 5; ++j) {
                const bool in_set =
                    c == 1 && std::find(pixels.begin(), pixels.end(), std::make_pair(i, j)) != pixels.end();
                CHECK(g.at4(0, c, i, j) == (in_set ? 1.0 : 0.0));
            }
        }
    }

    Var empty = masked_sum(x, 0, {});
    CHECK(empty.value().data[0] == 0.0);
    const Tensor ge = tape.backward(as_scalar(empty), {x.id}).at(x.id);
    for (double v : ge.data) CHECK(v == 0.0);
}

TEST_CASE("softmax_channels normalizes every pixel to 1") {
    Rng rng(23);
    Tape tape;
    Var x = tape.leaf(random_tensor({1, 4, 3, 3}, rng, -5.0, 5.0));
    const Tensor& s = softmax_channels(x).value();
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double sum = 0.0;
            for (int c = 0; c < 4; ++c) sum += s.at4(0, c, i, j);
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("softmax_cross_entropy hits its analytic anchors and the loop oracle") {
    Tape tape;
    LabelMap label(1, 2);
    label.at(0, 0) = 0;
    label.at(0, 1) = 1;

    Var confident = tape.leaf(Tensor::from({1, 2, 1, 2}, {50.0, -50.0, -50.0, 50.0}));
    CHECK(softmax_cross_entropy(confident, label).value().data[0] == doctest::Approx(0.0).epsilon(1e-10));

    Var uniform = tape.leaf(Tensor::zeros({1, 3, 1, 2}));
    LabelMap l2(1, 2);
    CHECK(softmax_cross_entropy(uniform, l2).value().data[0] ==
          doctest::Approx(std::log(3.0)).epsilon(1e-12));

    Rng rng(29);
    const Tensor logits = random_tensor({1, 3, 4, 4}, rng, -2.0, 2.0);
    LabelMap lr(4, 4);
    for (int& id : lr.ids) id = static_cast<int>(rng.uniform_int(3));
    Var lx = tape.leaf(logits);
    const double got = softmax_cross_entropy(lx, lr).value().data[0];

    double expect = 0.0;
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            double mx = logits.at4(0, 0, i, j);
            for (int c = 1; c < 3; ++c) mx = std::max(mx, logits.at4(0, c, i, j));
            double z = 0.0;
            for (int c = 0; c < 3; ++c) z += std::exp(logits.at4(0, c, i, j) - mx);
            expect += -(logits.at4(0, lr.at(i, j), i, j) - mx - std::log(z));
        }
    }
    expect /= 16.0;
    CHECK(got == doctest::Approx(expect).epsilon(1e-10));

    LabelMap bad(4, 4);
    bad.at(0, 0) = 3;  // only classes 0..2 exist
    CHECK_THROWS_AS(softmax_cross_entropy(lx, bad), std::invalid_argument);
}

TEST_CASE("global_avg_pool, linear and sum_all match direct arithmetic") {
    Tape tape;
    Var x = tape.leaf(Tensor::from({1, 2, 2, 2}, {1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0}));
    const Tensor& g = global_avg_pool(x).value();
    CHECK(g.shape == std::vector<int>{1, 2, 1, 1});
    CHECK(g.data[0] == doctest::Approx(2.5));
    CHECK(g.data[1] == doctest::Approx(25.0));

    Var w = tape.leaf(Tensor::from({2, 2}, {1.0, 0.5, -1.0, 2.0}));
    Var b = tape.leaf(Tensor::from({2}, {0.25, -0.25}));
    const Tensor& y = linear(global_avg_pool(x), w, b).value();
    CHECK(y.data[0] == doctest::Approx(1.0 * 2.5 + 0.5 * 25.0 + 0.25));
    CHECK(y.data[1] == doctest::Approx(-1.0 * 2.5 + 2.0 * 25.0 - 0.25));

    CHECK(sum_all(x).value().data[0] == doctest::Approx(110.0));
}
