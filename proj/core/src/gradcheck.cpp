#include "camscope/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "camscope/rng.hpp"
#include "camscope/tape.hpp"
#include "camscope/trainer.hpp"
#include "camscope/unet.hpp"

namespace camscope::gradcheck {

namespace {

using GraphFn = std::function<Var(Tape&, const std::vector<Var>&)>;

Tensor uniform_tensor(Rng& rng, std::vector<int> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Uniform in [-1,1] but pushed at least 0.05 away from the ReLU kink.
Tensor kink_free_tensor(Rng& rng, std::vector<int> shape) {
    Tensor t = uniform_tensor(rng, std::move(shape), -1.0, 1.0);
    for (double& v : t.data) {
        if (std::abs(v) < 0.05) v += v >= 0.0 ? 0.05 : -0.05;
    }
    return t;
}

// Forces a top-two gap of at least 0.01 inside every pooling window so a
// +-h probe cannot flip an argmax.
void separate_pool_windows(Tensor& t, int window) {
    const int B = t.shape[0], C = t.shape[1], H = t.shape[2], W = t.shape[3];
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            for (int oy = 0; oy < H / window; ++oy) {
                for (int ox = 0; ox < W / window; ++ox) {
                    double best = -HUGE_VAL, second = -HUGE_VAL;
                    int by = 0, bx = 0;
                    for (int dy = 0; dy < window; ++dy) {
                        for (int dx = 0; dx < window; ++dx) {
                            const double v = t.at4(b, c, oy * window + dy, ox * window + dx);
                            if (v > best) {
                                second = best;
                                best = v;
                                by = oy * window + dy;
                                bx = ox * window + dx;
                            } else if (v > second) {
                                second = v;
                            }
                        }
                    }
                    if (best - second < 0.01) t.at4(b, c, by, bx) = best + 0.02;
                }
            }
        }
    }
}

class Harness {
public:
    explicit Harness(const Options& opts) : opts_(opts) {}

    std::vector<CheckResult>& results() { return results_; }

    void check(const std::string& name, std::vector<Tensor> leaves, const GraphFn& build) {
        Tape tape;
        std::vector<Var> vars;
        std::vector<NodeId> ids;
        for (const Tensor& t : leaves) {
            vars.push_back(tape.leaf(t));
            ids.push_back(vars.back().id);
        }
        const ScalarTarget target = as_scalar(build(tape, vars));
        auto grads = tape.backward(target, ids);
        if (opts_.inject_fault && !fault_spent_) {
            grads.at(ids[0]).data[0] += 0.01;
            fault_spent_ = true;
        }

        double max_rel = 0.0;
        for (std::size_t i = 0; i < leaves.size(); ++i) {
            const Tensor fd = finite_difference_grad(
                [&](const Tensor& probe) {
                    Tape t2;
                    std::vector<Var> vs;
                    for (std::size_t j = 0; j < leaves.size(); ++j) {
                        vs.push_back(t2.leaf(j == i ? probe : leaves[j]));
                    }
                    return build(t2, vs).value().data[0];
                },
                leaves[i], opts_.h);
            max_rel = std::max(max_rel, relative_gap(grads.at(ids[i]), fd));
        }
        results_.push_back({name, max_rel, max_rel < opts_.tolerance});
    }

    void record(const std::string& name, double max_rel) {
        results_.push_back({name, max_rel, max_rel < opts_.tolerance});
    }

private:
    Options opts_;
    bool fault_spent_ = false;
    std::vector<CheckResult> results_;
};

// Reduces an op output to a scalar through a fixed probe so every output
// element influences the target.
GraphFn probed(const std::function<Var(Tape&, const std::vector<Var>&)>& op) {
    return [op](Tape& tape, const std::vector<Var>& vars) {
        return sum_all(mul(op(tape, vars), vars.back()));
    };
}

void check_unet_end_to_end(Harness& harness, const Options& opts) {
    unet::UNetConfig config;
    config.depth = 2;
    config.channels = {8, 4};
    config.in_channels = 1;
    config.num_classes = 3;
    config.seed = opts.seed + 101;
    unet::UNet model(config);

    Rng rng(opts.seed + 202);
    const Tensor image = uniform_tensor(rng, {1, 1, 16, 16}, 0.0, 1.0);
    LabelMap labels(16, 16);
    for (int& id : labels.ids) id = rng.uniform_int(0, config.num_classes - 1);

    unet::Forward f = model.forward(image);
    const ScalarTarget loss = train::cross_entropy_loss(Var{&f.tape, f.logits}, labels);
    std::vector<NodeId> wanted{f.input};
    for (const auto& [name, id] : f.param_nodes) wanted.push_back(id);
    const auto grads = f.tape.backward(loss, wanted);

    const auto loss_at = [&](const unet::UNet& m, const Tensor& img) {
        unet::Forward ff = m.forward(img);
        return train::cross_entropy_loss(Var{&ff.tape, ff.logits}, labels).value;
    };

    double max_rel = 0.0;
    {
        const Tensor fd = finite_difference_grad([&](const Tensor& probe) { return loss_at(model, probe); },
                                                 image, opts.h);
        max_rel = std::max(max_rel, relative_gap(grads.at(f.input), fd));
    }
    for (const auto& [name, node] : f.param_nodes) {
        const Tensor fd = finite_difference_grad(
            [&](const Tensor& probe) {
                unet::UNet m2 = model;
                m2.params().at(name) = probe;
                return loss_at(m2, image);
            },
            model.params().at(name), opts.h);
        max_rel = std::max(max_rel, relative_gap(grads.at(node), fd));
    }
    harness.record("unet_end_to_end", max_rel);
}

}  // namespace

double relative_gap(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) {
        throw std::invalid_argument("relative_gap: tensors must share a shape");
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double denom = std::max({1e-6, std::abs(a.data[i]), std::abs(b.data[i])});
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]) / denom);
    }
    return worst;
}

std::vector<CheckResult> run_suite(const Options& opts) {
    Harness harness(opts);
    Rng rng(opts.seed);

    {  // conv2d, three geometries
        const Tensor in = uniform_tensor(rng, {1, 2, 5, 6}, -1.0, 1.0);
        const Tensor k = uniform_tensor(rng, {3, 2, 3, 3}, -1.0, 1.0);
        const Tensor b = uniform_tensor(rng, {3}, -0.5, 0.5);
        const Tensor probe = uniform_tensor(rng, {1, 3, 5, 6}, -1.0, 1.0);
        harness.check("conv2d_pad1", {in, k, b, probe}, probed([](Tape&, const std::vector<Var>& v) {
                          return conv2d(v[0], v[1], v[2], 1, 1);
                      }));
    }
    {
        const Tensor in = uniform_tensor(rng, {2, 2, 6, 6}, -1.0, 1.0);
        const Tensor k = uniform_tensor(rng, {2, 2, 3, 3}, -1.0, 1.0);
        const Tensor b = uniform_tensor(rng, {2}, -0.5, 0.5);
        const Tensor probe = uniform_tensor(rng, {2, 2, 4, 4}, -1.0, 1.0);
        harness.check("conv2d_valid", {in, k, b, probe}, probed([](Tape&, const std::vector<Var>& v) {
                          return conv2d(v[0], v[1], v[2], 0, 1);
                      }));
    }
    {
        const Tensor in = uniform_tensor(rng, {1, 2, 7, 5}, -1.0, 1.0);
        const Tensor k = uniform_tensor(rng, {2, 2, 3, 3}, -1.0, 1.0);
        const Tensor b = uniform_tensor(rng, {2}, -0.5, 0.5);
        const Tensor probe = uniform_tensor(rng, {1, 2, 5, 4}, -1.0, 1.0);
        harness.check("conv2d_pad2_stride2", {in, k, b, probe}, probed([](Tape&, const std::vector<Var>& v) {
                          return conv2d(v[0], v[1], v[2], 2, 2);
                      }));
    }
    {
        const Tensor in = kink_free_tensor(rng, {1, 3, 4, 5});
        const Tensor probe = uniform_tensor(rng, {1, 3, 4, 5}, -1.0, 1.0);
        harness.check("relu", {in, probe},
                      probed([](Tape&, const std::vector<Var>& v) { return relu(v[0]); }));
    }
    {
        Tensor in = uniform_tensor(rng, {1, 2, 4, 4}, -1.0, 1.0);
        separate_pool_windows(in, 2);
        const Tensor probe = uniform_tensor(rng, {1, 2, 2, 2}, -1.0, 1.0);
        harness.check("maxpool2d_w2", {in, probe},
                      probed([](Tape&, const std::vector<Var>& v) { return maxpool2d(v[0], 2); }));
    }
    {
        Tensor in = uniform_tensor(rng, {1, 1, 6, 6}, -1.0, 1.0);
        separate_pool_windows(in, 3);
        const Tensor probe = uniform_tensor(rng, {1, 1, 2, 2}, -1.0, 1.0);
        harness.check("maxpool2d_w3", {in, probe},
                      probed([](Tape&, const std::vector<Var>& v) { return maxpool2d(v[0], 3); }));
    }
    {
        const Tensor in = uniform_tensor(rng, {1, 2, 2, 3}, -1.0, 1.0);
        const Tensor probe = uniform_tensor(rng, {1, 2, 5, 7}, -1.0, 1.0);
        harness.check("upsample_bilinear", {in, probe}, probed([](Tape&, const std::vector<Var>& v) {
                          return upsample_bilinear(v[0], 5, 7);
                      }));
    }
    {
        const Tensor in = uniform_tensor(rng, {1, 2, 1, 1}, -1.0, 1.0);
        const Tensor probe = uniform_tensor(rng, {1, 2, 3, 3}, -1.0, 1.0);
        harness.check("upsample_bilinear_from_point", {in, probe},
                      probed([](Tape&, const std::vector<Var>& v) {
                          return upsample_bilinear(v[0], 3, 3);
                      }));
    }
    {
        const Tensor in = uniform_tensor(rng, {1, 2, 3, 2}, -1.0, 1.0);
        const Tensor probe = uniform_tensor(rng, {1, 2, 9, 6}, -1.0, 1.0);
        harness.check("upsample_nearest", {in, probe}, probed([](Tape&, const std::vector<Var>& v) {
                          return upsample_nearest(v[0], 3);
                      }));
    }
    {
        const Tensor a = uniform_tensor(rng, {1, 2, 3, 3}, -1.0, 1.0);
        const Tensor b = uniform_tensor(rng, {1, 2, 3, 3}, -1.0, 1.0);
        const Tensor probe = uniform_tensor(rng, {1, 2, 3, 3}, -1.0, 1.0);
        harness.check("add", {a, b, probe},
                      probed([](Tape&, const std::vector<Var>& v) { return add(v[0], v[1]); }));
    }
    {
        const Tensor a = uniform_tensor(rng, {1, 2, 3, 3}, -1.0, 1.0);
        const Tensor b = uniform_tensor(rng, {1, 2, 3, 3}, -1.0, 1.0);
        const Tensor probe = uniform_tensor(rng, {1, 2, 3, 3}, -1.0, 1.0);
        harness.check("mul", {a, b, probe},
                      probed([](Tape&, const std::vector<Var>& v) { return mul(v[0], v[1]); }));
    }
    {
        const Tensor in = uniform_tensor(rng, {1, 2, 3, 3}, -1.0, 1.0);
        const Tensor probe = uniform_tensor(rng, {1, 2, 3, 3}, -1.0, 1.0);
        harness.check("scalar_mul", {in, probe},
                      probed([](Tape&, const std::vector<Var>& v) { return scalar_mul(v[0], -1.7); }));
    }
    {
        const Tensor a = uniform_tensor(rng, {1, 2, 3, 4}, -1.0, 1.0);
        const Tensor b = uniform_tensor(rng, {1, 3, 3, 4}, -1.0, 1.0);
        const Tensor probe = uniform_tensor(rng, {1, 5, 3, 4}, -1.0, 1.0);
        harness.check("concat_channels", {a, b, probe}, probed([](Tape&, const std::vector<Var>& v) {
                          return concat_channels(v[0], v[1]);
                      }));
    }
    {
        const Tensor in = uniform_tensor(rng, {1, 3, 4, 4}, -1.0, 1.0);
        harness.check("masked_sum", {in}, [](Tape&, const std::vector<Var>& v) {
            return masked_sum(v[0], 1, {{0, 0}, {1, 3}, {2, 2}, {3, 1}});
        });
    }
    {
        const Tensor in = uniform_tensor(rng, {1, 3, 2, 2}, -2.0, 2.0);
        const Tensor probe = uniform_tensor(rng, {1, 3, 2, 2}, -1.0, 1.0);
        harness.check("softmax_channels", {in, probe},
                      probed([](Tape&, const std::vector<Var>& v) { return softmax_channels(v[0]); }));
    }
    {
        const Tensor in = uniform_tensor(rng, {1, 4, 3, 3}, -2.0, 2.0);
        LabelMap labels(3, 3);
        for (int& id : labels.ids) id = rng.uniform_int(0, 3);
        harness.check("softmax_cross_entropy", {in}, [labels](Tape&, const std::vector<Var>& v) {
            return softmax_cross_entropy(v[0], labels);
        });
    }
    {
        const Tensor in = uniform_tensor(rng, {2, 3, 4, 4}, -1.0, 1.0);
        const Tensor probe = uniform_tensor(rng, {2, 3, 1, 1}, -1.0, 1.0);
        harness.check("global_avg_pool", {in, probe},
                      probed([](Tape&, const std::vector<Var>& v) { return global_avg_pool(v[0]); }));
    }
    {
        const Tensor in = uniform_tensor(rng, {2, 4, 1, 1}, -1.0, 1.0);
        const Tensor w = uniform_tensor(rng, {3, 4}, -1.0, 1.0);
        const Tensor b = uniform_tensor(rng, {3}, -0.5, 0.5);
        const Tensor probe = uniform_tensor(rng, {2, 3, 1, 1}, -1.0, 1.0);
        harness.check("linear", {in, w, b, probe}, probed([](Tape&, const std::vector<Var>& v) {
                          return linear(v[0], v[1], v[2]);
                      }));
    }
    {
        const Tensor in = uniform_tensor(rng, {2, 2, 3, 3}, -1.0, 1.0);
        harness.check("sum_all", {in}, [](Tape&, const std::vector<Var>& v) { return sum_all(v[0]); });
    }

    check_unet_end_to_end(harness, opts);
    return harness.results();
}

}  // namespace camscope::gradcheck
