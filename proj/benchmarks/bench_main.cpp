#include <benchmark/benchmark.h>

#include <vector>

#include "camscope/cam.hpp"
#include "camscope/rng.hpp"
#include "camscope/tape.hpp"
#include "camscope/tensor.hpp"
#include "camscope/unet.hpp"

using namespace camscope;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
    return t;
}

void bench_conv2d_forward(benchmark::State& state) {
    Rng rng(1);
    const Tensor in = random_tensor({1, 16, 32, 32}, rng);
    const Tensor k = random_tensor({16, 16, 3, 3}, rng);
    const Tensor b = random_tensor({16}, rng);
    for (auto _ : state) {
        Tape tape;
        Var out = conv2d(tape.leaf(in), tape.leaf(k), tape.leaf(b), 1, 1);
        benchmark::DoNotOptimize(out.value().data.data());
    }
}
BENCHMARK(bench_conv2d_forward);

void bench_conv2d_backward(benchmark::State& state) {
    Rng rng(2);
    const Tensor in = random_tensor({1, 16, 32, 32}, rng);
    const Tensor k = random_tensor({16, 16, 3, 3}, rng);
    const Tensor b = random_tensor({16}, rng);
    for (auto _ : state) {
        Tape tape;
        Var x = tape.leaf(in);
        Var w = tape.leaf(k);
        Var out = conv2d(x, w, tape.leaf(b), 1, 1);
        const auto grads = tape.backward(as_scalar(sum_all(out)), {x.id, w.id});
        benchmark::DoNotOptimize(grads.at(w.id).data.data());
    }
}
BENCHMARK(bench_conv2d_backward);

void bench_unet_forward(benchmark::State& state) {
    Rng rng(3);
    const unet::UNet model(unet::UNetConfig{2, {24, 12}, 1, 3, 3});
    const Tensor image = random_tensor({1, 1, 64, 64}, rng);
    for (auto _ : state) {
        unet::Forward f = model.forward(image);
        benchmark::DoNotOptimize(f.tape.value(f.logits).data.data());
    }
}
BENCHMARK(bench_unet_forward);

void bench_heatmap(benchmark::State& state, cam::Method method) {
    Rng rng(4);
    const unet::UNet model(unet::UNetConfig{2, {24, 12}, 1, 3, 4});
    const Tensor image = random_tensor({1, 1, 64, 64}, rng);
    cam::CamRequest req;
    req.method = method;
    req.cls = 1;
    req.layer = "enc1.post";
    for (auto _ : state) {
        const cam::CamResult r = cam::run(model, image, req);
        benchmark::DoNotOptimize(r.heatmap.post_relu.data.data());
    }
}
BENCHMARK_CAPTURE(bench_heatmap, channel_mean, cam::Method::SegGradCam);
BENCHMARK_CAPTURE(bench_heatmap, raw_gradient, cam::Method::SegHiResGradCam);
BENCHMARK_CAPTURE(bench_heatmap, pooled_gradient, cam::Method::SegXResCam);

void bench_bilinear_resize(benchmark::State& state) {
    Rng rng(5);
    const Tensor src = random_tensor({16, 16}, rng);
    std::vector<double> dst(static_cast<std::size_t>(256) * 256);
    for (auto _ : state) {
        bilinear_resize_plane(src.data.data(), 16, 16, dst.data(), 256, 256);
        benchmark::DoNotOptimize(dst.data());
    }
}
BENCHMARK(bench_bilinear_resize);

}  // namespace

BENCHMARK_MAIN();
