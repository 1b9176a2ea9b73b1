#include "camscope/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "camscope/errors.hpp"
#include "camscope/image_io.hpp"
#include "camscope/render.hpp"

namespace camscope::pipeline {

namespace fs = std::filesystem;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<train::Sample> load_dataset_dir(const std::string& dir, int* num_classes) {
    std::vector<std::string> stems;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > 4 && name.ends_with(".pgm") && !name.ends_with(".labels.pgm")) {
            stems.push_back(name.substr(0, name.size() - 4));
        }
    }
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) {
        throw IoError("dataset directory '" + dir + "' holds no .pgm images");
    }
    std::vector<train::Sample> out;
    int max_id = 0;
    for (const std::string& stem : stems) {
        train::Sample s;
        s.image = render::read_pgm_ppm((fs::path(dir) / (stem + ".pgm")).string());
        s.label = render::read_label_pgm((fs::path(dir) / (stem + ".labels.pgm")).string());
        if (s.label.h != s.image.shape[2] || s.label.w != s.image.shape[3]) {
            throw std::invalid_argument("dataset sample '" + stem + "': image " +
                                        std::to_string(s.image.shape[2]) + "x" +
                                        std::to_string(s.image.shape[3]) + " vs label " +
                                        std::to_string(s.label.h) + "x" + std::to_string(s.label.w));
        }
        for (int id : s.label.ids) max_id = std::max(max_id, id);
        out.push_back(std::move(s));
    }
    *num_classes = std::max(2, max_id + 1);
    return out;
}

render::RgbImage base_from_tensor(const Tensor& image) {
    const int C = image.shape[1], H = image.shape[2], W = image.shape[3];
    if (C == 1) {
        Tensor plane({H, W});
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) plane.at2(y, x) = image.at4(0, 0, y, x);
        }
        return render::grayscale_to_rgb(plane);
    }
    render::RgbImage img(W, H);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            std::uint8_t* p = img.px(x, y);
            for (int c = 0; c < 3; ++c) {
                const double v = std::min(1.0, std::max(0.0, image.at4(0, std::min(c, C - 1), y, x)));
                p[c] = static_cast<std::uint8_t>(v * 255.0 + 0.5);
            }
        }
    }
    return img;
}

render::RgbImage heat_overlay(const Tensor& image, const Tensor& post_relu, double alpha) {
    const render::RgbImage base = base_from_tensor(image);
    const render::RgbImage heat =
        render::apply_colormap(render::normalize_heatmap(post_relu, render::NormalizeMode::MinMax));
    return render::overlay(base, heat, alpha);
}

void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
}

}  // namespace

TrainReport run_train(const TrainRun& run) {
    if (run.out_model.empty()) throw std::invalid_argument("run_train: output model path is empty");

    std::vector<train::Sample> dataset;
    unet::UNetConfig arch = run.arch;
    if (!run.data_dir.empty()) {
        int num_classes = 0;
        dataset = load_dataset_dir(run.data_dir, &num_classes);
        arch.num_classes = std::max(arch.num_classes, num_classes);
        arch.in_channels = dataset.front().image.shape[1];
    } else {
        dataset = train::synth_dataset(run.synthetic.n, run.synthetic.classes, run.synthetic.size,
                                       run.synthetic.size, run.seed);
        arch.num_classes = run.synthetic.classes;
        arch.in_channels = 1;
    }
    arch.seed = run.seed;

    unet::UNet model(arch);
    TrainReport report;
    report.log = train::train(model, dataset, {run.lr, run.epochs, run.seed});
    unet::save_weights(model, run.out_model);
    report.model_path = run.out_model;
    report.csv_path = run.out_csv.empty() ? run.out_model + ".metrics.csv" : run.out_csv;
    train::write_metrics_csv(report.log, report.csv_path);
    return report;
}

namespace {

// Let color inputs drive grayscale models and vice versa; anything else is a
// genuine mismatch the forward pass reports.
Tensor adapt_channels(const Tensor& image, int want) {
    const int C = image.shape[1], H = image.shape[2], W = image.shape[3];
    if (C == want) return image;
    if (C == 3 && want == 1) {
        Tensor out({1, 1, H, W});
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                out.at4(0, 0, y, x) =
                    (image.at4(0, 0, y, x) + image.at4(0, 1, y, x) + image.at4(0, 2, y, x)) / 3.0;
            }
        }
        return out;
    }
    if (C == 1 && want == 3) {
        Tensor out({1, 3, H, W});
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) out.at4(0, c, y, x) = image.at4(0, 0, y, x);
            }
        }
        return out;
    }
    return image;
}

}  // namespace

CamReport run_cam(const CamRun& run) {
    const unet::UNet model = unet::load_weights(run.model_path);
    const Tensor image =
        adapt_channels(render::read_pgm_ppm(run.image_path), model.config().in_channels);

    std::vector<cam::Method> methods;
    for (cam::Method m : run.methods) {
        if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
    }
    if (methods.empty()) throw std::invalid_argument("run_cam: no methods requested");

    std::vector<std::string> layers;
    for (const std::string& layer : run.layers) {
        if (layer == "all") {
            for (const std::string& name : model.capture_names()) {
                if (std::find(layers.begin(), layers.end(), name) == layers.end()) layers.push_back(name);
            }
        } else if (std::find(layers.begin(), layers.end(), layer) == layers.end()) {
            layers.push_back(layer);
        }
    }
    if (layers.empty()) layers.push_back("");

    struct Request {
        cam::Method method;
        std::string layer;
    };
    std::vector<Request> requests;
    for (cam::Method m : methods) {
        for (const std::string& layer : layers) requests.push_back({m, layer});
    }

    std::vector<cam::CamResult> results(requests.size());
    const int jobs = std::max(1, std::min<int>(run.jobs, static_cast<int>(requests.size())));
    if (jobs == 1) {
        for (std::size_t i = 0; i < requests.size(); ++i) {
            cam::CamRequest req;
            req.method = requests[i].method;
            req.layer = requests[i].layer;
            req.cls = run.cls;
            req.pixel_set = run.pixel_set;
            req.xres_window = run.xres_window;
            req.relu_order = run.relu_order;
            req.softmax_target = run.softmax_target;
            results[i] = cam::run(model, image, req);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mu;
        std::vector<std::thread> workers;
        for (int t = 0; t < jobs; ++t) {
            workers.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < requests.size(); i = next.fetch_add(1)) {
                    try {
                        cam::CamRequest req;
                        req.method = requests[i].method;
                        req.layer = requests[i].layer;
                        req.cls = run.cls;
                        req.pixel_set = run.pixel_set;
                        req.xres_window = run.xres_window;
                        req.relu_order = run.relu_order;
                        req.softmax_target = run.softmax_target;
                        results[i] = cam::run(model, image, req);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(failure_mu);
                        if (!failure) failure = std::current_exception();
                        return;
                    }
                }
            });
        }
        for (std::thread& w : workers) w.join();
        if (failure) std::rethrow_exception(failure);
    }

    ensure_out_dir(run.out_dir);
    CamReport report;
    const fs::path out(run.out_dir);

    const auto write = [&report](const render::RgbImage& img, const fs::path& path) {
        render::write_ppm(img, path.string());
        report.files.push_back(path.string());
    };
    write(render::render_label_map(results.front().prediction), out / "prediction.ppm");
    write(render::render_mask(results.front().prediction.h, results.front().prediction.w,
                              results.front().pixel_set.indices),
          out / "pixel_set.ppm");
    for (const cam::CamResult& r : results) {
        write(heat_overlay(image, r.heatmap.post_relu, run.alpha),
              out / ("cam_" + r.heatmap.method + "_" + r.heatmap.layer + ".ppm"));
        for (const std::string& w : r.warnings) {
            if (std::find(report.warnings.begin(), report.warnings.end(), w) == report.warnings.end()) {
                report.warnings.push_back(w);
            }
        }
    }
    return report;
}

bool run_gradcheck(const GradcheckRun& run) {
    const auto results = gradcheck::run_suite(run.options);
    bool all = true;
    for (const auto& r : results) {
        std::printf("%-30s max_rel_err %.3e  %s\n", r.name.c_str(), r.max_rel_err,
                    r.pass ? "PASS" : "FAIL");
        all = all && r.pass;
    }
    std::printf("gradient check: %s (%zu checks)\n", all ? "PASS" : "FAIL", results.size());
    return all;
}

std::vector<std::uint8_t> dilate_class_mask(const LabelMap& truth, int cls, int radius) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(truth.h) * truth.w, 0);
    std::vector<std::pair<int, int>> offsets;
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            if (dy * dy + dx * dx <= radius * radius) offsets.emplace_back(dy, dx);
        }
    }
    for (int y = 0; y < truth.h; ++y) {
        for (int x = 0; x < truth.w; ++x) {
            if (truth.at(y, x) != cls) continue;
            for (const auto& [dy, dx] : offsets) {
                const int ny = y + dy, nx = x + dx;
                if (ny >= 0 && ny < truth.h && nx >= 0 && nx < truth.w) {
                    mask[static_cast<std::size_t>(ny) * truth.w + nx] = 1;
                }
            }
        }
    }
    return mask;
}

double mass_fraction(const Tensor& heat, const std::vector<std::uint8_t>& mask, int h, int w) {
    if (heat.rank() != 2 || heat.shape[0] != h || heat.shape[1] != w) {
        throw std::invalid_argument("mass_fraction: map " + shape_str(heat.shape) + " vs mask " +
                                    std::to_string(h) + "x" + std::to_string(w));
    }
    double total = 0.0, inside = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double v = heat.at2(y, x);
            total += v;
            if (mask[static_cast<std::size_t>(y) * w + x]) inside += v;
        }
    }
    return total > 0.0 ? inside / total : 0.0;
}

DemoReport run_demo(const DemoRun& run) {
    const auto t0 = std::chrono::steady_clock::now();
    ensure_out_dir(run.out_dir);
    const fs::path out(run.out_dir);

    const auto dataset = train::synth_dataset(run.data.n, run.data.classes, run.data.size, run.data.size,
                                              run.seed);
    std::vector<int> train_idx, val_idx, test_idx;
    train::split_80_10_10(run.data.n, &train_idx, &val_idx, &test_idx);

    unet::UNetConfig arch = run.arch;
    arch.in_channels = 1;
    arch.num_classes = run.data.classes;
    arch.seed = run.seed;

    DemoReport report;
    report.out_dir = run.out_dir;

    unet::UNet model = [&] {
        if (run.skip_train) {
            if (run.model_path.empty()) {
                throw std::invalid_argument("run_demo: skip_train requires a model path");
            }
            return unet::load_weights(run.model_path);
        }
        unet::UNet m(arch);
        std::vector<train::Sample> subset;
        for (int idx : train_idx) subset.push_back(dataset[static_cast<std::size_t>(idx)]);
        report.log = train::train(m, subset, {run.lr, run.epochs, run.seed});
        return m;
    }();
    report.train_seconds = seconds_since(t0);

    unet::save_weights(model, (out / "model.csw").string());
    if (!report.log.empty()) train::write_metrics_csv(report.log, (out / "metrics.csv").string());

    const int num_classes = model.config().num_classes;
    for (int c = 1; c < num_classes; ++c) report.localization.push_back({c, 0, 0});

    double f1_sum = 0.0, iou_sum = 0.0;
    for (std::size_t k = 0; k < test_idx.size(); ++k) {
        const train::Sample& sample = dataset[static_cast<std::size_t>(test_idx[k])];
        unet::Forward f = model.forward(sample.image);
        const LabelMap prediction = unet::predict_classes(f.tape.value(f.logits));
        const train::Metrics m = train::eval_metrics(prediction, sample.label, num_classes);
        f1_sum += m.f1;
        iou_sum += m.iou;

        const std::string stem = "img" + std::to_string(k);
        render::write_ppm(base_from_tensor(sample.image), (out / (stem + "_input.ppm")).string());
        render::write_ppm(render::render_label_map(sample.label), (out / (stem + "_truth.ppm")).string());
        render::write_ppm(render::render_label_map(prediction), (out / (stem + "_prediction.ppm")).string());

        const int H = sample.image.shape[2], W = sample.image.shape[3];
        for (ClassLocalization& loc : report.localization) {
            cam::CamRequest req;
            req.cls = loc.cls;
            req.layer = run.layer;
            req.pixel_set.kind = cam::PixelSetSpec::Kind::PredictedClass;
            req.pixel_set.cls = loc.cls;

            req.method = cam::Method::SegGradCam;
            const cam::CamResult mean_based = cam::run_on_forward(f.tape, f.logits, f.captures, req, H, W);
            req.method = cam::Method::SegHiResGradCam;
            const cam::CamResult elementwise = cam::run_on_forward(f.tape, f.logits, f.captures, req, H, W);

            const std::string cls_stem = stem + "_class" + std::to_string(loc.cls);
            render::write_ppm(heat_overlay(sample.image, mean_based.heatmap.post_relu, 0.5),
                              (out / (cls_stem + "_seg_grad.ppm")).string());
            render::write_ppm(heat_overlay(sample.image, elementwise.heatmap.post_relu, 0.5),
                              (out / (cls_stem + "_seg_hires_grad.ppm")).string());

            const auto mask = dilate_class_mask(sample.label, loc.cls, 4);
            bool class_in_truth = false;
            for (std::uint8_t v : mask) class_in_truth = class_in_truth || v != 0;
            if (!class_in_truth) continue;
            ++loc.counted;
            if (mass_fraction(elementwise.heatmap.post_relu, mask, H, W) >
                mass_fraction(mean_based.heatmap.post_relu, mask, H, W)) {
                ++loc.wins;
            }
        }
    }
    report.test_f1 = f1_sum / static_cast<double>(test_idx.size());
    report.test_iou = iou_sum / static_cast<double>(test_idx.size());

    std::ofstream summary((out / "summary.txt").string(), std::ios::binary);
    if (!summary) throw IoError("cannot open '" + (out / "summary.txt").string() + "' for writing");
    char line[160];
    std::snprintf(line, sizeof(line), "test_f1 %.6f\ntest_iou %.6f\n", report.test_f1, report.test_iou);
    summary << line;
    for (const ClassLocalization& loc : report.localization) {
        std::snprintf(line, sizeof(line), "class %d localization wins %d/%d\n", loc.cls, loc.wins,
                      loc.counted);
        summary << line;
    }
    summary.close();
    if (!summary) throw IoError("write to demo summary failed");

    report.total_seconds = seconds_since(t0);
    return report;
}

}  // namespace camscope::pipeline
