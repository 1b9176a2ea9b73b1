// camscope CLI: train/load a small U-Net, compute class-activation heatmaps,
// run the gradient-check suite, or produce the end-to-end synthetic demo.
//
// Exit codes: 0 success, 1 failed gradient check, 2 configuration error,
// 3 I/O error.

#include <charconv>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "camscope/cam.hpp"
#include "camscope/errors.hpp"
#include "camscope/pipeline.hpp"

namespace {

using namespace camscope;

int parse_int_token(const std::string& text, const char* what) {
    int v = 0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last) {
        throw std::invalid_argument(std::string(what) + ": '" + text + "' is not an integer");
    }
    return v;
}

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = text.find(sep, start);
        out.push_back(text.substr(start, pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

pipeline::SyntheticSpec parse_synthetic_spec(const std::string& text) {
    pipeline::SyntheticSpec spec;
    for (const std::string& item : split(text, ',')) {
        const std::size_t eq = item.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("synthetic spec entry '" + item +
                                        "' is not key=value (valid keys: n, classes, size)");
        }
        const std::string key = item.substr(0, eq);
        const int value = parse_int_token(item.substr(eq + 1), "synthetic spec");
        if (value <= 0) {
            throw std::invalid_argument("synthetic spec: " + key + " must be positive, got " +
                                        std::to_string(value));
        }
        if (key == "n") {
            spec.n = value;
        } else if (key == "classes") {
            spec.classes = value;
        } else if (key == "size") {
            spec.size = value;
        } else {
            throw std::invalid_argument("synthetic spec: unknown key '" + key +
                                        "' (valid keys: n, classes, size)");
        }
    }
    return spec;
}

cam::PixelSetSpec parse_pixel_set(const std::string& text) {
    cam::PixelSetSpec spec;
    if (text == "whole") return spec;
    const std::size_t colon = text.find(':');
    const std::string head = text.substr(0, colon);
    const std::string args = colon == std::string::npos ? "" : text.substr(colon + 1);
    if (head == "class" && colon != std::string::npos) {
        spec.kind = cam::PixelSetSpec::Kind::PredictedClass;
        spec.cls = parse_int_token(args, "pixel set class");
        return spec;
    }
    if (head == "rect" && colon != std::string::npos) {
        const auto parts = split(args, ',');
        if (parts.size() != 4) {
            throw std::invalid_argument("pixel set rect needs x0,y0,x1,y1; got '" + args + "'");
        }
        spec.kind = cam::PixelSetSpec::Kind::Rect;
        spec.x0 = parse_int_token(parts[0], "pixel set rect");
        spec.y0 = parse_int_token(parts[1], "pixel set rect");
        spec.x1 = parse_int_token(parts[2], "pixel set rect");
        spec.y1 = parse_int_token(parts[3], "pixel set rect");
        return spec;
    }
    if (head == "point" && colon != std::string::npos) {
        const auto parts = split(args, ',');
        if (parts.size() != 2) {
            throw std::invalid_argument("pixel set point needs i,j; got '" + args + "'");
        }
        spec.kind = cam::PixelSetSpec::Kind::Points;
        spec.points.emplace_back(parse_int_token(parts[0], "pixel set point"),
                                 parse_int_token(parts[1], "pixel set point"));
        return spec;
    }
    throw std::invalid_argument("unknown pixel set '" + text +
                                "' (valid: whole, class:<c>, rect:x0,y0,x1,y1, point:i,j)");
}

cam::ReluOrder parse_relu_order(const std::string& text) {
    if (text == "relu_then_upsample") return cam::ReluOrder::ReluThenUpsample;
    if (text == "upsample_then_relu") return cam::ReluOrder::UpsampleThenRelu;
    throw std::invalid_argument("unknown relu order '" + text +
                                "' (valid: relu_then_upsample, upsample_then_relu)");
}

std::vector<cam::Method> parse_methods(const std::vector<std::string>& tokens) {
    std::vector<cam::Method> out;
    for (const std::string& token : tokens) {
        if (token == "all") {
            // Every method that applies to a segmentation model; cam_fc needs a
            // classification head and must be requested explicitly.
            out.insert(out.end(), {cam::Method::GradCam, cam::Method::HiResCam, cam::Method::SegGradCam,
                                   cam::Method::SegHiResGradCam, cam::Method::SegXResCam});
        } else {
            out.push_back(cam::parse_method(token));
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"camscope: U-Net semantic segmentation with gradient-based class-activation heatmaps"};
    app.require_subcommand(1);
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.set_config("--config", "", "Plain-text key=value config file; command-line flags win");
    bool dump_config = false;
    app.add_flag("--dump-config", dump_config, "Print the effective configuration and exit");

    // train
    auto* sub_train = app.add_subcommand("train", "Train a U-Net and write its weight file");
    sub_train->configurable(true);
    std::string train_synthetic = "n=64,classes=3,size=64";
    pipeline::TrainRun train_run;
    std::vector<int> train_channels = {64, 32, 16, 8};
    sub_train->add_option("--synthetic", train_synthetic,
                          "Synthetic dataset spec, e.g. n=64,classes=3,size=64")
        ->join(',')  // reassemble comma-split config-file values
        ->capture_default_str();
    auto* train_dir = sub_train->add_option("--data-dir", train_run.data_dir,
                                            "Directory of <stem>.pgm images with <stem>.labels.pgm masks");
    sub_train->add_option("--channels", train_channels,
                          "Deepest-first channel counts; network depth = list length")
        ->delimiter(',')
        ->capture_default_str();
    sub_train->add_option("--epochs", train_run.epochs, "Training epochs")->capture_default_str();
    sub_train->add_option("--lr", train_run.lr, "SGD learning rate")->capture_default_str();
    sub_train->add_option("--seed", train_run.seed, "Seed for data generation, init, and shuffling")
        ->capture_default_str();
    sub_train->add_option("--out", train_run.out_model, "Output weight file path")->required();
    sub_train->add_option("--metrics-csv", train_run.out_csv,
                          "Metrics CSV path (default: <out>.metrics.csv)");
    train_dir->excludes(sub_train->get_option("--synthetic"));

    // cam
    auto* sub_cam = app.add_subcommand("cam", "Compute heatmap overlays for a trained model");
    sub_cam->configurable(true);
    pipeline::CamRun cam_run;
    std::vector<std::string> cam_methods = {"seg_hires_grad"};
    std::vector<std::string> cam_layers;
    std::string cam_pixel_set = "whole";
    std::string cam_relu_order = "relu_then_upsample";
    sub_cam->add_option("--model", cam_run.model_path, "Weight file from `train`")->required();
    sub_cam->add_option("--image", cam_run.image_path, "Input image (PGM or PPM)")->required();
    sub_cam->add_option("--method", cam_methods,
                        "Comma list of cam_fc, grad, hires, seg_grad, seg_hires_grad, seg_xres, or `all`")
        ->delimiter(',')
        ->capture_default_str();
    sub_cam->add_option("--layers,--layer", cam_layers,
                        "Capture points to explain (comma list or `all`; default: deepest)")
        ->delimiter(',');
    sub_cam->add_option("--class", cam_run.cls, "Class whose activation evidence is mapped")
        ->capture_default_str();
    sub_cam->add_option("--pixel-set", cam_pixel_set,
                        "Output pixels feeding the target: whole | class:<c> | rect:x0,y0,x1,y1 | point:i,j")
        ->join(',')  // reassemble comma-split config-file values
        ->capture_default_str();
    sub_cam->add_option("--xres-window", cam_run.xres_window, "Gradient max-pool window for seg_xres")
        ->capture_default_str();
    sub_cam->add_option("--relu-order", cam_relu_order,
                        "relu_then_upsample | upsample_then_relu")
        ->capture_default_str();
    sub_cam->add_flag("--softmax-target", cam_run.softmax_target,
                      "Differentiate post-softmax class scores instead of raw logits");
    sub_cam->add_option("--alpha", cam_run.alpha, "Overlay blend weight of the heatmap")
        ->capture_default_str();
    sub_cam->add_option("--jobs", cam_run.jobs, "Worker threads across independent requests")
        ->capture_default_str();
    sub_cam->add_option("--out-dir", cam_run.out_dir, "Output directory")->capture_default_str();

    // gradcheck
    auto* sub_grad = app.add_subcommand("gradcheck", "Finite-difference check of every backward rule");
    sub_grad->configurable(true);
    pipeline::GradcheckRun grad_run;
    sub_grad->add_option("--seed", grad_run.options.seed, "Seed for the probe tensors")
        ->capture_default_str();
    sub_grad->add_flag("--inject-fault", grad_run.options.inject_fault)->group("");

    // demo
    auto* sub_demo = app.add_subcommand(
        "demo", "Train on synthetic shapes and write side-by-side heatmap comparisons");
    sub_demo->configurable(true);
    pipeline::DemoRun demo_run;
    sub_demo->add_option("--out-dir", demo_run.out_dir, "Artifact directory")->capture_default_str();
    sub_demo->add_option("--seed", demo_run.seed, "Seed for data, init, and shuffling")
        ->capture_default_str();
    sub_demo->add_option("--epochs", demo_run.epochs, "Training epochs")->capture_default_str();
    sub_demo->add_option("--lr", demo_run.lr, "SGD learning rate")->capture_default_str();
    sub_demo->add_option("--layer", demo_run.layer, "Capture point used for the method comparison")
        ->capture_default_str();
    auto* demo_skip = sub_demo->add_flag("--skip-train", demo_run.skip_train,
                                         "Reuse an existing weight file instead of training");
    sub_demo->add_option("--model", demo_run.model_path, "Weight file to reuse with --skip-train")
        ->needs(demo_skip);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (dump_config) {
        std::cout << app.config_to_str(true, true);
        return 0;
    }

    try {
        if (sub_train->parsed()) {
            train_run.synthetic = parse_synthetic_spec(train_synthetic);
            if (train_channels.empty()) throw std::invalid_argument("--channels list is empty");
            train_run.arch.channels = train_channels;
            train_run.arch.depth = static_cast<int>(train_channels.size());
            const pipeline::TrainReport report = pipeline::run_train(train_run);
            const train::EpochStats& last = report.log.back();
            std::printf("epoch %d: loss %.6f f1 %.6f iou %.6f\n", last.epoch, last.loss, last.f1,
                        last.iou);
            std::printf("wrote %s\nwrote %s\n", report.model_path.c_str(), report.csv_path.c_str());
            return 0;
        }
        if (sub_cam->parsed()) {
            cam_run.methods = parse_methods(cam_methods);
            cam_run.layers = cam_layers.empty() ? std::vector<std::string>{""} : cam_layers;
            cam_run.pixel_set = parse_pixel_set(cam_pixel_set);
            cam_run.relu_order = parse_relu_order(cam_relu_order);
            const pipeline::CamReport report = pipeline::run_cam(cam_run);
            for (const std::string& w : report.warnings) std::cerr << "warning: " << w << "\n";
            for (const std::string& f : report.files) std::printf("wrote %s\n", f.c_str());
            return 0;
        }
        if (sub_grad->parsed()) {
            return pipeline::run_gradcheck(grad_run) ? 0 : 1;
        }
        if (sub_demo->parsed()) {
            const pipeline::DemoReport report = pipeline::run_demo(demo_run);
            std::printf("test_f1 %.6f\ntest_iou %.6f\n", report.test_f1, report.test_iou);
            for (const auto& loc : report.localization) {
                std::printf("class %d localization wins %d/%d\n", loc.cls, loc.wins, loc.counted);
            }
            std::printf("train %.1fs total %.1fs\nartifacts in %s\n", report.train_seconds,
                        report.total_seconds, report.out_dir.c_str());
            return 0;
        }
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
