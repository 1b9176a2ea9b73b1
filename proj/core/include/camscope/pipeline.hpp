#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "camscope/cam.hpp"
#include "camscope/gradcheck.hpp"
#include "camscope/label_map.hpp"
#include "camscope/trainer.hpp"
#include "camscope/unet.hpp"

namespace camscope::pipeline {

struct SyntheticSpec {
    int n = 64;
    int classes = 3;
    int size = 64;
};

struct TrainRun {
    SyntheticSpec synthetic;
    std::string data_dir;  // overrides synthetic when non-empty
    unet::UNetConfig arch;
    double lr = 3e-3;
    int epochs = 30;
    std::uint64_t seed = 1;
    std::string out_model;
    std::string out_csv;  // empty appends ".metrics.csv" to out_model
};

struct TrainReport {
    std::vector<train::EpochStats> log;
    std::string model_path;
    std::string csv_path;
};

TrainReport run_train(const TrainRun& run);

struct CamRun {
    std::string model_path;
    std::string image_path;
    std::vector<cam::Method> methods{cam::Method::SegHiResGradCam};
    std::vector<std::string> layers{""};  // "" selects the default layer
    int cls = 1;
    cam::PixelSetSpec pixel_set;
    int xres_window = 2;
    cam::ReluOrder relu_order = cam::ReluOrder::ReluThenUpsample;
    bool softmax_target = false;
    double alpha = 0.5;
    int jobs = 1;
    std::string out_dir = ".";
};

struct CamReport {
    std::vector<std::string> files;
    std::vector<std::string> warnings;
};

/// Writes prediction.ppm, pixel_set.ppm, and one heatmap overlay per
/// (method, layer) pair named cam_<method>_<layer>.ppm.
CamReport run_cam(const CamRun& run);

struct GradcheckRun {
    gradcheck::Options options;
};

/// Prints one line per check to stdout; false when any check fails.
bool run_gradcheck(const GradcheckRun& run);

// Defaults are tuned so the demo finishes in ~2 minutes on one core while the
// held-out scores clear 0.93 F1 / 0.92 IoU: a two-level net trains far more
// reliably than a deep one under single-sample SGD at this scale, and the
// full-resolution encoder capture keeps the channel-mean method's spread
// visible in the side-by-side overlays.
struct DemoRun {
    std::string out_dir = "demo_out";
    std::uint64_t seed = 1;
    int epochs = 40;
    double lr = 0.012;
    SyntheticSpec data{80, 3, 64};
    unet::UNetConfig arch{2, {24, 12}, 1, 3, 1};
    std::string layer = "enc1.post";  // capture used for the method comparison
    bool skip_train = false;
    std::string model_path;  // reused when skip_train
};

struct ClassLocalization {
    int cls = 0;
    int wins = 0;     // images where the elementwise method beats the
                      // channel-mean method on in-mask mass fraction
    int counted = 0;  // images where the class exists in truth
};

struct DemoReport {
    std::vector<train::EpochStats> log;
    double test_f1 = 0.0;
    double test_iou = 0.0;
    std::vector<ClassLocalization> localization;
    double train_seconds = 0.0;
    double total_seconds = 0.0;
    std::string out_dir;
};

/// Synthesizes data, trains (or loads) the desk model, evaluates the held-out
/// split, and writes side-by-side heatmap overlays for every class.
DemoReport run_demo(const DemoRun& run);

/// Euclidean dilation of the class mask: a pixel is set when any truth pixel
/// of `cls` lies within `radius` (dx^2 + dy^2 <= radius^2).
std::vector<std::uint8_t> dilate_class_mask(const LabelMap& truth, int cls, int radius);

/// Share of the map's total mass falling on set mask pixels; 0 for an
/// all-zero map.
double mass_fraction(const Tensor& heat, const std::vector<std::uint8_t>& mask, int h, int w);

}  // namespace camscope::pipeline
