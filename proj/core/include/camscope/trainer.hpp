#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "camscope/label_map.hpp"
#include "camscope/tensor.hpp"
#include "camscope/unet.hpp"

namespace camscope::train {

struct Sample {
    Tensor image;    // [1, Cin, H, W], values in [0, 1]
    LabelMap label;  // H x W, ids in [0, num_classes)
};

struct TrainConfig {
    double lr = 3e-3;
    int epochs = 30;
    std::uint64_t seed = 0;
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    double f1 = 0.0;
    double iou = 0.0;
};

/// Macro-averaged scores over classes present in truth or prediction, plus
/// the per-class values behind the average.
struct Metrics {
    double f1 = 0.0;
    double iou = 0.0;
    std::vector<int> classes;
    std::vector<double> class_f1;
    std::vector<double> class_iou;
};

/// Random filled shapes on a noisy background; one shape type per foreground
/// class (disc, rectangle, ring, cycling). Labels are exact shape masks.
std::vector<Sample> synth_dataset(int n, int num_classes, int H, int W, std::uint64_t seed);

/// Mean over pixels of -log softmax(logits)[label], recorded on the tape of
/// `logits` so it can seed a backward pass.
ScalarTarget cross_entropy_loss(Var logits, const LabelMap& label);

/// Gradients of `loss` with respect to every model parameter, keyed by name.
std::map<std::string, Tensor> param_grads(const unet::Forward& f, const ScalarTarget& loss);

/// p <- p - lr * g for every parameter; every parameter must have a gradient.
void sgd_step(unet::UNet& model, const std::map<std::string, Tensor>& grads, double lr);

Metrics eval_metrics(const LabelMap& pred, const LabelMap& truth, int num_classes);

/// Shuffled single-sample SGD. The per-epoch log holds the mean loss and the
/// mean per-sample macro scores, measured on each training forward before its
/// update step.
std::vector<EpochStats> train(unet::UNet& model, const std::vector<Sample>& dataset,
                              const TrainConfig& config);

/// epoch,loss,f1,iou rows at six decimal places.
void write_metrics_csv(const std::vector<EpochStats>& log, const std::string& path);

/// Fixed index split: first 80% train, next 10% val, remainder test.
void split_80_10_10(int n, std::vector<int>* train_idx, std::vector<int>* val_idx,
                    std::vector<int>* test_idx);

}  // namespace camscope::train
