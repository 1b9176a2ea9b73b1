#include "camscope/trainer.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "camscope/errors.hpp"
#include "camscope/rng.hpp"

namespace camscope::train {

ScalarTarget cross_entropy_loss(Var logits, const LabelMap& label) {
    return as_scalar(softmax_cross_entropy(logits, label));
}

std::map<std::string, Tensor> param_grads(const unet::Forward& f, const ScalarTarget& loss) {
    std::vector<NodeId> wanted;
    wanted.reserve(f.param_nodes.size());
    for (const auto& [name, id] : f.param_nodes) wanted.push_back(id);
    std::map<NodeId, Tensor> by_node = f.tape.backward(loss, wanted);
    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : f.param_nodes) out.emplace(name, std::move(by_node.at(id)));
    return out;
}

void sgd_step(unet::UNet& model, const std::map<std::string, Tensor>& grads, double lr) {
    for (auto& [name, param] : model.params()) {
        auto it = grads.find(name);
        if (it == grads.end()) {
            throw std::invalid_argument("sgd_step: missing gradient for parameter '" + name + "'");
        }
        if (!same_shape(param, it->second)) {
            throw std::invalid_argument("sgd_step: gradient for '" + name + "' has shape " +
                                        shape_str(it->second.shape) + ", parameter has " +
                                        shape_str(param.shape));
        }
        for (std::size_t i = 0; i < param.data.size(); ++i) param.data[i] -= lr * it->second.data[i];
    }
}

Metrics eval_metrics(const LabelMap& pred, const LabelMap& truth, int num_classes) {
    if (pred.h != truth.h || pred.w != truth.w) {
        throw std::invalid_argument("eval_metrics: prediction " + std::to_string(pred.h) + "x" +
                                    std::to_string(pred.w) + " vs truth " + std::to_string(truth.h) + "x" +
                                    std::to_string(truth.w));
    }
    std::vector<long long> tp(static_cast<std::size_t>(num_classes), 0);
    std::vector<long long> fp(static_cast<std::size_t>(num_classes), 0);
    std::vector<long long> fn(static_cast<std::size_t>(num_classes), 0);
    for (std::size_t i = 0; i < pred.ids.size(); ++i) {
        const int p = pred.ids[i], t = truth.ids[i];
        if (p < 0 || p >= num_classes || t < 0 || t >= num_classes) {
            throw std::invalid_argument("eval_metrics: class id outside [0," + std::to_string(num_classes) +
                                        ")");
        }
        if (p == t) {
            ++tp[static_cast<std::size_t>(p)];
        } else {
            ++fp[static_cast<std::size_t>(p)];
            ++fn[static_cast<std::size_t>(t)];
        }
    }
    Metrics m;
    for (int c = 0; c < num_classes; ++c) {
        const long long t = tp[static_cast<std::size_t>(c)], f = fp[static_cast<std::size_t>(c)],
                        n = fn[static_cast<std::size_t>(c)];
        if (t + f + n == 0) continue;  // class absent from both maps
        const double iou = static_cast<double>(t) / static_cast<double>(t + f + n);
        const double f1 = 2.0 * static_cast<double>(t) / static_cast<double>(2 * t + f + n);
        m.classes.push_back(c);
        m.class_iou.push_back(iou);
        m.class_f1.push_back(f1);
    }
    if (!m.classes.empty()) {
        m.iou = std::accumulate(m.class_iou.begin(), m.class_iou.end(), 0.0) /
                static_cast<double>(m.class_iou.size());
        m.f1 = std::accumulate(m.class_f1.begin(), m.class_f1.end(), 0.0) /
               static_cast<double>(m.class_f1.size());
    }
    return m;
}

std::vector<EpochStats> train(unet::UNet& model, const std::vector<Sample>& dataset,
                              const TrainConfig& config) {
    if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
    if (config.lr <= 0.0) throw std::invalid_argument("train: lr must be > 0");
    if (config.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");

    Rng rng(config.seed);
    std::vector<int> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<EpochStats> log;
    log.reserve(static_cast<std::size_t>(config.epochs));
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0, f1_sum = 0.0, iou_sum = 0.0;
        for (int idx : order) {
            const Sample& s = dataset[static_cast<std::size_t>(idx)];
            unet::Forward f = model.forward(s.image);
            const Var logits{&f.tape, f.logits};
            const ScalarTarget loss = cross_entropy_loss(logits, s.label);
            const Metrics m = eval_metrics(unet::predict_classes(logits.value()), s.label,
                                           model.config().num_classes);
            loss_sum += loss.value;
            f1_sum += m.f1;
            iou_sum += m.iou;
            sgd_step(model, param_grads(f, loss), config.lr);
        }
        const double n = static_cast<double>(dataset.size());
        log.push_back({epoch, loss_sum / n, f1_sum / n, iou_sum / n});
    }
    return log;
}

void write_metrics_csv(const std::vector<EpochStats>& log, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "epoch,loss,f1,iou\n";
    char row[128];
    for (const EpochStats& e : log) {
        std::snprintf(row, sizeof(row), "%d,%.6f,%.6f,%.6f\n", e.epoch, e.loss, e.f1, e.iou);
        out << row;
    }
    out.close();
    if (!out) throw IoError("write to '" + path + "' failed");
}

void split_80_10_10(int n, std::vector<int>* train_idx, std::vector<int>* val_idx,
                    std::vector<int>* test_idx) {
    if (n < 3) throw std::invalid_argument("split_80_10_10: need at least 3 samples, got " + std::to_string(n));
    const int ntrain = n * 8 / 10;
    const int nval = n / 10;
    train_idx->clear();
    val_idx->clear();
    test_idx->clear();
    for (int i = 0; i < n; ++i) {
        if (i < ntrain) {
            train_idx->push_back(i);
        } else if (i < ntrain + nval) {
            val_idx->push_back(i);
        } else {
            test_idx->push_back(i);
        }
    }
}

}  // namespace camscope::train
