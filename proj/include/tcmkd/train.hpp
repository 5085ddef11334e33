#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tcmkd/autodiff.hpp"
#include "tcmkd/model.hpp"
#include "tcmkd/signal.hpp"

namespace tcmkd {

struct TrainConfig {
    int epochs = 100;
    int batch_size = 64;
    AdamConfig adam;
    double kd_weight = 1.0; // weight of the feature-alignment term in the composite loss
    uint64_t seed = 0;
    bool shuffle = true;
};

struct EpochMetrics {
    int epoch = 0; // 1-based
    double train_loss = 0.0;
    double ce_loss = 0.0;
    double kd_loss = 0.0; // weighted feature-alignment term; 0 when not distilling
    double train_acc = 0.0;
    double test_acc = 0.0;
};

struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<int64_t> counts; // rows = true label, cols = predicted

    explicit ConfusionMatrix(int c = 0) : num_classes(c), counts(static_cast<size_t>(c) * c, 0) {}
    int64_t& at(int truth, int pred) { return counts[static_cast<size_t>(truth) * num_classes + pred]; }
    int64_t at(int truth, int pred) const { return counts[static_cast<size_t>(truth) * num_classes + pred]; }
    int64_t total() const;
    double accuracy() const; // trace / total
};

struct TrainResult {
    Model model;
    std::vector<EpochMetrics> history;
    int excluded_segments = 0; // train segments without a matching window (distillation only)
};

// Narrow model, pure cross-entropy on (segment, label).
TrainResult train_baseline(const SplitDataset& data, const TrainConfig& config);

// Wide model, cross-entropy on (window, center label).
TrainResult train_teacher(const SplitDataset& data, const TrainConfig& config);

// Narrow student with the composite objective
//   loss = CE(f_S(phi_S(x_i)), y_i) + kd_weight * MSE(phi_S(x_i), phi_T(w_i))
// against a frozen teacher. Teacher latents are precomputed once. With
// kd_weight = 0 this reduces exactly to the baseline loop (same RNG stream,
// same batches), giving a bit-identical metrics history.
TrainResult distill_student(const SplitDataset& data, const Model& teacher, const TrainConfig& config);

// Accuracy + confusion matrix on the payload matching the model variant
// (segments for narrow, windows for wide).
std::pair<double, ConfusionMatrix> evaluate(const Model& model, const LabeledDataset& side);

// 6-column CSV: epoch, train_loss, ce_loss, kd_loss, train_acc, test_acc.
std::string metrics_to_csv(const std::vector<EpochMetrics>& history);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history);
std::string confusion_to_csv(const ConfusionMatrix& cm);

} // namespace tcmkd
