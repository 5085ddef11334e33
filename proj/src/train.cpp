#include "tcmkd/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>

#include "tcmkd/io.hpp"
#include "tcmkd/rng.hpp"

namespace tcmkd {

int64_t ConfusionMatrix::total() const {
    int64_t t = 0;
    for (int64_t c : counts) t += c;
    return t;
}

double ConfusionMatrix::accuracy() const {
    const int64_t t = total();
    if (t == 0) return 0.0;
    int64_t diag = 0;
    for (int c = 0; c < num_classes; ++c) diag += at(c, c);
    return static_cast<double>(diag) / static_cast<double>(t);
}

namespace {

void check_class_coverage(const LabeledDataset& train, bool windows) {
    if (train.num_classes < 2)
        throw std::invalid_argument("train: need at least 2 classes, dataset declares " +
                                    std::to_string(train.num_classes));
    std::vector<int64_t> counts(static_cast<size_t>(train.num_classes), 0);
    if (windows)
        for (const TemporalWindow& w : train.windows) ++counts[static_cast<size_t>(w.label)];
    else
        for (const Segment& s : train.segments) ++counts[static_cast<size_t>(s.label)];
    std::string missing;
    for (int c = 0; c < train.num_classes; ++c)
        if (counts[static_cast<size_t>(c)] == 0) missing += (missing.empty() ? "" : ", ") + std::to_string(c);
    if (!missing.empty())
        throw std::invalid_argument("train: no training samples for class indices: " + missing);
}

int argmax_row(const Tensor<float>& logits, int row) {
    const int C = logits.dim(1);
    const float* r = logits.values.data() + static_cast<size_t>(row) * C;
    int best = 0;
    for (int c = 1; c < C; ++c)
        if (r[c] > r[best]) best = c;
    return best;
}

// One pass over an evaluation payload in fixed-size batches.
template <typename Item>
std::pair<double, ConfusionMatrix> evaluate_items(const Model& model, const std::vector<Item>& items,
                                                  int num_classes) {
    ConfusionMatrix cm(num_classes);
    const size_t eval_batch = 256;
    for (size_t begin = 0; begin < items.size(); begin += eval_batch) {
        const size_t count = std::min(eval_batch, items.size() - begin);
        Tensor<float> batch;
        if constexpr (std::is_same_v<Item, Segment>)
            batch = batch_from_segments(items, begin, count);
        else
            batch = batch_from_windows(items, begin, count);
        const ClassifyResult out = forward_classify(model, batch);
        for (size_t i = 0; i < count; ++i)
            cm.at(items[begin + i].label, argmax_row(out.logits, static_cast<int>(i))) += 1;
    }
    return {cm.accuracy(), cm};
}

struct BatchStats {
    double loss_sum = 0.0; // sample-weighted
    double ce_sum = 0.0;
    double kd_sum = 0.0;
    int64_t correct = 0;
    int64_t seen = 0;
};

// Shared epoch loop for the baseline, teacher and distillation paths. The
// distillation path differs only in the extra weighted MSE term against
// cached teacher latents; with kd_weight == 0 the tape is identical to the
// pure cross-entropy path, which keeps the lambda = 0 degeneracy exact.
struct LoopSpec {
    bool on_windows = false;                  // teacher trains on windows
    const std::vector<float>* teacher_latents = nullptr; // row-major [N, latent_dim], aligned with items
    int latent_dim = 0;
    double kd_weight = 0.0;
};

TrainResult run_training(Model model, const SplitDataset& data, const TrainConfig& config, const LoopSpec& loop,
                         std::vector<size_t> item_indices) {
    if (config.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (config.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");

    TrainResult result{std::move(model), {}, 0};
    Model& m = result.model;
    const std::vector<Parameter<float>*> params = m.all_params();

    Rng shuffle_rng(Rng::derive(config.seed, 0x50f));

    const size_t n_items = item_indices.size();
    if (n_items == 0) throw std::invalid_argument("train: no training items");

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        if (config.shuffle) shuffle_rng.shuffle(item_indices);

        BatchStats stats;
        for (size_t begin = 0; begin < n_items; begin += static_cast<size_t>(config.batch_size)) {
            const size_t count = std::min(static_cast<size_t>(config.batch_size), n_items - begin);

            Tensor<float> batch;
            std::vector<int> labels(count);
            std::vector<float> kd_targets;
            if (loop.teacher_latents)
                kd_targets.resize(count * static_cast<size_t>(loop.latent_dim));
            if (loop.on_windows) {
                batch = Tensor<float>({static_cast<int>(count), kNumChannels, kWindowLen});
                for (size_t i = 0; i < count; ++i) {
                    const TemporalWindow& w = data.train.windows[item_indices[begin + i]];
                    std::memcpy(batch.values.data() + i * w.data.size(), w.data.data(), sizeof(float) * w.data.size());
                    labels[i] = w.label;
                }
            } else {
                const int len = m.spec.in_length;
                batch = Tensor<float>({static_cast<int>(count), kNumChannels, len});
                for (size_t i = 0; i < count; ++i) {
                    const Segment& s = data.train.segments[item_indices[begin + i]];
                    std::memcpy(batch.values.data() + i * s.data.size(), s.data.data(), sizeof(float) * s.data.size());
                    labels[i] = s.label;
                    if (loop.teacher_latents)
                        std::memcpy(kd_targets.data() + i * static_cast<size_t>(loop.latent_dim),
                                    loop.teacher_latents->data() + item_indices[begin + i] * static_cast<size_t>(loop.latent_dim),
                                    sizeof(float) * static_cast<size_t>(loop.latent_dim));
                }
            }

            Graph<float> g;
            FVar x = g.input(std::move(batch));
            FVar z = features_graph(g, m, x, true);
            FVar logits = logits_graph(g, m, z, true);
            FVar ce = g.softmax_cross_entropy(logits, labels);
            FVar total = ce;
            double kd_value = 0.0;
            if (loop.teacher_latents && loop.kd_weight != 0.0) {
                FVar target = g.input(Tensor<float>({static_cast<int>(count), loop.latent_dim}, std::move(kd_targets)));
                FVar kd = g.scale(g.mse(z, target), static_cast<float>(loop.kd_weight));
                kd_value = static_cast<double>(g.value(kd).values[0]);
                total = g.add(ce, kd);
            }
            g.backward(total);
            adam_step(params, config.adam);

            const double ce_value = static_cast<double>(g.value(ce).values[0]);
            const double total_value = static_cast<double>(g.value(total).values[0]);
            stats.ce_sum += ce_value * static_cast<double>(count);
            stats.kd_sum += kd_value * static_cast<double>(count);
            stats.loss_sum += total_value * static_cast<double>(count);
            const Tensor<float>& lv = g.value(logits);
            for (size_t i = 0; i < count; ++i)
                if (argmax_row(lv, static_cast<int>(i)) == labels[i]) ++stats.correct;
            stats.seen += static_cast<int64_t>(count);
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = stats.loss_sum / static_cast<double>(stats.seen);
        em.ce_loss = stats.ce_sum / static_cast<double>(stats.seen);
        em.kd_loss = stats.kd_sum / static_cast<double>(stats.seen);
        em.train_acc = static_cast<double>(stats.correct) / static_cast<double>(stats.seen);
        em.test_acc = evaluate(m, data.test).first;
        if (!std::isfinite(em.train_loss))
            throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch));
        result.history.push_back(em);
    }
    return result;
}

std::vector<size_t> iota_indices(size_t n) {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t(0));
    return idx;
}

} // namespace

TrainResult train_baseline(const SplitDataset& data, const TrainConfig& config) {
    check_class_coverage(data.train, false);
    if (data.train.segments.empty()) throw std::invalid_argument("train_baseline: no training segments");
    Model model = build_model(Variant::narrow, data.train.num_classes, config.seed);
    model.provenance = {"baseline", config.epochs, config.seed};
    LoopSpec loop;
    return run_training(std::move(model), data, config, loop, iota_indices(data.train.segments.size()));
}

TrainResult train_teacher(const SplitDataset& data, const TrainConfig& config) {
    if (data.train.windows.empty())
        throw std::invalid_argument("train_teacher: dataset has no temporal windows (ingested without windows?)");
    if (data.test.windows.empty())
        throw std::invalid_argument("train_teacher: test side has no temporal windows");
    check_class_coverage(data.train, true);
    Model model = build_model(Variant::wide, data.train.num_classes, config.seed);
    model.provenance = {"teacher", config.epochs, config.seed};
    LoopSpec loop;
    loop.on_windows = true;
    return run_training(std::move(model), data, config, loop, iota_indices(data.train.windows.size()));
}

TrainResult distill_student(const SplitDataset& data, const Model& teacher, const TrainConfig& config) {
    check_class_coverage(data.train, false);
    if (config.kd_weight < 0.0)
        throw std::invalid_argument("distill_student: kd_weight must be non-negative");
    if (teacher.spec.variant != Variant::wide)
        throw std::invalid_argument("distill_student: teacher checkpoint is narrow-variant, expected wide");

    Model model = build_model(Variant::narrow, data.train.num_classes, config.seed);
    model.provenance = {"student", config.epochs, config.seed};
    if (model.spec.latent_dim != teacher.spec.latent_dim)
        throw std::invalid_argument("distill_student: student latent " + std::to_string(model.spec.latent_dim) +
                                    " != teacher latent " + std::to_string(teacher.spec.latent_dim));

    // With kd_weight = 0 the MSE term vanishes from the objective, so the
    // window restriction is vacuous: train on all segments, exactly like
    // the baseline.
    if (config.kd_weight == 0.0) {
        LoopSpec loop;
        return run_training(std::move(model), data, config, loop, iota_indices(data.train.segments.size()));
    }

    // Pair each train segment with its window; boundary segments without a
    // window are excluded from distillation batches.
    std::map<std::pair<std::string, int>, size_t> window_of;
    for (size_t wi = 0; wi < data.train.windows.size(); ++wi) {
        const TemporalWindow& w = data.train.windows[wi];
        window_of[{w.source_id, w.center_index}] = wi;
    }
    std::vector<size_t> item_indices;
    std::vector<size_t> paired_window;
    int excluded = 0;
    for (size_t si = 0; si < data.train.segments.size(); ++si) {
        const Segment& s = data.train.segments[si];
        auto it = window_of.find({s.source_id, s.index});
        if (it == window_of.end()) {
            ++excluded;
            continue;
        }
        item_indices.push_back(si);
        paired_window.push_back(it->second);
    }
    if (item_indices.empty())
        throw std::invalid_argument("distill_student: no training segment has a matching window");

    // Teacher is frozen; precompute its latents once (bit-equal to
    // on-the-fly computation since forward passes are deterministic).
    const int latent_dim = teacher.spec.latent_dim;
    std::vector<float> teacher_latents(data.train.segments.size() * static_cast<size_t>(latent_dim), 0.0f);
    const size_t cache_batch = 128;
    for (size_t begin = 0; begin < paired_window.size(); begin += cache_batch) {
        const size_t count = std::min(cache_batch, paired_window.size() - begin);
        Tensor<float> batch({static_cast<int>(count), kNumChannels, kWindowLen});
        for (size_t i = 0; i < count; ++i) {
            const TemporalWindow& w = data.train.windows[paired_window[begin + i]];
            std::memcpy(batch.values.data() + i * w.data.size(), w.data.data(), sizeof(float) * w.data.size());
        }
        const Tensor<float> z = forward_features(teacher, batch);
        for (size_t i = 0; i < count; ++i)
            std::memcpy(teacher_latents.data() + item_indices[begin + i] * static_cast<size_t>(latent_dim),
                        z.values.data() + i * static_cast<size_t>(latent_dim),
                        sizeof(float) * static_cast<size_t>(latent_dim));
    }

    LoopSpec loop;
    loop.teacher_latents = &teacher_latents;
    loop.latent_dim = latent_dim;
    loop.kd_weight = config.kd_weight;
    TrainResult result = run_training(std::move(model), data, config, loop, std::move(item_indices));
    result.excluded_segments = excluded;
    return result;
}

std::pair<double, ConfusionMatrix> evaluate(const Model& model, const LabeledDataset& side) {
    if (model.spec.variant == Variant::narrow) {
        if (side.segments.empty()) throw std::invalid_argument("evaluate: narrow model but dataset has no segments");
        return evaluate_items(model, side.segments, side.num_classes);
    }
    if (side.windows.empty()) throw std::invalid_argument("evaluate: wide model but dataset has no windows");
    return evaluate_items(model, side.windows, side.num_classes);
}

std::string metrics_to_csv(const std::vector<EpochMetrics>& history) {
    std::string csv = "epoch,train_loss,ce_loss,kd_loss,train_acc,test_acc\n";
    for (const EpochMetrics& em : history)
        csv += join_csv_row({std::to_string(em.epoch), format_number(em.train_loss), format_number(em.ce_loss),
                             format_number(em.kd_loss), format_number(em.train_acc), format_number(em.test_acc)});
    return csv;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history) {
    write_text_file(path, metrics_to_csv(history));
}

std::string confusion_to_csv(const ConfusionMatrix& cm) {
    std::string csv;
    for (int r = 0; r < cm.num_classes; ++r) {
        std::vector<std::string> row;
        row.reserve(static_cast<size_t>(cm.num_classes));
        for (int c = 0; c < cm.num_classes; ++c) row.push_back(std::to_string(cm.at(r, c)));
        csv += join_csv_row(row);
    }
    return csv;
}

} // namespace tcmkd
