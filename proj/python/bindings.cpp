// Python bindings for the core pipeline: synthetic data, segmentation,
// training, distillation, transfer and anomaly scoring over numpy arrays.

#include <cstring>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tcmkd/dataset_store.hpp"
#include "tcmkd/model.hpp"
#include "tcmkd/signal.hpp"
#include "tcmkd/train.hpp"
#include "tcmkd/transfer.hpp"
#include "tcmkd/version.hpp"

namespace py = pybind11;
using namespace tcmkd;

namespace {

py::array_t<float> recording_array(const Recording& rec) {
    py::array_t<float> arr({static_cast<py::ssize_t>(rec.channels), static_cast<py::ssize_t>(rec.samples)});
    std::memcpy(arr.mutable_data(), rec.data.data(), rec.data.size() * sizeof(float));
    return arr;
}

Recording recording_from_array(const std::string& id, uint32_t sample_rate_hz,
                               py::array_t<float, py::array::c_style | py::array::forcecast> data, int label) {
    if (data.ndim() != 2) throw std::invalid_argument("recording data must be a 2-D [channels, samples] array");
    Recording rec;
    rec.id = id;
    rec.sample_rate_hz = sample_rate_hz;
    rec.channels = static_cast<int>(data.shape(0));
    rec.samples = static_cast<int64_t>(data.shape(1));
    rec.label = label;
    rec.data.assign(data.data(), data.data() + data.size());
    return rec;
}

py::array_t<float> tensor_array(const Tensor<float>& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<float> arr(shape);
    std::memcpy(arr.mutable_data(), t.values.data(), t.values.size() * sizeof(float));
    return arr;
}

Tensor<float> batch_tensor(py::array_t<float, py::array::c_style | py::array::forcecast> batch) {
    if (batch.ndim() != 3) throw std::invalid_argument("batch must be a 3-D [B, channels, length] array");
    Tensor<float> t({static_cast<int>(batch.shape(0)), static_cast<int>(batch.shape(1)),
                     static_cast<int>(batch.shape(2))});
    std::memcpy(t.values.data(), batch.data(), t.values.size() * sizeof(float));
    return t;
}

py::array_t<float> embedding_array(const EmbeddingSet& set) {
    py::array_t<float> arr({static_cast<py::ssize_t>(set.count()), static_cast<py::ssize_t>(set.dim)});
    std::memcpy(arr.mutable_data(), set.vectors.data(), set.vectors.size() * sizeof(float));
    return arr;
}

EmbeddingSet embedding_set_from(py::array_t<float, py::array::c_style | py::array::forcecast> vectors,
                                std::vector<int> labels) {
    if (vectors.ndim() != 2) throw std::invalid_argument("embeddings must be a 2-D [N, dim] array");
    EmbeddingSet set;
    set.dim = static_cast<int>(vectors.shape(1));
    set.vectors.assign(vectors.data(), vectors.data() + vectors.size());
    if (!labels.empty() && labels.size() != set.count())
        throw std::invalid_argument("labels length must match the number of embedding rows");
    set.labels = std::move(labels);
    return set;
}

py::dict metrics_dict(const std::vector<EpochMetrics>& history) {
    py::list epoch, train_loss, ce, kd, train_acc, test_acc;
    for (const EpochMetrics& em : history) {
        epoch.append(em.epoch);
        train_loss.append(em.train_loss);
        ce.append(em.ce_loss);
        kd.append(em.kd_loss);
        train_acc.append(em.train_acc);
        test_acc.append(em.test_acc);
    }
    py::dict d;
    d["epoch"] = epoch;
    d["train_loss"] = train_loss;
    d["ce_loss"] = ce;
    d["kd_loss"] = kd;
    d["train_acc"] = train_acc;
    d["test_acc"] = test_acc;
    return d;
}

SplitDataset dataset_from_recordings(const std::vector<Recording>& recordings, int num_classes,
                                     double train_fraction) {
    std::vector<std::vector<Segment>> per_rec;
    per_rec.reserve(recordings.size());
    for (const Recording& rec : recordings) per_rec.push_back(segment_recording(rec));
    return split_dataset(per_rec, num_classes, train_fraction);
}

LabeledDataset target_from_recordings(const std::vector<Recording>& recordings, int num_classes) {
    std::vector<std::vector<Segment>> per_rec;
    per_rec.reserve(recordings.size());
    for (const Recording& rec : recordings) per_rec.push_back(segment_recording(rec));
    return assemble_unsplit(per_rec, num_classes, Domain::target);
}

} // namespace

PYBIND11_MODULE(_tcmkd, m) {
    m.doc() = "Temporal cross-modal knowledge distillation for vibration fault detection";
    m.attr("__version__") = kVersion;
    m.attr("SEGMENT_LEN") = kSegmentLen;
    m.attr("WINDOW_LEN") = kWindowLen;
    m.attr("NUM_CHANNELS") = kNumChannels;

    py::class_<Recording>(m, "Recording")
        .def(py::init(&recording_from_array), py::arg("id"), py::arg("sample_rate_hz"), py::arg("data"),
             py::arg("label") = -1)
        .def_readonly("id", &Recording::id)
        .def_readonly("sample_rate_hz", &Recording::sample_rate_hz)
        .def_readonly("channels", &Recording::channels)
        .def_readonly("samples", &Recording::samples)
        .def_readonly("label", &Recording::label)
        .def_property_readonly("data", &recording_array);

    py::class_<SynthSpec>(m, "SynthSpec")
        .def(py::init(&SynthSpec::confusable_pairs_default))
        .def_readwrite("num_classes", &SynthSpec::num_classes)
        .def_readwrite("recordings_per_class", &SynthSpec::recordings_per_class)
        .def_readwrite("recording_len", &SynthSpec::recording_len)
        .def_readwrite("sample_rate_hz", &SynthSpec::sample_rate_hz)
        .def_readwrite("noise_level", &SynthSpec::noise_level)
        .def_readwrite("mod_depth", &SynthSpec::mod_depth)
        .def_readwrite("carrier_freqs", &SynthSpec::carrier_freqs)
        .def_readwrite("mod_period_segments", &SynthSpec::mod_period_segments);

    py::class_<LabeledDataset>(m, "LabeledDataset")
        .def_property_readonly("num_segments", [](const LabeledDataset& d) { return d.segments.size(); })
        .def_property_readonly("num_windows", [](const LabeledDataset& d) { return d.windows.size(); })
        .def_readonly("num_classes", &LabeledDataset::num_classes)
        .def_property_readonly("segment_labels", [](const LabeledDataset& d) {
            std::vector<int> labels;
            labels.reserve(d.segments.size());
            for (const Segment& s : d.segments) labels.push_back(s.label);
            return labels;
        });

    py::class_<SplitDataset>(m, "SplitDataset")
        .def_readonly("train", &SplitDataset::train)
        .def_readonly("test", &SplitDataset::test);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("kd_weight", &TrainConfig::kd_weight)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("shuffle", &TrainConfig::shuffle)
        .def_property(
            "learning_rate", [](const TrainConfig& c) { return c.adam.learning_rate; },
            [](TrainConfig& c, double lr) { c.adam.learning_rate = lr; });

    py::class_<Model>(m, "Model")
        .def_property_readonly("variant", [](const Model& m_) { return variant_name(m_.spec.variant); })
        .def_property_readonly("latent_dim", [](const Model& m_) { return m_.spec.latent_dim; })
        .def_property_readonly("num_classes", [](const Model& m_) { return m_.spec.num_classes; })
        .def_property_readonly("feature_extractor_only", &Model::feature_extractor_only);

    m.def("synth_generate", &synth_generate, py::arg("spec"), py::arg("seed"));
    m.def("expected_segment_count", &expected_segment_count, py::arg("samples"),
          py::arg("seg_len") = kSegmentLen, py::arg("overlap_fraction") = 0.5);
    m.def("expected_window_count", &expected_window_count, py::arg("num_segments"));
    m.def("segment_count", [](const Recording& rec) { return segment_recording(rec).size(); });

    m.def("make_split_dataset", &dataset_from_recordings, py::arg("recordings"), py::arg("num_classes"),
          py::arg("train_fraction") = 0.8,
          "Segment, split, normalize and window a set of labeled recordings");
    m.def("make_target_dataset", &target_from_recordings, py::arg("recordings"), py::arg("num_classes"),
          "Segment, normalize and window an unsplit target-domain set");

    m.def("write_traw", &write_traw, py::arg("path"), py::arg("recording"));
    m.def("load_recording", &load_recording, py::arg("path"));

    m.def(
        "build_model",
        [](const std::string& variant, int num_classes, uint64_t seed) {
            if (variant != "narrow" && variant != "wide")
                throw std::invalid_argument("variant must be 'narrow' or 'wide'");
            return build_model(variant == "narrow" ? Variant::narrow : Variant::wide, num_classes, seed);
        },
        py::arg("variant"), py::arg("num_classes"), py::arg("seed"));
    m.def("save_checkpoint", &save_checkpoint, py::arg("model"), py::arg("path"));
    m.def("load_checkpoint", [](const std::filesystem::path& p) { return load_checkpoint(p); }, py::arg("path"));

    m.def(
        "forward_features",
        [](const Model& model, py::array_t<float, py::array::c_style | py::array::forcecast> batch) {
            return tensor_array(forward_features(model, batch_tensor(batch)));
        },
        py::arg("model"), py::arg("batch"));
    m.def(
        "forward_classify",
        [](const Model& model, py::array_t<float, py::array::c_style | py::array::forcecast> batch) {
            ClassifyResult out = forward_classify(model, batch_tensor(batch));
            return py::make_tuple(tensor_array(out.logits), tensor_array(out.probabilities));
        },
        py::arg("model"), py::arg("batch"));

    m.def(
        "train_baseline",
        [](const SplitDataset& data, const TrainConfig& cfg) {
            TrainResult r = train_baseline(data, cfg);
            return py::make_tuple(std::move(r.model), metrics_dict(r.history));
        },
        py::arg("dataset"), py::arg("config"));
    m.def(
        "train_teacher",
        [](const SplitDataset& data, const TrainConfig& cfg) {
            TrainResult r = train_teacher(data, cfg);
            return py::make_tuple(std::move(r.model), metrics_dict(r.history));
        },
        py::arg("dataset"), py::arg("config"));
    m.def(
        "distill_student",
        [](const SplitDataset& data, const Model& teacher, const TrainConfig& cfg) {
            TrainResult r = distill_student(data, teacher, cfg);
            return py::make_tuple(std::move(r.model), metrics_dict(r.history), r.excluded_segments);
        },
        py::arg("dataset"), py::arg("teacher"), py::arg("config"));

    m.def(
        "evaluate",
        [](const Model& model, const LabeledDataset& side) {
            auto [acc, cm] = evaluate(model, side);
            py::array_t<int64_t> counts({static_cast<py::ssize_t>(cm.num_classes),
                                         static_cast<py::ssize_t>(cm.num_classes)});
            std::memcpy(counts.mutable_data(), cm.counts.data(), cm.counts.size() * sizeof(int64_t));
            return py::make_tuple(acc, counts);
        },
        py::arg("model"), py::arg("side"));

    m.def(
        "extract_embeddings_no_kd",
        [](const Model& student, const LabeledDataset& target) {
            EmbeddingSet set = extract_embeddings_no_kd(student, target.segments);
            return py::make_tuple(embedding_array(set), set.labels);
        },
        py::arg("student"), py::arg("target"));
    m.def(
        "tcmkd_tl_adapt",
        [](const Model& teacher, const LabeledDataset& target, const TrainConfig& cfg) {
            AdaptResult r = tcmkd_tl_adapt(teacher, target, cfg);
            return py::make_tuple(std::move(r.student), embedding_array(r.embeddings), r.embeddings.labels,
                                  r.loss_curve);
        },
        py::arg("teacher"), py::arg("target"), py::arg("config"));

    m.def(
        "fit_projection",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> vectors) {
            EmbeddingSet set = embedding_set_from(vectors, {});
            Projection2D proj = fit_projection(set);
            const auto pts = project(set, proj);
            py::array_t<double> out({static_cast<py::ssize_t>(pts.size()), static_cast<py::ssize_t>(2)});
            std::memcpy(out.mutable_data(), pts.data(), pts.size() * 2 * sizeof(double));
            return py::make_tuple(out, py::make_tuple(proj.explained_variance[0], proj.explained_variance[1]));
        },
        py::arg("vectors"), "Project embeddings to 2-D; returns (points, explained_variance)");

    m.def(
        "anomaly_scores",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> reference,
           py::array_t<float, py::array::c_style | py::array::forcecast> embeddings, double ridge, double q) {
            const AnomalyModel model = fit_anomaly_model(embedding_set_from(reference, {}), ridge, q);
            const std::vector<double> scores = anomaly_scores(embedding_set_from(embeddings, {}), model);
            return py::make_tuple(scores, model.threshold);
        },
        py::arg("reference"), py::arg("embeddings"), py::arg("ridge") = 1e-6, py::arg("q") = 0.99);

    m.def(
        "silhouette",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> vectors, std::vector<int> labels) {
            return silhouette(embedding_set_from(vectors, std::move(labels)));
        },
        py::arg("vectors"), py::arg("labels"));
}
