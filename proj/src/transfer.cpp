#include "tcmkd/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "tcmkd/io.hpp"
#include "tcmkd/rng.hpp"

namespace tcmkd {

std::string producer_name(EmbeddingProducer p) {
    switch (p) {
        case EmbeddingProducer::student_source: return "student_source";
        case EmbeddingProducer::teacher_source_on_target: return "teacher_source_on_target";
        case EmbeddingProducer::student_target: return "student_target";
    }
    return "unknown";
}

namespace {

EmbeddingSet embed_batched(const Model& model, const auto& items, EmbeddingProducer producer, bool with_labels) {
    EmbeddingSet set;
    set.dim = model.spec.latent_dim;
    set.producer = producer;
    set.vectors.resize(items.size() * static_cast<size_t>(set.dim));
    if (with_labels) set.labels.reserve(items.size());
    const size_t batch_size = 128;
    for (size_t begin = 0; begin < items.size(); begin += batch_size) {
        const size_t count = std::min(batch_size, items.size() - begin);
        const int len = static_cast<int>(items[begin].data.size()) / kNumChannels;
        Tensor<float> batch({static_cast<int>(count), kNumChannels, len});
        for (size_t i = 0; i < count; ++i)
            std::memcpy(batch.values.data() + i * items[begin + i].data.size(), items[begin + i].data.data(),
                        sizeof(float) * items[begin + i].data.size());
        const Tensor<float> z = forward_features(model, batch);
        std::memcpy(set.vectors.data() + begin * static_cast<size_t>(set.dim), z.values.data(),
                    sizeof(float) * z.values.size());
        if (with_labels)
            for (size_t i = 0; i < count; ++i) set.labels.push_back(items[begin + i].label);
    }
    return set;
}

} // namespace

EmbeddingSet extract_embeddings_no_kd(const Model& student_source, const std::vector<Segment>& target_segments) {
    if (student_source.spec.variant != Variant::narrow)
        throw std::invalid_argument("extract_embeddings_no_kd: expected a narrow (student) model, got wide");
    if (target_segments.empty()) throw std::invalid_argument("extract_embeddings_no_kd: no target segments");
    EmbeddingSet set = embed_batched(student_source, target_segments, EmbeddingProducer::student_source, true);
    set.domain_tag = Domain::target;
    return set;
}

EmbeddingSet extract_teacher_embeddings(const Model& teacher_source, const std::vector<TemporalWindow>& windows) {
    if (teacher_source.spec.variant != Variant::wide)
        throw std::invalid_argument("extract_teacher_embeddings: expected a wide (teacher) model, got narrow");
    if (windows.empty()) throw std::invalid_argument("extract_teacher_embeddings: no windows");
    EmbeddingSet set = embed_batched(teacher_source, windows, EmbeddingProducer::teacher_source_on_target, true);
    set.domain_tag = Domain::target;
    return set;
}

AdaptResult tcmkd_tl_adapt(const Model& teacher_source, const LabeledDataset& target, const TrainConfig& config,
                           bool keep_epoch_latents) {
    if (teacher_source.spec.variant != Variant::wide)
        throw std::invalid_argument("tcmkd_tl_adapt: teacher must be the wide variant");
    if (target.windows.empty())
        throw std::invalid_argument("tcmkd_tl_adapt: target dataset has no temporal windows");

    // Items: target segments that are valid window centers, paired with the
    // teacher latent of their window. Labels are never read here.
    std::map<std::pair<std::string, int>, const Segment*> segment_of;
    for (const Segment& s : target.segments) segment_of[{s.source_id, s.index}] = &s;

    std::vector<const Segment*> items;
    std::vector<const TemporalWindow*> windows;
    for (const TemporalWindow& w : target.windows) {
        auto it = segment_of.find({w.source_id, w.center_index});
        if (it == segment_of.end()) continue;
        items.push_back(it->second);
        windows.push_back(&w);
    }
    if (items.empty()) throw std::invalid_argument("tcmkd_tl_adapt: no window centers found among target segments");

    const int latent_dim = teacher_source.spec.latent_dim;
    const size_t n_items = items.size();

    // Frozen teacher: one pass to cache Z_T over the target windows.
    std::vector<float> teacher_latents(n_items * static_cast<size_t>(latent_dim));
    {
        const size_t batch_size = 128;
        for (size_t begin = 0; begin < n_items; begin += batch_size) {
            const size_t count = std::min(batch_size, n_items - begin);
            Tensor<float> batch({static_cast<int>(count), kNumChannels, kWindowLen});
            for (size_t i = 0; i < count; ++i)
                std::memcpy(batch.values.data() + i * windows[begin + i]->data.size(), windows[begin + i]->data.data(),
                            sizeof(float) * windows[begin + i]->data.size());
            const Tensor<float> z = forward_features(teacher_source, batch);
            std::memcpy(teacher_latents.data() + begin * static_cast<size_t>(latent_dim), z.values.data(),
                        sizeof(float) * z.values.size());
        }
    }

    AdaptResult result;
    result.student = build_feature_extractor(Variant::narrow, std::max(target.num_classes, 2), config.seed);
    if (result.student.spec.latent_dim != latent_dim)
        throw std::invalid_argument("tcmkd_tl_adapt: student latent " +
                                    std::to_string(result.student.spec.latent_dim) + " != teacher latent " +
                                    std::to_string(latent_dim));
    result.student.provenance = {"student_target_adapt", config.epochs, config.seed};
    Model& student = result.student;
    const std::vector<Parameter<float>*> params = student.fe_param_ptrs();

    auto student_pass = [&]() {
        std::vector<float> out(n_items * static_cast<size_t>(latent_dim));
        const size_t batch_size = 128;
        for (size_t begin = 0; begin < n_items; begin += batch_size) {
            const size_t count = std::min(batch_size, n_items - begin);
            Tensor<float> batch({static_cast<int>(count), kNumChannels, kSegmentLen});
            for (size_t i = 0; i < count; ++i)
                std::memcpy(batch.values.data() + i * items[begin + i]->data.size(), items[begin + i]->data.data(),
                            sizeof(float) * items[begin + i]->data.size());
            const Tensor<float> z = forward_features(student, batch);
            std::memcpy(out.data() + begin * static_cast<size_t>(latent_dim), z.values.data(),
                        sizeof(float) * z.values.size());
        }
        return out;
    };

    Rng shuffle_rng(Rng::derive(config.seed, 0x50f));
    std::vector<size_t> order(n_items);
    std::iota(order.begin(), order.end(), size_t(0));

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        if (config.shuffle) shuffle_rng.shuffle(order);
        for (size_t begin = 0; begin < n_items; begin += static_cast<size_t>(config.batch_size)) {
            const size_t count = std::min(static_cast<size_t>(config.batch_size), n_items - begin);
            Tensor<float> batch({static_cast<int>(count), kNumChannels, kSegmentLen});
            Tensor<float> targets({static_cast<int>(count), latent_dim});
            for (size_t i = 0; i < count; ++i) {
                const size_t idx = order[begin + i];
                std::memcpy(batch.values.data() + i * items[idx]->data.size(), items[idx]->data.data(),
                            sizeof(float) * items[idx]->data.size());
                std::memcpy(targets.values.data() + i * static_cast<size_t>(latent_dim),
                            teacher_latents.data() + idx * static_cast<size_t>(latent_dim),
                            sizeof(float) * static_cast<size_t>(latent_dim));
            }
            Graph<float> g;
            FVar z = features_graph(g, student, g.input(std::move(batch)), true);
            FVar loss = g.mse(z, g.input(std::move(targets)));
            g.backward(loss);
            adam_step(params, config.adam);
        }

        // End-of-epoch bookkeeping: the logged loss is the MSE between the
        // full-pass student latents and the cached teacher latents, so it
        // can be recomputed independently from those tensors.
        std::vector<float> epoch_z = student_pass();
        double acc = 0.0;
        for (size_t i = 0; i < epoch_z.size(); ++i) {
            const double d = static_cast<double>(epoch_z[i]) - static_cast<double>(teacher_latents[i]);
            acc += d * d;
        }
        const double epoch_mse = acc / static_cast<double>(epoch_z.size());
        if (!std::isfinite(epoch_mse))
            throw std::runtime_error("tcmkd_tl_adapt: non-finite loss at epoch " + std::to_string(epoch));
        result.loss_curve.push_back(epoch_mse);
        if (keep_epoch_latents) result.epoch_latents.push_back(std::move(epoch_z));
    }

    result.embeddings.dim = latent_dim;
    result.embeddings.vectors = keep_epoch_latents && !result.epoch_latents.empty()
                                    ? result.epoch_latents.back()
                                    : student_pass();
    result.embeddings.domain_tag = Domain::target;
    result.embeddings.producer = EmbeddingProducer::student_target;
    result.embeddings.labels.reserve(n_items);
    for (const Segment* s : items) result.embeddings.labels.push_back(s->label);
    return result;
}

// --- dense symmetric eigensolver and Cholesky --------------------------------

namespace {

// Cyclic Jacobi rotations; A is symmetric dim x dim (row-major, overwritten
// with the diagonalized matrix), V accumulates eigenvectors as columns.
void jacobi_eigen(std::vector<double>& a, std::vector<double>& v, int dim) {
    v.assign(static_cast<size_t>(dim) * dim, 0.0);
    for (int i = 0; i < dim; ++i) v[static_cast<size_t>(i) * dim + i] = 1.0;

    auto idx = [dim](int r, int c) { return static_cast<size_t>(r) * dim + c; };
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < dim; ++p)
            for (int q = p + 1; q < dim; ++q) off += a[idx(p, q)] * a[idx(p, q)];
        if (off < 1e-22 * dim * dim) break;

        for (int p = 0; p < dim; ++p)
            for (int q = p + 1; q < dim; ++q) {
                const double apq = a[idx(p, q)];
                if (std::abs(apq) < 1e-300) continue;
                const double app = a[idx(p, p)], aqq = a[idx(q, q)];
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (int k = 0; k < dim; ++k) {
                    const double akp = a[idx(k, p)], akq = a[idx(k, q)];
                    a[idx(k, p)] = c * akp - s * akq;
                    a[idx(k, q)] = s * akp + c * akq;
                }
                for (int k = 0; k < dim; ++k) {
                    const double apk = a[idx(p, k)], aqk = a[idx(q, k)];
                    a[idx(p, k)] = c * apk - s * aqk;
                    a[idx(q, k)] = s * apk + c * aqk;
                }
                for (int k = 0; k < dim; ++k) {
                    const double vkp = v[idx(k, p)], vkq = v[idx(k, q)];
                    v[idx(k, p)] = c * vkp - s * vkq;
                    v[idx(k, q)] = s * vkp + c * vkq;
                }
            }
    }
}

// Lower-triangular Cholesky of a symmetric positive-definite matrix.
std::vector<double> cholesky(const std::vector<double>& a, int dim) {
    std::vector<double> l(static_cast<size_t>(dim) * dim, 0.0);
    auto idx = [dim](int r, int c) { return static_cast<size_t>(r) * dim + c; };
    for (int i = 0; i < dim; ++i) {
        for (int j = 0; j <= i; ++j) {
            double sum = a[idx(i, j)];
            for (int k = 0; k < j; ++k) sum -= l[idx(i, k)] * l[idx(j, k)];
            if (i == j) {
                if (sum <= 0.0)
                    throw std::runtime_error("cholesky: matrix not positive definite at pivot " + std::to_string(i));
                l[idx(i, i)] = std::sqrt(sum);
            } else {
                l[idx(i, j)] = sum / l[idx(j, j)];
            }
        }
    }
    return l;
}

std::vector<double> population_covariance(const EmbeddingSet& set, std::vector<double>& mean_out) {
    const int dim = set.dim;
    const size_t n = set.count();
    mean_out.assign(static_cast<size_t>(dim), 0.0);
    for (size_t i = 0; i < n; ++i) {
        const float* row = set.row(i);
        for (int d = 0; d < dim; ++d) mean_out[static_cast<size_t>(d)] += row[d];
    }
    for (double& m : mean_out) m /= static_cast<double>(n);

    std::vector<double> cov(static_cast<size_t>(dim) * dim, 0.0);
    std::vector<double> centered(static_cast<size_t>(dim));
    for (size_t i = 0; i < n; ++i) {
        const float* row = set.row(i);
        for (int d = 0; d < dim; ++d) centered[static_cast<size_t>(d)] = row[d] - mean_out[static_cast<size_t>(d)];
        for (int r = 0; r < dim; ++r) {
            const double cr = centered[static_cast<size_t>(r)];
            for (int c = r; c < dim; ++c) cov[static_cast<size_t>(r) * dim + c] += cr * centered[static_cast<size_t>(c)];
        }
    }
    for (int r = 0; r < dim; ++r)
        for (int c = r; c < dim; ++c) {
            const double val = cov[static_cast<size_t>(r) * dim + c] / static_cast<double>(n);
            cov[static_cast<size_t>(r) * dim + c] = val;
            cov[static_cast<size_t>(c) * dim + r] = val;
        }
    return cov;
}

} // namespace

Projection2D fit_projection(const EmbeddingSet& embeddings) {
    const size_t n = embeddings.count();
    if (n < 3) throw std::invalid_argument("fit_projection: need at least 3 points, got " + std::to_string(n));
    const int dim = embeddings.dim;

    Projection2D proj;
    proj.dim = dim;
    std::vector<double> cov = population_covariance(embeddings, proj.mean);

    double total_var = 0.0;
    for (int d = 0; d < dim; ++d) total_var += cov[static_cast<size_t>(d) * dim + d];
    if (total_var <= 1e-18)
        throw std::invalid_argument("fit_projection: degenerate input (all points identical)");

    std::vector<double> v;
    jacobi_eigen(cov, v, dim);

    // Top two eigenpairs by eigenvalue.
    std::vector<int> order(static_cast<size_t>(dim));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int x, int y) {
        return cov[static_cast<size_t>(x) * dim + x] > cov[static_cast<size_t>(y) * dim + y];
    });

    proj.components.assign(2 * static_cast<size_t>(dim), 0.0);
    for (int k = 0; k < 2; ++k) {
        const int col = order[static_cast<size_t>(k)];
        proj.explained_variance[static_cast<size_t>(k)] =
            std::max(cov[static_cast<size_t>(col) * dim + col], 0.0);
        double* comp = proj.components.data() + static_cast<size_t>(k) * dim;
        for (int d = 0; d < dim; ++d) comp[d] = v[static_cast<size_t>(d) * dim + col];
        // Largest-magnitude entry positive.
        int big = 0;
        for (int d = 1; d < dim; ++d)
            if (std::abs(comp[d]) > std::abs(comp[big])) big = d;
        if (comp[big] < 0.0)
            for (int d = 0; d < dim; ++d) comp[d] = -comp[d];
    }
    return proj;
}

std::vector<std::array<double, 2>> project(const EmbeddingSet& embeddings, const Projection2D& proj) {
    if (embeddings.dim != proj.dim)
        throw std::invalid_argument("project: embedding dim " + std::to_string(embeddings.dim) +
                                    " != projection dim " + std::to_string(proj.dim));
    const size_t n = embeddings.count();
    std::vector<std::array<double, 2>> out(n);
    for (size_t i = 0; i < n; ++i) {
        const float* row = embeddings.row(i);
        for (int k = 0; k < 2; ++k) {
            const double* comp = proj.components.data() + static_cast<size_t>(k) * proj.dim;
            double acc = 0.0;
            for (int d = 0; d < proj.dim; ++d)
                acc += (static_cast<double>(row[d]) - proj.mean[static_cast<size_t>(d)]) * comp[d];
            out[i][static_cast<size_t>(k)] = acc;
        }
    }
    return out;
}

AnomalyModel fit_anomaly_model(const EmbeddingSet& reference, double ridge, double q) {
    if (reference.count() == 0) throw std::invalid_argument("fit_anomaly_model: reference set is empty");
    if (q <= 0.0 || q > 1.0) throw std::invalid_argument("fit_anomaly_model: quantile must be in (0,1]");

    AnomalyModel model;
    model.dim = reference.dim;
    model.ridge = ridge;
    model.quantile = q;
    std::vector<double> cov = population_covariance(reference, model.mean);
    for (int d = 0; d < model.dim; ++d) cov[static_cast<size_t>(d) * model.dim + d] += ridge;
    model.cov_cholesky = cholesky(cov, model.dim);

    std::vector<double> ref_scores = anomaly_scores(reference, model);
    std::vector<double> sorted = ref_scores;
    std::sort(sorted.begin(), sorted.end());
    const size_t n = sorted.size();
    size_t idx = static_cast<size_t>(std::ceil(q * static_cast<double>(n)));
    idx = std::min(std::max<size_t>(idx, 1), n) - 1;
    model.threshold = sorted[idx];
    return model;
}

std::vector<double> anomaly_scores(const EmbeddingSet& embeddings, const AnomalyModel& model) {
    if (embeddings.dim != model.dim)
        throw std::invalid_argument("anomaly_scores: embedding dim " + std::to_string(embeddings.dim) +
                                    " != model dim " + std::to_string(model.dim));
    const int dim = model.dim;
    const size_t n = embeddings.count();
    std::vector<double> scores(n);
    std::vector<double> y(static_cast<size_t>(dim));
    for (size_t i = 0; i < n; ++i) {
        const float* row = embeddings.row(i);
        // Forward substitution: L y = (z - mu); score = ||y||.
        for (int r = 0; r < dim; ++r) {
            double sum = static_cast<double>(row[r]) - model.mean[static_cast<size_t>(r)];
            const double* lrow = model.cov_cholesky.data() + static_cast<size_t>(r) * dim;
            for (int c = 0; c < r; ++c) sum -= lrow[c] * y[static_cast<size_t>(c)];
            y[static_cast<size_t>(r)] = sum / lrow[r];
        }
        double acc = 0.0;
        for (int r = 0; r < dim; ++r) acc += y[static_cast<size_t>(r)] * y[static_cast<size_t>(r)];
        scores[i] = std::sqrt(acc);
    }
    return scores;
}

double silhouette(const EmbeddingSet& embeddings, std::vector<std::string>* warnings) {
    const size_t n = embeddings.count();
    if (embeddings.labels.size() != n)
        throw std::invalid_argument("silhouette: embeddings must carry labels");
    std::map<int, std::vector<size_t>> clusters;
    for (size_t i = 0; i < n; ++i) clusters[embeddings.labels[i]].push_back(i);
    if (clusters.size() < 2)
        throw std::invalid_argument("silhouette: need at least 2 labeled clusters, got " +
                                    std::to_string(clusters.size()));

    bool warned_singleton = false;
    const int dim = embeddings.dim;
    auto dist = [&](size_t a, size_t b) {
        const float* ra = embeddings.row(a);
        const float* rb = embeddings.row(b);
        double acc = 0.0;
        for (int d = 0; d < dim; ++d) {
            const double diff = static_cast<double>(ra[d]) - static_cast<double>(rb[d]);
            acc += diff * diff;
        }
        return std::sqrt(acc);
    };

    double total = 0.0;
    for (const auto& [label, members] : clusters) {
        for (size_t i : members) {
            if (members.size() == 1) {
                if (!warned_singleton && warnings) {
                    warnings->push_back("silhouette: cluster " + std::to_string(label) +
                                        " is a singleton; its coefficient is 0");
                    warned_singleton = true;
                }
                continue; // contributes 0
            }
            double a = 0.0;
            for (size_t j : members)
                if (j != i) a += dist(i, j);
            a /= static_cast<double>(members.size() - 1);

            double b = std::numeric_limits<double>::infinity();
            for (const auto& [other_label, other_members] : clusters) {
                if (other_label == label) continue;
                double m = 0.0;
                for (size_t j : other_members) m += dist(i, j);
                m /= static_cast<double>(other_members.size());
                b = std::min(b, m);
            }
            const double denom = std::max(a, b);
            total += denom > 0.0 ? (b - a) / denom : 0.0;
        }
    }
    return total / static_cast<double>(n);
}

std::string embeddings_to_csv(const EmbeddingSet& set, const std::vector<double>* scores,
                              const std::vector<bool>* flags) {
    std::string csv;
    {
        std::vector<std::string> header;
        header.reserve(static_cast<size_t>(set.dim) + 3);
        for (int d = 0; d < set.dim; ++d) header.push_back("z" + std::to_string(d));
        if (!set.labels.empty()) header.push_back("label");
        if (scores) header.push_back("score");
        if (flags) header.push_back("flag");
        csv += join_csv_row(header);
    }
    const size_t n = set.count();
    for (size_t i = 0; i < n; ++i) {
        std::vector<std::string> row;
        row.reserve(static_cast<size_t>(set.dim) + 3);
        const float* r = set.row(i);
        for (int d = 0; d < set.dim; ++d) row.push_back(format_number(static_cast<double>(r[d])));
        if (!set.labels.empty()) row.push_back(std::to_string(set.labels[i]));
        if (scores) row.push_back(format_number((*scores)[i]));
        if (flags) row.push_back((*flags)[i] ? "1" : "0");
        csv += join_csv_row(row);
    }
    return csv;
}

std::string projection_to_csv(const std::vector<std::array<double, 2>>& points, const std::vector<int>* labels,
                              const std::vector<double>* scores) {
    std::string csv = "x,y";
    if (labels) csv += ",label";
    if (scores) csv += ",score";
    csv += '\n';
    for (size_t i = 0; i < points.size(); ++i) {
        csv += format_number(points[i][0]) + "," + format_number(points[i][1]);
        if (labels) csv += "," + std::to_string((*labels)[i]);
        if (scores) csv += "," + format_number((*scores)[i]);
        csv += '\n';
    }
    return csv;
}

EmbeddingSet embeddings_from_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("embeddings_from_csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("embeddings_from_csv: " + path.string() + ": empty file");

    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    int dim = 0;
    while (dim < static_cast<int>(header.size()) && header[static_cast<size_t>(dim)] == "z" + std::to_string(dim))
        ++dim;
    if (dim == 0)
        throw std::runtime_error("embeddings_from_csv: " + path.string() +
                                 ": header must start with z0,z1,...; got '" + header[0] + "'");
    int label_col = -1;
    for (size_t i = static_cast<size_t>(dim); i < header.size(); ++i)
        if (header[i] == "label") label_col = static_cast<int>(i);

    EmbeddingSet set;
    set.dim = dim;
    size_t row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        int col = 0;
        while (std::getline(ss, cell, ',')) {
            if (col < dim) {
                try {
                    set.vectors.push_back(std::stof(cell));
                } catch (const std::exception&) {
                    throw std::runtime_error("embeddings_from_csv: " + path.string() + ": row " +
                                             std::to_string(row_no) + ": bad value '" + cell + "'");
                }
            } else if (col == label_col) {
                set.labels.push_back(std::stoi(cell));
            }
            ++col;
        }
        if (col < dim)
            throw std::runtime_error("embeddings_from_csv: " + path.string() + ": row " + std::to_string(row_no) +
                                     " has " + std::to_string(col) + " columns, expected at least " +
                                     std::to_string(dim));
    }
    if (!set.labels.empty() && set.labels.size() != set.count())
        throw std::runtime_error("embeddings_from_csv: " + path.string() + ": label column incomplete");
    return set;
}

} // namespace tcmkd
