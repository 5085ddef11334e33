#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tcmkd/model.hpp"
#include "tcmkd/signal.hpp"
#include "tcmkd/train.hpp"

namespace tcmkd {

enum class EmbeddingProducer { student_source, teacher_source_on_target, student_target };

std::string producer_name(EmbeddingProducer p);

// Latent vectors plus optional measurement labels; the currency of the
// transfer-learning and anomaly-detection analysis.
struct EmbeddingSet {
    int dim = 0;
    std::vector<float> vectors; // row-major [N, dim]
    std::vector<int> labels;    // empty = unlabeled
    Domain domain_tag = Domain::target;
    EmbeddingProducer producer = EmbeddingProducer::student_source;

    size_t count() const { return dim > 0 ? vectors.size() / static_cast<size_t>(dim) : 0; }
    const float* row(size_t i) const { return vectors.data() + i * static_cast<size_t>(dim); }
};

// Direct transfer: embed target segments with the source-trained student,
// no adaptation, no parameter mutation.
EmbeddingSet extract_embeddings_no_kd(const Model& student_source, const std::vector<Segment>& target_segments);

// Teacher latents for target windows (frozen source-trained teacher).
EmbeddingSet extract_teacher_embeddings(const Model& teacher_source, const std::vector<TemporalWindow>& windows);

struct AdaptResult {
    Model student;            // adapted narrow feature extractor (no classifier head)
    EmbeddingSet embeddings;  // student latents over valid window centers, final parameters
    std::vector<double> loss_curve; // end-of-epoch full-pass MSE against the cached teacher latents
    // Per-epoch student latent snapshots (row-major, aligned with
    // embeddings), kept only when requested; lets the logged loss be
    // recomputed independently.
    std::vector<std::vector<float>> epoch_latents;
};

// Adaptation transfer: train a fresh narrow feature extractor from scratch
// to match the frozen teacher's latents on the unlabeled target domain.
// Pure MSE objective, no classifier head, no label is read.
AdaptResult tcmkd_tl_adapt(const Model& teacher_source, const LabeledDataset& target, const TrainConfig& config,
                           bool keep_epoch_latents = false);

// --- 2-D projection (PCA) ---------------------------------------------------

struct Projection2D {
    std::vector<double> components; // 2 x dim, rows orthonormal
    std::vector<double> mean;       // dim
    std::array<double, 2> explained_variance{}; // descending, population convention
    int dim = 0;
};

// Principal components of the centered embeddings via eigendecomposition of
// the population covariance. Sign convention: the largest-magnitude entry
// of each component is positive.
Projection2D fit_projection(const EmbeddingSet& embeddings);
std::vector<std::array<double, 2>> project(const EmbeddingSet& embeddings, const Projection2D& proj);

// --- anomaly scoring --------------------------------------------------------

struct AnomalyModel {
    int dim = 0;
    std::vector<double> mean;
    std::vector<double> cov_cholesky; // lower-triangular L with (Sigma + ridge I) = L L^T
    double threshold = 0.0;           // q-quantile of reference scores
    double ridge = 1e-6;
    double quantile = 0.99;
};

// Gaussian envelope around the reference set; score is the Mahalanobis
// distance sqrt((z-mu)^T (Sigma + ridge I)^-1 (z-mu)).
AnomalyModel fit_anomaly_model(const EmbeddingSet& reference, double ridge = 1e-6, double q = 0.99);
std::vector<double> anomaly_scores(const EmbeddingSet& embeddings, const AnomalyModel& model);

// --- separability -----------------------------------------------------------

// Mean silhouette coefficient with Euclidean distances. A point in a
// singleton cluster contributes 0 (with a warning).
double silhouette(const EmbeddingSet& embeddings, std::vector<std::string>* warnings = nullptr);

// --- CSV export -------------------------------------------------------------

std::string embeddings_to_csv(const EmbeddingSet& set, const std::vector<double>* scores = nullptr,
                              const std::vector<bool>* flags = nullptr);
std::string projection_to_csv(const std::vector<std::array<double, 2>>& points, const std::vector<int>* labels,
                              const std::vector<double>* scores);
EmbeddingSet embeddings_from_csv(const std::filesystem::path& path);

} // namespace tcmkd
