#include <doctest.h>

#include <cmath>

#include "tcmkd/io.hpp"
#include "tcmkd/rng.hpp"
#include "tcmkd/signal.hpp"
#include "tcmkd/train.hpp"
#include "tcmkd/transfer.hpp"

using namespace tcmkd;

namespace {

EmbeddingSet make_set(int dim, const std::vector<std::vector<float>>& rows, std::vector<int> labels = {}) {
    EmbeddingSet set;
    set.dim = dim;
    for (const auto& row : rows) {
        REQUIRE(static_cast<int>(row.size()) == dim);
        set.vectors.insert(set.vectors.end(), row.begin(), row.end());
    }
    set.labels = std::move(labels);
    return set;
}

EmbeddingSet gaussian_set(Rng& rng, size_t n, int dim, double spread = 1.0) {
    EmbeddingSet set;
    set.dim = dim;
    set.vectors.resize(n * static_cast<size_t>(dim));
    for (float& v : set.vectors) v = static_cast<float>(rng.normal(0.0, spread));
    return set;
}

// Random orthogonal matrix via Gram-Schmidt on a Gaussian matrix.
std::vector<double> random_orthogonal(Rng& rng, int dim) {
    std::vector<double> q(static_cast<size_t>(dim) * dim);
    for (double& v : q) v = rng.normal();
    for (int c = 0; c < dim; ++c) {
        for (int prev = 0; prev < c; ++prev) {
            double dot = 0.0;
            for (int r = 0; r < dim; ++r)
                dot += q[static_cast<size_t>(r) * dim + c] * q[static_cast<size_t>(r) * dim + prev];
            for (int r = 0; r < dim; ++r)
                q[static_cast<size_t>(r) * dim + c] -= dot * q[static_cast<size_t>(r) * dim + prev];
        }
        double norm = 0.0;
        for (int r = 0; r < dim; ++r) norm += q[static_cast<size_t>(r) * dim + c] * q[static_cast<size_t>(r) * dim + c];
        norm = std::sqrt(norm);
        for (int r = 0; r < dim; ++r) q[static_cast<size_t>(r) * dim + c] /= norm;
    }
    return q;
}

EmbeddingSet rotate(const EmbeddingSet& set, const std::vector<double>& q) {
    EmbeddingSet out = set;
    const int dim = set.dim;
    for (size_t i = 0; i < set.count(); ++i) {
        const float* row = set.row(i);
        for (int r = 0; r < dim; ++r) {
            double acc = 0.0;
            for (int c = 0; c < dim; ++c) acc += q[static_cast<size_t>(r) * dim + c] * static_cast<double>(row[c]);
            out.vectors[i * static_cast<size_t>(dim) + static_cast<size_t>(r)] = static_cast<float>(acc);
        }
    }
    return out;
}

LabeledDataset tiny_target(int recs_per_class, int64_t len, uint64_t seed, double carrier_scale = 1.0) {
    SynthSpec spec = SynthSpec::confusable_pairs_default();
    spec.recordings_per_class = recs_per_class;
    spec.recording_len = len;
    for (double& f : spec.carrier_freqs) f *= carrier_scale;
    std::vector<std::vector<Segment>> per_rec;
    for (const Recording& rec : synth_generate(spec, seed)) per_rec.push_back(segment_recording(rec));
    return assemble_unsplit(per_rec, 4, Domain::target);
}

} // namespace

TEST_SUITE_BEGIN("transfer");

TEST_CASE("PCA: hand-computed collinear points") {
    // Points (0,0), (1,0), (2,0) padded into 8 dims: first component is the
    // x axis, population variances {2/3, 0}.
    std::vector<std::vector<float>> rows(3, std::vector<float>(8, 0.0f));
    rows[1][0] = 1.0f;
    rows[2][0] = 2.0f;
    EmbeddingSet set = make_set(8, rows);
    Projection2D proj = fit_projection(set);
    CHECK(proj.explained_variance[0] == doctest::Approx(2.0 / 3.0));
    CHECK(proj.explained_variance[1] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(std::abs(proj.components[0]) == doctest::Approx(1.0)); // x axis
    CHECK(proj.components[0] > 0.0);                             // sign convention
    for (int d = 1; d < 8; ++d) CHECK(proj.components[static_cast<size_t>(d)] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("PCA: recovers an axis-aligned plane embedded in high dims") {
    Rng rng(3);
    std::vector<std::vector<float>> rows;
    for (int i = 0; i < 40; ++i) {
        std::vector<float> row(16, 0.0f);
        row[2] = static_cast<float>(rng.uniform(-3.0, 3.0)); // the plane is dims 2 and 7
        row[7] = static_cast<float>(rng.uniform(-1.0, 1.0));
        rows.push_back(std::move(row));
    }
    EmbeddingSet set = make_set(16, rows);
    Projection2D proj = fit_projection(set);

    // Components span {e2, e7}: every other coordinate is 0.
    for (int k = 0; k < 2; ++k)
        for (int d = 0; d < 16; ++d) {
            if (d == 2 || d == 7) continue;
            CHECK(std::abs(proj.components[static_cast<size_t>(k) * 16 + d]) < 1e-6);
        }
    // Residual variance beyond the top two is zero: the projected variances
    // account for the whole spread.
    const double total = proj.explained_variance[0] + proj.explained_variance[1];
    auto pts = project(set, proj);
    double var0 = 0.0, var1 = 0.0, m0 = 0.0, m1 = 0.0;
    for (const auto& p : pts) {
        m0 += p[0];
        m1 += p[1];
    }
    m0 /= static_cast<double>(pts.size());
    m1 /= static_cast<double>(pts.size());
    for (const auto& p : pts) {
        var0 += (p[0] - m0) * (p[0] - m0);
        var1 += (p[1] - m1) * (p[1] - m1);
    }
    var0 /= static_cast<double>(pts.size());
    var1 /= static_cast<double>(pts.size());
    CHECK(var0 == doctest::Approx(proj.explained_variance[0]).epsilon(1e-5));
    CHECK(var1 == doctest::Approx(proj.explained_variance[1]).epsilon(1e-5));
    CHECK(total == doctest::Approx(var0 + var1).epsilon(1e-5));
}

TEST_CASE("PCA: components stay orthonormal and the mean projects to the origin") {
    Rng rng(19);
    EmbeddingSet set = gaussian_set(rng, 60, 24);
    Projection2D proj = fit_projection(set);

    double n0 = 0.0, n1 = 0.0, dot = 0.0;
    for (int d = 0; d < 24; ++d) {
        n0 += proj.components[static_cast<size_t>(d)] * proj.components[static_cast<size_t>(d)];
        n1 += proj.components[static_cast<size_t>(24 + d)] * proj.components[static_cast<size_t>(24 + d)];
        dot += proj.components[static_cast<size_t>(d)] * proj.components[static_cast<size_t>(24 + d)];
    }
    CHECK(n0 == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(n1 == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(dot == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(proj.explained_variance[0] >= proj.explained_variance[1]);

    EmbeddingSet mean_point;
    mean_point.dim = 24;
    for (double m : proj.mean) mean_point.vectors.push_back(static_cast<float>(m));
    const auto pts = project(mean_point, proj);
    CHECK(std::abs(pts[0][0]) < 1e-5);
    CHECK(std::abs(pts[0][1]) < 1e-5);
}

TEST_CASE("PCA degenerate input and too-few points are rejected") {
    std::vector<std::vector<float>> same(5, std::vector<float>(4, 2.5f));
    CHECK_THROWS_WITH_AS(fit_projection(make_set(4, same)), doctest::Contains("degenerate"),
                         std::invalid_argument);
    std::vector<std::vector<float>> two(2, std::vector<float>(4, 0.0f));
    CHECK_THROWS_WITH_AS(fit_projection(make_set(4, two)), doctest::Contains("at least 3"), std::invalid_argument);
}

TEST_CASE("Mahalanobis scoring examples") {
    SUBCASE("the mean scores zero, a unit offset on isotropic data scores ~1") {
        Rng rng(7);
        EmbeddingSet ref = gaussian_set(rng, 4000, 8);
        AnomalyModel model = fit_anomaly_model(ref, 1e-6, 0.99);

        EmbeddingSet probes;
        probes.dim = 8;
        for (double m : model.mean) probes.vectors.push_back(static_cast<float>(m));
        std::vector<float> unit(model.mean.begin(), model.mean.end());
        unit[3] += 1.0f;
        probes.vectors.insert(probes.vectors.end(), unit.begin(), unit.end());

        const std::vector<double> scores = anomaly_scores(probes, model);
        CHECK(scores[0] == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(scores[1] == doctest::Approx(1.0).epsilon(0.1)); // sample covariance of N(0,1) data
    }

    SUBCASE("self-flag rate at q=0.99 is about 1%") {
        Rng rng(11);
        EmbeddingSet ref = gaussian_set(rng, 3000, 6);
        AnomalyModel model = fit_anomaly_model(ref, 1e-6, 0.99);
        const std::vector<double> scores = anomaly_scores(ref, model);
        size_t flagged = 0;
        for (double s : scores) flagged += s > model.threshold ? 1 : 0;
        const double rate = static_cast<double>(flagged) / static_cast<double>(scores.size());
        CHECK(rate > 0.005);
        CHECK(rate < 0.015);
    }

    SUBCASE("empty reference is rejected") {
        EmbeddingSet empty;
        empty.dim = 4;
        CHECK_THROWS_WITH_AS(fit_anomaly_model(empty), doctest::Contains("empty"), std::invalid_argument);
    }
}

TEST_CASE("Mahalanobis scores are invariant under joint rotation") {
    Rng rng(23);
    const int dim = 12;
    EmbeddingSet ref = gaussian_set(rng, 500, dim, 2.0);
    EmbeddingSet probes = gaussian_set(rng, 50, dim, 3.0);

    AnomalyModel model = fit_anomaly_model(ref, 1e-6, 0.99);
    const std::vector<double> before = anomaly_scores(probes, model);

    const std::vector<double> q = random_orthogonal(rng, dim);
    AnomalyModel rotated_model = fit_anomaly_model(rotate(ref, q), 1e-6, 0.99);
    const std::vector<double> after = anomaly_scores(rotate(probes, q), rotated_model);

    for (size_t i = 0; i < before.size(); ++i) CHECK(std::abs(before[i] - after[i]) < 1e-5);
}

TEST_CASE("silhouette fixtures") {
    SUBCASE("two far-separated tight clusters score near 1") {
        Rng rng(5);
        std::vector<std::vector<float>> rows;
        std::vector<int> labels;
        for (int i = 0; i < 20; ++i) {
            rows.push_back({static_cast<float>(rng.normal(0.0, 0.01)), static_cast<float>(rng.normal(0.0, 0.01))});
            labels.push_back(0);
            rows.push_back({static_cast<float>(100.0 + rng.normal(0.0, 0.01)), static_cast<float>(rng.normal(0.0, 0.01))});
            labels.push_back(1);
        }
        CHECK(silhouette(make_set(2, rows, labels)) > 0.99);
    }

    SUBCASE("random labels on one isotropic blob sit near 0") {
        double total = 0.0;
        const int n_seeds = 8;
        for (int seed = 0; seed < n_seeds; ++seed) {
            Rng rng(static_cast<uint64_t>(100 + seed));
            std::vector<std::vector<float>> rows;
            std::vector<int> labels;
            for (int i = 0; i < 60; ++i) {
                rows.push_back({static_cast<float>(rng.normal()), static_cast<float>(rng.normal()),
                                static_cast<float>(rng.normal())});
                labels.push_back(static_cast<int>(rng.next_below(2)));
            }
            total += silhouette(make_set(3, rows, labels));
        }
        CHECK(std::abs(total / n_seeds) < 0.1);
    }

    SUBCASE("two coincident clusters score at or below 0 (6-point fixture)") {
        // Both "clusters" occupy the same three sites; brute-force pairwise
        // distances give b <= a for every point.
        std::vector<std::vector<float>> rows = {{0, 0}, {1, 0}, {0, 1}, {0, 0}, {1, 0}, {0, 1}};
        std::vector<int> labels = {0, 0, 0, 1, 1, 1};
        CHECK(silhouette(make_set(2, rows, labels)) <= 0.0);
    }

    SUBCASE("a singleton cluster contributes zero with a warning") {
        std::vector<std::vector<float>> rows = {{0, 0}, {0.1f, 0}, {50, 50}};
        std::vector<int> labels = {0, 0, 1};
        std::vector<std::string> warnings;
        const double s = silhouette(make_set(2, rows, labels), &warnings);
        CHECK(warnings.size() == 1);
        CHECK(std::isfinite(s));
    }

    SUBCASE("fewer than two clusters is an error") {
        std::vector<std::vector<float>> rows = {{0, 0}, {1, 1}};
        std::vector<int> labels = {3, 3};
        CHECK_THROWS_WITH_AS(silhouette(make_set(2, rows, labels)), doctest::Contains("2 labeled clusters"),
                             std::invalid_argument);
    }
}

TEST_CASE("no-kd extraction is pure and matches forward_features") {
    LabeledDataset target = tiny_target(1, 6144, 41);
    Model student = build_model(Variant::narrow, 4, 77);
    const auto params_before = student.fe_params[0].value.values;

    EmbeddingSet set = extract_embeddings_no_kd(student, target.segments);
    CHECK(set.count() == target.segments.size());
    CHECK(set.dim == 256);
    CHECK(set.producer == EmbeddingProducer::student_source);
    CHECK(student.fe_params[0].value.values == params_before);

    // Row 0 equals a direct forward pass over that segment, bit-for-bit.
    const Tensor<float> z = forward_features(student, batch_from_segments(target.segments, 0, 1));
    for (int d = 0; d < 256; ++d) CHECK(set.vectors[static_cast<size_t>(d)] == z.values[static_cast<size_t>(d)]);

    // Identical inputs produce identical rows.
    EmbeddingSet again = extract_embeddings_no_kd(student, target.segments);
    CHECK(again.vectors == set.vectors);
}

TEST_CASE("tcmkd adaptation: descent, frozen teacher, loss bookkeeping") {
    LabeledDataset target = tiny_target(2, 8192, 43);
    Model teacher = build_model(Variant::wide, 4, 11);
    const auto teacher_before = teacher.fe_params[0].value.values;

    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch_size = 16;
    cfg.seed = 43;
    AdaptResult result = tcmkd_tl_adapt(teacher, target, cfg, /*keep_epoch_latents=*/true);

    CHECK(teacher.fe_params[0].value.values == teacher_before);
    REQUIRE(result.loss_curve.size() == 8);
    CHECK(result.loss_curve.back() < result.loss_curve.front());
    CHECK(result.student.feature_extractor_only());
    CHECK(result.embeddings.producer == EmbeddingProducer::student_target);
    CHECK(result.embeddings.count() == static_cast<size_t>(target.windows.size()));

    // The logged loss must equal an independent recomputation from the
    // cached epoch latents and the frozen teacher latents.
    EmbeddingSet teacher_set = extract_teacher_embeddings(teacher, target.windows);
    for (size_t e = 0; e < result.loss_curve.size(); ++e) {
        const std::vector<float>& z = result.epoch_latents[e];
        REQUIRE(z.size() == teacher_set.vectors.size());
        double acc = 0.0;
        for (size_t i = 0; i < z.size(); ++i) {
            const double d = static_cast<double>(z[i]) - static_cast<double>(teacher_set.vectors[i]);
            acc += d * d;
        }
        const double recomputed = acc / static_cast<double>(z.size());
        CHECK(std::abs(recomputed - result.loss_curve[e]) < 1e-5);
    }
}

TEST_CASE("tcmkd adaptation overfits a tiny set: early monotone descent, deep convergence") {
    LabeledDataset target = tiny_target(1, 6144, 47); // 7 windows per recording, 4 recordings
    Model teacher = build_model(Variant::wide, 4, 3);

    TrainConfig cfg;
    cfg.epochs = 80;
    cfg.batch_size = 8;
    cfg.seed = 7;
    cfg.adam.learning_rate = 3e-3;
    AdaptResult result = tcmkd_tl_adapt(teacher, target, cfg);
    for (size_t e = 1; e < 5; ++e) CHECK(result.loss_curve[e] < result.loss_curve[e - 1]);
    CHECK(result.loss_curve.back() < 0.1 * result.loss_curve.front());
}

TEST_CASE("adaptation requires windows and a wide teacher") {
    LabeledDataset no_windows = tiny_target(1, 6144, 5);
    no_windows.windows.clear();
    Model teacher = build_model(Variant::wide, 4, 0);
    CHECK_THROWS_WITH_AS(tcmkd_tl_adapt(teacher, no_windows, TrainConfig{}), doctest::Contains("windows"),
                         std::invalid_argument);
    Model narrow = build_model(Variant::narrow, 4, 0);
    LabeledDataset target = tiny_target(1, 6144, 5);
    CHECK_THROWS_WITH_AS(tcmkd_tl_adapt(narrow, target, TrainConfig{}), doctest::Contains("wide"),
                         std::invalid_argument);
}

TEST_CASE("embedding CSV round trip") {
    Rng rng(31);
    EmbeddingSet set = gaussian_set(rng, 10, 4);
    set.labels = {0, 1, 2, 3, 0, 1, 2, 3, 0, 1};
    const std::string csv = embeddings_to_csv(set);
    CHECK(csv.substr(0, 14) == "z0,z1,z2,z3,la");

    const auto path = std::filesystem::temp_directory_path() / "tcmkd_test_emb.csv";
    write_text_file(path, csv);
    EmbeddingSet loaded = embeddings_from_csv(path);
    CHECK(loaded.dim == 4);
    CHECK(loaded.count() == 10);
    CHECK(loaded.labels == set.labels);
    for (size_t i = 0; i < set.vectors.size(); ++i)
        CHECK(loaded.vectors[i] == doctest::Approx(set.vectors[i]).epsilon(1e-6));
    std::filesystem::remove(path);
}

TEST_SUITE_END();
