#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tcmkd/rng.hpp"
#include "tcmkd/signal.hpp"

using namespace tcmkd;
namespace fs = std::filesystem;

namespace {

Recording noise_recording(const std::string& id, int64_t samples, int channels = 2, int label = 0,
                          uint64_t seed = 42) {
    Recording rec;
    rec.id = id;
    rec.sample_rate_hz = 25000;
    rec.channels = channels;
    rec.samples = samples;
    rec.label = label;
    rec.data.resize(static_cast<size_t>(channels) * samples);
    Rng rng(seed);
    for (float& v : rec.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return rec;
}

// Independent enumerator: walk start offsets directly.
int64_t brute_force_segment_count(int64_t samples, int seg_len, int hop) {
    int64_t count = 0;
    for (int64_t start = 0; start + seg_len <= samples; start += hop) ++count;
    return count;
}

// Independent enumerator: count valid window centers.
int64_t brute_force_window_count(int64_t n_segments) {
    int64_t count = 0;
    for (int64_t i = 0; i < n_segments; ++i)
        if (i - 2 >= 0 && i + 2 < n_segments) ++count;
    return count;
}

fs::path temp_path(const std::string& name) {
    return fs::temp_directory_path() / ("tcmkd_test_" + name);
}

// The five window blocks overlap 50% in raw time: stitch the contiguous
// 3072-sample raw span back together (block 0 whole, then the last 512
// samples of each later block).
std::vector<double> window_raw_span(const TemporalWindow& w) {
    std::vector<double> out;
    out.reserve(3072);
    for (int t = 0; t < 1024; ++t) out.push_back(w.data[static_cast<size_t>(t)]); // channel 0
    for (int k = 1; k < kWindowSegments; ++k)
        for (int t = 512; t < 1024; ++t) out.push_back(w.data[static_cast<size_t>(k) * 1024 + t]);
    return out;
}

// Single-frequency DFT magnitude of the squared signal (envelope proxy),
// mean removed. Used as the modulation-sideband oracle.
double envelope_dft_magnitude(const std::vector<double>& x, double cycles_per_sample) {
    double mean = 0.0;
    for (double v : x) mean += v * v;
    mean /= static_cast<double>(x.size());
    double re = 0.0, im = 0.0;
    for (size_t t = 0; t < x.size(); ++t) {
        const double v = x[t] * x[t] - mean;
        const double angle = 2.0 * 3.14159265358979323846 * cycles_per_sample * static_cast<double>(t);
        re += v * std::cos(angle);
        im -= v * std::sin(angle);
    }
    return std::sqrt(re * re + im * im);
}

} // namespace

TEST_SUITE_BEGIN("signal");

TEST_CASE("segment counts match the brute-force enumerator") {
    SUBCASE("exact fit gives one segment") {
        auto segs = segment_recording(noise_recording("r", 1024));
        CHECK(segs.size() == 1);
    }
    SUBCASE("250000 samples -> 487 segments") {
        auto segs = segment_recording(noise_recording("r", 250000));
        CHECK(segs.size() == 487);
        CHECK(brute_force_segment_count(250000, 1024, 512) == 487);
    }
    SUBCASE("25000 samples (1 s at 25 kHz) -> 47 segments") {
        auto segs = segment_recording(noise_recording("r", 25000));
        CHECK(segs.size() == 47);
        CHECK(brute_force_segment_count(25000, 1024, 512) == 47);
    }
    SUBCASE("count law holds across a sweep of lengths") {
        for (int64_t L : {1024, 1025, 1535, 1536, 2048, 4000, 9999, 25000, 31337, 65536}) {
            CHECK(expected_segment_count(L) == brute_force_segment_count(L, 1024, 512));
            auto segs = segment_recording(noise_recording("r", L));
            CHECK(static_cast<int64_t>(segs.size()) == expected_segment_count(L));
        }
    }
}

TEST_CASE("segment slicing covers the right sample ranges") {
    Recording rec = noise_recording("cover", 4096);
    auto segs = segment_recording(rec);
    REQUIRE(segs.size() == 7);
    for (size_t j = 0; j < segs.size(); ++j) {
        CHECK(segs[j].index == static_cast<int>(j));
        for (int c = 0; c < 2; ++c)
            for (int t = 0; t < 1024; ++t)
                CHECK(segs[j].data[static_cast<size_t>(c) * 1024 + t] ==
                      rec.at(c, static_cast<int64_t>(j) * 512 + t));
    }
}

TEST_CASE("even-indexed segments reconstruct the raw stream") {
    Recording rec = noise_recording("recon", 25000);
    auto segs = segment_recording(rec);
    int64_t pos = 0;
    for (size_t j = 0; j < segs.size(); j += 2) {
        for (int t = 0; t < 1024; ++t) CHECK(segs[j].data[static_cast<size_t>(t)] == rec.at(0, pos + t));
        pos += 1024;
    }
    CHECK(pos >= 23 * 1024); // last covered sample reaches the tail
}

TEST_CASE("segmentation error paths") {
    CHECK_THROWS_WITH_AS(segment_recording(noise_recording("mono", 4096, 1)), doctest::Contains("channels"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(segment_recording(noise_recording("short", 512)), doctest::Contains("no segments"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(segment_recording(noise_recording("r", 2048), kSegmentLen, 0.5, {0, 5}),
                         doctest::Contains("out of range"), std::invalid_argument);
}

TEST_CASE("channel selection override picks the requested rows") {
    Recording rec = noise_recording("multi", 2048, 4);
    auto segs = segment_recording(rec, kSegmentLen, 0.5, {2, 0});
    REQUIRE(!segs.empty());
    for (int t = 0; t < 1024; ++t) {
        CHECK(segs[0].data[static_cast<size_t>(t)] == rec.at(2, t));
        CHECK(segs[0].data[static_cast<size_t>(1024 + t)] == rec.at(0, t));
    }
}

TEST_CASE("window counts and construction") {
    SUBCASE("N=5 gives one window centered at index 2") {
        auto segs = segment_recording(noise_recording("w", 3072)); // 5 segments
        REQUIRE(segs.size() == 5);
        auto windows = build_windows(segs);
        REQUIRE(windows.size() == 1);
        CHECK(windows[0].center_index == 2);
    }
    SUBCASE("N=4 gives no windows") {
        auto segs = segment_recording(noise_recording("w", 2560));
        REQUIRE(segs.size() == 4);
        CHECK(build_windows(segs).empty());
    }
    SUBCASE("N=487 gives 483 windows, matching the center enumerator") {
        auto segs = segment_recording(noise_recording("w", 250000));
        auto windows = build_windows(segs);
        CHECK(windows.size() == 483);
        CHECK(brute_force_window_count(487) == 483);
    }
    SUBCASE("count law across N") {
        for (int64_t n : {0, 1, 4, 5, 6, 47, 100}) {
            CHECK(expected_window_count(n) == brute_force_window_count(n));
        }
    }
}

TEST_CASE("window center block equals the center segment bit-for-bit") {
    auto segs = segment_recording(noise_recording("wc", 25000));
    auto windows = build_windows(segs);
    REQUIRE(windows.size() == 43);
    for (const TemporalWindow& w : windows) {
        const Segment& center = segs[static_cast<size_t>(w.center_index)];
        for (int c = 0; c < 2; ++c)
            for (int t = 0; t < 1024; ++t)
                CHECK(w.data[static_cast<size_t>(c) * kWindowLen + 2048 + t] ==
                      center.data[static_cast<size_t>(c) * 1024 + t]);
        CHECK(w.label == center.label);
    }
}

TEST_CASE("window construction rejects mixed or gapped inputs") {
    auto a = segment_recording(noise_recording("a", 3072));
    auto b = segment_recording(noise_recording("b", 3072));
    auto mixed = a;
    mixed.back() = b.back();
    CHECK_THROWS_WITH_AS(build_windows(mixed), doctest::Contains("mixed source"), std::invalid_argument);

    auto gapped = a;
    gapped.erase(gapped.begin() + 2);
    CHECK_THROWS_WITH_AS(build_windows(gapped), doctest::Contains("non-consecutive"), std::invalid_argument);
}

TEST_CASE("normalizer examples") {
    auto make_constant_segment = [](float value, int index) {
        Segment s;
        s.source_id = "n";
        s.index = index;
        s.label = 0;
        s.data.assign(2048, value);
        return s;
    };

    SUBCASE("constant channel collapses to ~0 with a clamp warning") {
        std::vector<Segment> segs{make_constant_segment(5.0f, 0)};
        std::vector<std::string> warnings;
        NormStats stats = fit_normalizer(segs, &warnings);
        CHECK(warnings.size() == 2); // both channels constant
        Segment out = apply_normalizer(segs[0], stats);
        for (float v : out.data) CHECK(std::abs(v) < 1e-3);
    }

    SUBCASE("mean 0 / std 1 channel passes through unchanged") {
        // Half the samples +1, half -1: mean 0, population std exactly 1.
        Segment s;
        s.source_id = "n";
        s.index = 0;
        s.label = 0;
        s.data.resize(2048);
        for (size_t i = 0; i < s.data.size(); ++i) s.data[i] = (i % 2 == 0) ? 1.0f : -1.0f;
        NormStats stats = fit_normalizer({s});
        Segment out = apply_normalizer(s, stats);
        for (size_t i = 0; i < s.data.size(); ++i) CHECK(out.data[i] == doctest::Approx(s.data[i]).epsilon(1e-6));
    }

    SUBCASE("two-segment set {all 0, all 2} maps to {-1, +1}") {
        std::vector<Segment> segs{make_constant_segment(0.0f, 0), make_constant_segment(2.0f, 1)};
        NormStats stats = fit_normalizer(segs);
        CHECK(stats.mean[0] == doctest::Approx(1.0));
        CHECK(stats.stddev[0] == doctest::Approx(1.0));
        Segment lo = apply_normalizer(segs[0], stats);
        Segment hi = apply_normalizer(segs[1], stats);
        CHECK(lo.data[0] == doctest::Approx(-1.0));
        CHECK(hi.data[0] == doctest::Approx(1.0));
    }

    SUBCASE("stats carry a train provenance tag") {
        std::vector<Segment> segs{make_constant_segment(1.0f, 0)};
        CHECK(fit_normalizer(segs).fitted_on == "train");
    }
}

TEST_CASE("contiguous split with boundary exclusion") {
    SUBCASE("10 segments -> 8 train / 1 test; raw sample ranges stay disjoint") {
        Recording rec = noise_recording("s", 1024 + 9 * 512); // exactly 10 segments
        auto segs = segment_recording(rec);
        REQUIRE(segs.size() == 10);
        RecordingSplit split = split_recording_segments(segs, 0.8, 0.5);
        CHECK(split.train.size() == 8);
        CHECK(split.test.size() == 1);

        // Overlap audit: the raw index range [512j, 512j+1024) of any train
        // segment must not intersect any test segment's range.
        int64_t train_max_end = 0;
        for (const Segment& s : split.train)
            train_max_end = std::max(train_max_end, static_cast<int64_t>(s.index) * 512 + 1024);
        for (const Segment& s : split.test) CHECK(static_cast<int64_t>(s.index) * 512 >= train_max_end);
    }

    SUBCASE("487 segments -> 390 train / 96 test") {
        Recording rec = noise_recording("s", 250000);
        auto segs = segment_recording(rec);
        RecordingSplit split = split_recording_segments(segs, 0.8, 0.5);
        CHECK(split.train.size() == 390);
        CHECK(split.test.size() == 96);
    }

    SUBCASE("train_fraction 1.0 leaves the test side empty and errors") {
        Recording rec = noise_recording("s", 25000);
        auto segs = segment_recording(rec);
        CHECK_THROWS_WITH_AS(split_dataset({segs}, 1, 1.0), doctest::Contains("test set is empty"),
                             std::invalid_argument);
    }

    SUBCASE("degenerate recording goes wholly to train with a warning") {
        Recording big = noise_recording("big", 25000, 2, 0);
        Recording tiny = noise_recording("tiny", 1024, 2, 1);
        std::vector<std::string> warnings;
        SplitDataset data = split_dataset({segment_recording(big), segment_recording(tiny)}, 2, 0.8, 0.5,
                                          Domain::source, true, &warnings);
        REQUIRE(warnings.size() == 1);
        CHECK(warnings[0].find("tiny") != std::string::npos);
        bool tiny_in_test = false;
        for (const Segment& s : data.test.segments) tiny_in_test = tiny_in_test || s.source_id == "tiny";
        CHECK_FALSE(tiny_in_test);
    }

    SUBCASE("windows are rebuilt per side and never span the boundary") {
        Recording rec = noise_recording("s", 25000);
        SplitDataset data = split_dataset({segment_recording(rec)}, 1, 0.8);
        // 47 segments -> 38 train / 8 test; windows: 34 / 4.
        CHECK(data.train.segments.size() == 38);
        CHECK(data.test.segments.size() == 8);
        CHECK(data.train.windows.size() == 34);
        CHECK(data.test.windows.size() == 4);
        for (const TemporalWindow& w : data.train.windows) CHECK(w.center_index <= 35);
        for (const TemporalWindow& w : data.test.windows) CHECK(w.center_index >= 41);
    }
}

TEST_CASE("normalizer statistics come from the train side only") {
    Recording rec = noise_recording("s", 25000);
    auto segs = segment_recording(rec);
    RecordingSplit split = split_recording_segments(segs, 0.8, 0.5);
    const NormStats train_only = fit_normalizer(split.train);
    SplitDataset data = split_dataset({segs}, 1, 0.8);
    CHECK(data.train.norm_stats.mean[0] == train_only.mean[0]);
    CHECK(data.train.norm_stats.stddev[0] == train_only.stddev[0]);
    CHECK(data.test.norm_stats.mean[0] == train_only.mean[0]); // test reuses train stats
    CHECK(data.train.norm_stats.fitted_on == "train");
}

TEST_CASE("synthetic generator") {
    SUBCASE("same seed is bit-identical, different seed is not") {
        SynthSpec spec = SynthSpec::confusable_pairs_default();
        spec.recordings_per_class = 1;
        spec.recording_len = 8192;
        auto a = synth_generate(spec, 7);
        auto b = synth_generate(spec, 7);
        auto c = synth_generate(spec, 8);
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].data == b[i].data);
        CHECK(a[0].data != c[0].data);
    }

    SUBCASE("modulation period at or below one segment is rejected") {
        SynthSpec spec = SynthSpec::confusable_pairs_default();
        spec.mod_period_segments = {1.0, 2.0, 4.0, 2.0};
        CHECK_THROWS_WITH_AS(synth_generate(spec, 1), doctest::Contains("modulation period"),
                             std::invalid_argument);
    }

    SUBCASE("confusable pair: mean per-segment variance differs by < 1% at zero noise") {
        SynthSpec spec = SynthSpec::confusable_pairs_default();
        spec.noise_level = 0.0;
        spec.recordings_per_class = 6;
        spec.recording_len = 24576; // integer envelope cycles for both periods
        auto recordings = synth_generate(spec, 11);

        auto mean_segment_variance = [&](int cls) {
            double sum = 0.0;
            int64_t n = 0;
            for (const Recording& rec : recordings) {
                if (rec.label != cls) continue;
                for (const Segment& s : segment_recording(rec)) {
                    double m = 0.0, m2 = 0.0;
                    for (int t = 0; t < 1024; ++t) {
                        m += s.data[static_cast<size_t>(t)];
                        m2 += static_cast<double>(s.data[static_cast<size_t>(t)]) * s.data[static_cast<size_t>(t)];
                    }
                    m /= 1024.0;
                    sum += m2 / 1024.0 - m * m;
                    ++n;
                }
            }
            return sum / static_cast<double>(n);
        };

        const double v0 = mean_segment_variance(0);
        const double v1 = mean_segment_variance(1); // confusable with class 0
        CHECK(std::abs(v0 - v1) / v0 < 0.01);
    }

    SUBCASE("five-segment window envelope spectrum peaks at the class's modulation rate") {
        SynthSpec spec = SynthSpec::confusable_pairs_default();
        spec.noise_level = 0.0;
        spec.recordings_per_class = 2;
        spec.recording_len = 16384;
        auto recordings = synth_generate(spec, 3);

        const double f_slow = 1.0 / 4096.0; // classes 0 and 2
        const double f_fast = 1.0 / 2048.0; // classes 1 and 3
        for (const Recording& rec : recordings) {
            auto windows = build_windows(segment_recording(rec));
            REQUIRE(!windows.empty());
            const bool slow = rec.label == 0 || rec.label == 2;
            double own_sum = 0.0, other_sum = 0.0;
            for (const TemporalWindow& w : windows) {
                const auto span = window_raw_span(w);
                own_sum += envelope_dft_magnitude(span, slow ? f_slow : f_fast);
                other_sum += envelope_dft_magnitude(span, slow ? f_fast : f_slow);
            }
            // The class's own modulation line dominates in every recording.
            CHECK(own_sum > 1.5 * other_sum);
        }
    }
}

TEST_CASE("TRAW round trip and error reporting") {
    const fs::path path = temp_path("roundtrip.traw");

    SUBCASE("write -> load reproduces the matrix exactly") {
        Recording rec = noise_recording("roundtrip", 2048, 2, 3);
        write_traw(path, rec);
        Recording loaded = load_recording(path);
        CHECK(loaded.channels == 2);
        CHECK(loaded.samples == 2048);
        CHECK(loaded.sample_rate_hz == rec.sample_rate_hz);
        CHECK(loaded.label == 3);
        CHECK(loaded.data == rec.data);
        CHECK(loaded.id == path.stem().string());
    }

    SUBCASE("truncated file names expected vs actual byte count") {
        Recording rec = noise_recording("trunc", 512, 2, 0);
        write_traw(path, rec);
        const auto full = fs::file_size(path);
        fs::resize_file(path, full - 100);
        CHECK_THROWS_WITH_AS(load_recording(path), doctest::Contains("expected"), std::runtime_error);
    }

    SUBCASE("bad magic is rejected") {
        std::ofstream out(path, std::ios::binary);
        out << "NOTATRAWFILE................................";
        out.close();
        CHECK_THROWS_WITH_AS(load_recording(path), doctest::Contains("magic"), std::runtime_error);
    }

    SUBCASE("non-finite samples are rejected") {
        Recording rec = noise_recording("nan", 256, 2, 0);
        rec.data[100] = std::numeric_limits<float>::quiet_NaN();
        write_traw(path, rec);
        CHECK_THROWS_WITH_AS(load_recording(path), doctest::Contains("non-finite"), std::runtime_error);
    }

    fs::remove(path);
}

TEST_CASE("CSV recording loader") {
    const fs::path path = temp_path("rec.csv");
    {
        std::ofstream out(path);
        out << "ch0,ch1\n";
        for (int t = 0; t < 100; ++t) out << t * 0.5 << "," << -t * 0.25 << "\n";
    }
    Recording rec = load_recording_csv(path, 1000, 2);
    CHECK(rec.channels == 2);
    CHECK(rec.samples == 100);
    CHECK(rec.label == 2);
    CHECK(rec.at(0, 4) == doctest::Approx(2.0));
    CHECK(rec.at(1, 4) == doctest::Approx(-1.0));

    {
        std::ofstream out(path);
        out << "ch0,ch1\n1.0,2.0\n3.0\n";
    }
    CHECK_THROWS_WITH_AS(load_recording_csv(path, 1000), doctest::Contains("columns"), std::runtime_error);
    fs::remove(path);
}

TEST_SUITE_END();
