#include "tcmkd/signal.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "tcmkd/rng.hpp"

namespace tcmkd {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void warn(std::vector<std::string>* sink, const std::string& msg) {
    if (sink) sink->push_back(msg);
}

int hop_of(int seg_len, double overlap_fraction) {
    const int hop = static_cast<int>(std::llround(seg_len * (1.0 - overlap_fraction)));
    return std::max(hop, 1);
}

} // namespace

int64_t expected_segment_count(int64_t samples, int seg_len, double overlap_fraction) {
    if (seg_len < 1) throw std::invalid_argument("expected_segment_count: segment length must be positive");
    if (samples < seg_len) return 0;
    const int hop = hop_of(seg_len, overlap_fraction);
    return (samples - seg_len) / hop + 1;
}

int64_t expected_window_count(int64_t num_segments) {
    return std::max<int64_t>(num_segments - (kWindowSegments - 1), 0);
}

std::vector<Segment> segment_recording(const Recording& rec, int seg_len, double overlap_fraction,
                                       std::array<int, kNumChannels> channels) {
    if (seg_len < 1) throw std::invalid_argument("segment_recording: segment length must be positive");
    if (rec.channels < kNumChannels)
        throw std::invalid_argument("segment_recording: recording '" + rec.id + "' has " +
                                    std::to_string(rec.channels) + " channels, need at least " +
                                    std::to_string(kNumChannels));
    for (int c : channels)
        if (c < 0 || c >= rec.channels)
            throw std::invalid_argument("segment_recording: channel " + std::to_string(c) +
                                        " out of range for recording '" + rec.id + "' with " +
                                        std::to_string(rec.channels) + " channels");
    if (overlap_fraction < 0.0 || overlap_fraction >= 1.0)
        throw std::invalid_argument("segment_recording: overlap_fraction must be in [0,1)");
    if (rec.samples < seg_len)
        throw std::invalid_argument("segment_recording: recording '" + rec.id + "' has " +
                                    std::to_string(rec.samples) + " samples, shorter than segment length " +
                                    std::to_string(seg_len) + "; would produce no segments");

    const int hop = hop_of(seg_len, overlap_fraction);
    const int64_t count = (rec.samples - seg_len) / hop + 1;

    std::vector<Segment> out;
    out.reserve(static_cast<size_t>(count));
    for (int64_t j = 0; j < count; ++j) {
        Segment s;
        s.source_id = rec.id;
        s.index = static_cast<int>(j);
        s.label = rec.label;
        s.data.resize(static_cast<size_t>(kNumChannels) * seg_len);
        const int64_t start = j * hop;
        for (int c = 0; c < kNumChannels; ++c)
            std::memcpy(s.data.data() + static_cast<size_t>(c) * seg_len,
                        rec.data.data() + static_cast<size_t>(channels[static_cast<size_t>(c)]) * rec.samples + start,
                        sizeof(float) * static_cast<size_t>(seg_len));
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<TemporalWindow> build_windows(const std::vector<Segment>& segments) {
    const int64_t n = static_cast<int64_t>(segments.size());
    std::vector<TemporalWindow> out;
    if (n == 0) return out;

    const int seg_len = static_cast<int>(segments[0].data.size()) / kNumChannels;
    for (int64_t i = 1; i < n; ++i) {
        if (segments[i].source_id != segments[0].source_id)
            throw std::invalid_argument("build_windows: mixed source ids '" + segments[0].source_id + "' and '" +
                                        segments[i].source_id + "'");
        if (segments[i].index != segments[i - 1].index + 1)
            throw std::invalid_argument("build_windows: non-consecutive segment indices " +
                                        std::to_string(segments[i - 1].index) + " -> " +
                                        std::to_string(segments[i].index));
    }

    const int64_t count = expected_window_count(n);
    out.reserve(static_cast<size_t>(count));
    const int half = kWindowSegments / 2;
    for (int64_t i = half; i + half < n; ++i) {
        TemporalWindow w;
        const Segment& center = segments[static_cast<size_t>(i)];
        w.source_id = center.source_id;
        w.center_index = center.index;
        w.label = center.label;
        w.data.resize(static_cast<size_t>(kNumChannels) * seg_len * kWindowSegments);
        for (int c = 0; c < kNumChannels; ++c)
            for (int k = 0; k < kWindowSegments; ++k) {
                const Segment& part = segments[static_cast<size_t>(i - half + k)];
                std::memcpy(w.data.data() + (static_cast<size_t>(c) * kWindowSegments + k) * seg_len,
                            part.data.data() + static_cast<size_t>(c) * seg_len,
                            sizeof(float) * static_cast<size_t>(seg_len));
            }
        out.push_back(std::move(w));
    }
    return out;
}

NormStats fit_normalizer(const std::vector<Segment>& train_segments, std::vector<std::string>* warnings) {
    if (train_segments.empty()) throw std::invalid_argument("fit_normalizer: training set is empty");
    const size_t seg_len = train_segments[0].data.size() / kNumChannels;

    NormStats stats;
    stats.fitted_on = "train";
    std::array<double, kNumChannels> sum{};
    std::array<double, kNumChannels> sumsq{};
    int64_t per_channel = 0;
    for (const Segment& s : train_segments) {
        for (int c = 0; c < kNumChannels; ++c) {
            const float* row = s.data.data() + static_cast<size_t>(c) * seg_len;
            for (size_t t = 0; t < seg_len; ++t) {
                sum[c] += row[t];
                sumsq[c] += static_cast<double>(row[t]) * row[t];
            }
        }
        per_channel += static_cast<int64_t>(seg_len);
    }
    stats.sample_count = per_channel;
    for (int c = 0; c < kNumChannels; ++c) {
        stats.mean[c] = sum[c] / static_cast<double>(per_channel);
        const double var = std::max(sumsq[c] / static_cast<double>(per_channel) - stats.mean[c] * stats.mean[c], 0.0);
        double sd = std::sqrt(var);
        if (sd < 1e-8) {
            warn(warnings, "fit_normalizer: channel " + std::to_string(c) +
                               " has near-zero variance; std clamped to 1e-8");
            sd = 1e-8;
        }
        stats.stddev[c] = sd;
    }
    return stats;
}

namespace {

void normalize_block(std::vector<float>& data, size_t len_per_channel, const NormStats& stats) {
    for (int c = 0; c < kNumChannels; ++c) {
        float* row = data.data() + static_cast<size_t>(c) * len_per_channel;
        const double mean = stats.mean[c];
        const double inv = 1.0 / stats.stddev[c];
        for (size_t t = 0; t < len_per_channel; ++t)
            row[t] = static_cast<float>((static_cast<double>(row[t]) - mean) * inv);
    }
}

} // namespace

Segment apply_normalizer(const Segment& s, const NormStats& stats) {
    Segment out = s;
    normalize_block(out.data, out.data.size() / kNumChannels, stats);
    return out;
}

TemporalWindow apply_normalizer(const TemporalWindow& w, const NormStats& stats) {
    TemporalWindow out = w;
    normalize_block(out.data, out.data.size() / kNumChannels, stats);
    return out;
}

RecordingSplit split_recording_segments(const std::vector<Segment>& segments, double train_fraction,
                                        double overlap_fraction, std::vector<std::string>* warnings) {
    if (train_fraction <= 0.0 || train_fraction > 1.0)
        throw std::invalid_argument("split_recording_segments: train_fraction must be in (0,1]");
    RecordingSplit split;
    const int64_t n = static_cast<int64_t>(segments.size());
    if (n == 0) return split;

    int64_t n_train = static_cast<int64_t>(std::ceil(train_fraction * static_cast<double>(n)));
    n_train = std::min(n_train, n);
    int64_t test_begin = n_train;
    if (overlap_fraction > 0.0 && test_begin < n) test_begin += 1; // boundary segment shares raw samples with train

    if (test_begin >= n) {
        if (n_train < n || overlap_fraction > 0.0)
            warn(warnings, "split_dataset: recording '" + segments[0].source_id +
                               "' contributes no test segments; assigned wholly to train");
        split.train = segments;
        return split;
    }
    split.train.assign(segments.begin(), segments.begin() + static_cast<size_t>(n_train));
    split.test.assign(segments.begin() + static_cast<size_t>(test_begin), segments.end());
    return split;
}

namespace {

LabeledDataset make_side(std::vector<std::vector<Segment>> per_recording, int num_classes, const NormStats& stats,
                         Domain domain, bool with_windows) {
    LabeledDataset side;
    side.num_classes = num_classes;
    side.norm_stats = stats;
    side.domain_tag = domain;
    for (auto& rec_segments : per_recording) {
        if (rec_segments.empty()) continue;
        for (Segment& s : rec_segments) s = apply_normalizer(s, stats);
        if (with_windows) {
            auto windows = build_windows(rec_segments);
            side.windows.insert(side.windows.end(), std::make_move_iterator(windows.begin()),
                                std::make_move_iterator(windows.end()));
        }
        side.segments.insert(side.segments.end(), std::make_move_iterator(rec_segments.begin()),
                             std::make_move_iterator(rec_segments.end()));
    }
    return side;
}

void check_labels(const std::vector<std::vector<Segment>>& per_recording, int num_classes) {
    if (num_classes < 1) throw std::invalid_argument("dataset: num_classes must be positive");
    for (const auto& rec : per_recording)
        for (const Segment& s : rec)
            if (s.label >= num_classes)
                throw std::invalid_argument("dataset: segment label " + std::to_string(s.label) +
                                            " >= num_classes " + std::to_string(num_classes));
}

} // namespace

SplitDataset split_dataset(const std::vector<std::vector<Segment>>& per_recording, int num_classes,
                           double train_fraction, double overlap_fraction, Domain domain, bool with_windows,
                           std::vector<std::string>* warnings) {
    check_labels(per_recording, num_classes);

    std::vector<std::vector<Segment>> train_rec, test_rec;
    for (const auto& rec_segments : per_recording) {
        RecordingSplit split =
            split_recording_segments(rec_segments, train_fraction, overlap_fraction, warnings);
        train_rec.push_back(std::move(split.train));
        test_rec.push_back(std::move(split.test));
    }

    std::vector<Segment> all_train;
    for (const auto& r : train_rec) all_train.insert(all_train.end(), r.begin(), r.end());
    if (all_train.empty()) throw std::invalid_argument("split_dataset: no training segments");
    bool any_test = false;
    for (const auto& r : test_rec) any_test = any_test || !r.empty();
    if (!any_test) throw std::invalid_argument("split_dataset: test set is empty (train_fraction too high)");

    const NormStats stats = fit_normalizer(all_train, warnings);

    SplitDataset out;
    out.train = make_side(std::move(train_rec), num_classes, stats, domain, with_windows);
    out.test = make_side(std::move(test_rec), num_classes, stats, domain, with_windows);
    return out;
}

LabeledDataset assemble_unsplit(const std::vector<std::vector<Segment>>& per_recording, int num_classes,
                                Domain domain, bool with_windows, std::vector<std::string>* warnings) {
    check_labels(per_recording, num_classes);
    std::vector<Segment> all;
    for (const auto& r : per_recording) all.insert(all.end(), r.begin(), r.end());
    if (all.empty()) throw std::invalid_argument("assemble_unsplit: no segments");
    const NormStats stats = fit_normalizer(all, warnings);
    return make_side(per_recording, num_classes, stats, domain, with_windows);
}

SynthSpec SynthSpec::confusable_pairs_default() {
    SynthSpec spec;
    spec.carrier_freqs = {0.05, 0.05, 0.113, 0.113};
    spec.mod_period_segments = {4.0, 2.0, 4.0, 2.0};
    return spec;
}

std::vector<Recording> synth_generate(const SynthSpec& spec, uint64_t seed) {
    SynthSpec s = spec;
    if (s.carrier_freqs.empty() || s.mod_period_segments.empty()) {
        const SynthSpec defaults = SynthSpec::confusable_pairs_default();
        if (s.carrier_freqs.empty()) s.carrier_freqs = defaults.carrier_freqs;
        if (s.mod_period_segments.empty()) s.mod_period_segments = defaults.mod_period_segments;
    }
    if (s.num_classes < 1) throw std::invalid_argument("synth_generate: num_classes must be positive");
    if (static_cast<int>(s.carrier_freqs.size()) < s.num_classes ||
        static_cast<int>(s.mod_period_segments.size()) < s.num_classes)
        throw std::invalid_argument("synth_generate: per-class carrier_freqs / mod_period_segments required for " +
                                    std::to_string(s.num_classes) + " classes");
    for (int k = 0; k < s.num_classes; ++k)
        if (s.mod_period_segments[k] * s.segment_len <= s.segment_len)
            throw std::invalid_argument(
                "synth_generate: modulation period of class " + std::to_string(k) +
                " does not exceed one segment; single-segment statistics would separate the classes");

    std::vector<Recording> out;
    out.reserve(static_cast<size_t>(s.num_classes) * s.recordings_per_class);
    for (int k = 0; k < s.num_classes; ++k) {
        const double f_c = s.carrier_freqs[k];
        const double mod_period = s.mod_period_segments[k] * s.segment_len;
        for (int r = 0; r < s.recordings_per_class; ++r) {
            Rng rng(Rng::derive(seed, static_cast<uint64_t>(k) + 1, static_cast<uint64_t>(r) + 1));
            Recording rec;
            rec.id = "synth-c" + std::to_string(k) + "-r" + std::to_string(r);
            rec.sample_rate_hz = s.sample_rate_hz;
            rec.channels = kNumChannels;
            rec.samples = s.recording_len;
            rec.label = k;
            rec.data.resize(static_cast<size_t>(kNumChannels) * s.recording_len);

            const double env_phase = rng.uniform(0.0, kTwoPi);
            std::array<double, kNumChannels> carrier_phase{};
            for (int c = 0; c < kNumChannels; ++c) carrier_phase[c] = rng.uniform(0.0, kTwoPi);

            for (int c = 0; c < kNumChannels; ++c) {
                float* row = rec.data.data() + static_cast<size_t>(c) * s.recording_len;
                double phase = carrier_phase[c];
                for (int64_t t = 0; t < s.recording_len; ++t) {
                    const double envelope = 1.0 + s.mod_depth * std::sin(kTwoPi * t / mod_period + env_phase);
                    double v = envelope * std::sin(phase);
                    if (s.noise_level > 0.0) v += rng.normal(0.0, s.noise_level);
                    row[t] = static_cast<float>(v);
                    phase += kTwoPi * f_c;
                    if (s.carrier_phase_jitter > 0.0) phase += rng.normal(0.0, s.carrier_phase_jitter);
                    if (phase > kTwoPi) phase -= kTwoPi;
                }
            }
            out.push_back(std::move(rec));
        }
    }
    return out;
}

// --- TRAW -------------------------------------------------------------------

namespace {

constexpr char kTrawMagic[8] = {'T', 'R', 'A', 'W', '0', '0', '0', '1'};
constexpr size_t kTrawHeader = 24;

void put_u32(std::vector<uint8_t>& buf, uint32_t v) {
    buf.push_back(static_cast<uint8_t>(v & 0xff));
    buf.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
    buf.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
    buf.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

uint32_t get_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 | static_cast<uint32_t>(p[2]) << 16 |
           static_cast<uint32_t>(p[3]) << 24;
}

} // namespace

void write_traw(const std::filesystem::path& path, const Recording& rec) {
    if (rec.channels < 1 || rec.samples < 1)
        throw std::invalid_argument("write_traw: recording '" + rec.id + "' is empty");
    std::vector<uint8_t> buf;
    buf.reserve(kTrawHeader + rec.data.size() * 4);
    buf.insert(buf.end(), kTrawMagic, kTrawMagic + 8);
    put_u32(buf, static_cast<uint32_t>(rec.channels));
    put_u32(buf, static_cast<uint32_t>(rec.samples));
    put_u32(buf, rec.sample_rate_hz);
    put_u32(buf, static_cast<uint32_t>(rec.label));
    for (float v : rec.data) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32(buf, bits);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_traw: cannot open " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write_traw: write failed for " + path.string());
}

Recording load_recording(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_recording: cannot open " + path.string());
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < kTrawHeader)
        throw std::runtime_error("load_recording: " + path.string() + ": file too short for TRAW header (" +
                                 std::to_string(buf.size()) + " bytes, need " + std::to_string(kTrawHeader) + ")");
    if (std::memcmp(buf.data(), kTrawMagic, 8) != 0)
        throw std::runtime_error("load_recording: " + path.string() + ": bad magic, not a TRAW file");

    Recording rec;
    rec.channels = static_cast<int>(get_u32(buf.data() + 8));
    rec.samples = static_cast<int64_t>(get_u32(buf.data() + 12));
    rec.sample_rate_hz = get_u32(buf.data() + 16);
    rec.label = static_cast<int32_t>(get_u32(buf.data() + 20));
    rec.id = path.stem().string();

    if (rec.channels < 1 || rec.samples < 1)
        throw std::runtime_error("load_recording: " + path.string() + ": header declares " +
                                 std::to_string(rec.channels) + " channels x " + std::to_string(rec.samples) +
                                 " samples");
    const size_t expected = kTrawHeader + static_cast<size_t>(rec.channels) * rec.samples * 4;
    if (buf.size() != expected)
        throw std::runtime_error("load_recording: " + path.string() + ": expected " + std::to_string(expected) +
                                 " bytes (" + std::to_string(rec.channels) + " ch x " +
                                 std::to_string(rec.samples) + " samples), got " + std::to_string(buf.size()));

    rec.data.resize(static_cast<size_t>(rec.channels) * rec.samples);
    for (size_t i = 0; i < rec.data.size(); ++i) {
        const uint32_t bits = get_u32(buf.data() + kTrawHeader + i * 4);
        float v;
        std::memcpy(&v, &bits, 4);
        if (!std::isfinite(v))
            throw std::runtime_error("load_recording: " + path.string() + ": non-finite sample at flat index " +
                                     std::to_string(i));
        rec.data[i] = v;
    }
    return rec;
}

Recording load_recording_csv(const std::filesystem::path& path, uint32_t sample_rate_hz, int label) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_recording_csv: cannot open " + path.string());

    std::string line;
    if (!std::getline(in, line))
        throw std::runtime_error("load_recording_csv: " + path.string() + ": empty file");
    int channels = 1;
    for (char ch : line)
        if (ch == ',') ++channels;

    std::vector<std::vector<float>> columns(static_cast<size_t>(channels));
    int64_t row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        int col = 0;
        while (std::getline(ss, cell, ',')) {
            if (col >= channels)
                throw std::runtime_error("load_recording_csv: " + path.string() + ": row " + std::to_string(row_no) +
                                         " has more than " + std::to_string(channels) + " columns");
            try {
                const float v = std::stof(cell);
                if (!std::isfinite(v)) throw std::invalid_argument("non-finite");
                columns[static_cast<size_t>(col)].push_back(v);
            } catch (const std::exception&) {
                throw std::runtime_error("load_recording_csv: " + path.string() + ": row " + std::to_string(row_no) +
                                         " column " + std::to_string(col + 1) + ": cannot parse '" + cell + "'");
            }
            ++col;
        }
        if (col != channels)
            throw std::runtime_error("load_recording_csv: " + path.string() + ": row " + std::to_string(row_no) +
                                     " has " + std::to_string(col) + " columns, expected " + std::to_string(channels));
    }
    if (columns[0].empty()) throw std::runtime_error("load_recording_csv: " + path.string() + ": no sample rows");

    Recording rec;
    rec.id = path.stem().string();
    rec.sample_rate_hz = sample_rate_hz;
    rec.channels = channels;
    rec.samples = static_cast<int64_t>(columns[0].size());
    rec.label = label;
    rec.data.resize(static_cast<size_t>(channels) * rec.samples);
    for (int c = 0; c < channels; ++c)
        std::copy(columns[static_cast<size_t>(c)].begin(), columns[static_cast<size_t>(c)].end(),
                  rec.data.begin() + static_cast<size_t>(c) * rec.samples);
    return rec;
}

} // namespace tcmkd
