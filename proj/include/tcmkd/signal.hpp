#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tcmkd {

inline constexpr int kSegmentLen = 1024;
inline constexpr int kNumChannels = 2;
inline constexpr int kWindowSegments = 5;
inline constexpr int kWindowLen = kSegmentLen * kWindowSegments;

// Raw multi-channel acquisition. Samples are channel-major: data[c*samples + t].
struct Recording {
    std::string id;
    uint32_t sample_rate_hz = 0;
    int channels = 0;
    int64_t samples = 0;
    std::vector<float> data;
    int label = -1; // -1 = unlabeled

    float at(int c, int64_t t) const { return data[static_cast<size_t>(c) * samples + t]; }
};

// One 2 x 1024 slice; the student/baseline input. Channel-major data.
struct Segment {
    std::string source_id;
    int index = 0;
    std::vector<float> data; // 2 * 1024
    int label = -1;
};

// Five consecutive segments concatenated to 2 x 5120, labeled by the
// central segment. Channel-major: data[c*5120 + t].
struct TemporalWindow {
    std::string source_id;
    int center_index = 0;
    std::vector<float> data; // 2 * 5120
    int label = -1;
};

struct NormStats {
    std::array<double, kNumChannels> mean{};
    std::array<double, kNumChannels> stddev{};
    std::string fitted_on;      // provenance tag, e.g. "train"
    int64_t sample_count = 0;
};

enum class Domain { source, target };

struct LabeledDataset {
    std::vector<Segment> segments;
    std::vector<TemporalWindow> windows;
    int num_classes = 0;
    NormStats norm_stats;
    Domain domain_tag = Domain::source;
};

struct SplitDataset {
    LabeledDataset train;
    LabeledDataset test;
};

// --- segmentation -----------------------------------------------------------

// Slices two channels (by default the first two) into overlapping segments.
// hop = round(seg_len * (1 - overlap_fraction)); count = floor((L - seg_len)/hop) + 1.
std::vector<Segment> segment_recording(const Recording& rec, int seg_len = kSegmentLen,
                                       double overlap_fraction = 0.5,
                                       std::array<int, kNumChannels> channels = {0, 1});

// One window per center index i with 2 <= i <= N-3; boundary segments are
// dropped. Segments must share a source and be consecutive by index.
std::vector<TemporalWindow> build_windows(const std::vector<Segment>& segments);

int64_t expected_segment_count(int64_t samples, int seg_len = kSegmentLen, double overlap_fraction = 0.5);
int64_t expected_window_count(int64_t num_segments);

// --- normalization ----------------------------------------------------------

NormStats fit_normalizer(const std::vector<Segment>& train_segments,
                         std::vector<std::string>* warnings = nullptr);
Segment apply_normalizer(const Segment& s, const NormStats& stats);
TemporalWindow apply_normalizer(const TemporalWindow& w, const NormStats& stats);

// --- splitting --------------------------------------------------------------

struct RecordingSplit {
    std::vector<Segment> train;
    std::vector<Segment> test;
};

// Contiguous split within one recording: first ceil(f*N) segments train,
// remainder test; with overlap > 0 the first test segment is dropped so no
// raw sample is shared across the boundary. A recording whose test side
// comes out empty is assigned wholly to train (with a warning).
RecordingSplit split_recording_segments(const std::vector<Segment>& segments, double train_fraction,
                                        double overlap_fraction, std::vector<std::string>* warnings = nullptr);

// Split every recording, fit the normalizer on the train side only,
// normalize both sides and rebuild windows per side per recording.
SplitDataset split_dataset(const std::vector<std::vector<Segment>>& per_recording, int num_classes,
                           double train_fraction = 0.8, double overlap_fraction = 0.5,
                           Domain domain = Domain::source, bool with_windows = true,
                           std::vector<std::string>* warnings = nullptr);

// Normalize and window a set of recordings without splitting (used for
// unlabeled target-domain data).
LabeledDataset assemble_unsplit(const std::vector<std::vector<Segment>>& per_recording, int num_classes,
                                Domain domain = Domain::target, bool with_windows = true,
                                std::vector<std::string>* warnings = nullptr);

// --- synthetic generator ----------------------------------------------------

// Desk-scale stand-in for proprietary recordings. Each class emits a carrier
// sinusoid under a class-specific amplitude-modulation envelope whose period
// exceeds one segment, so confusable class pairs (same carrier, same
// modulation depth, different modulation period) have near-identical
// single-segment statistics while five-segment windows expose the envelope
// rate. Fully determined by the seed.
struct SynthSpec {
    int num_classes = 4;
    int recordings_per_class = 10;
    int64_t recording_len = 24576;
    uint32_t sample_rate_hz = 25000;
    double noise_level = 0.2;
    int segment_len = kSegmentLen;
    double mod_depth = 0.5;
    // Random-walk std of the carrier phase in radians per sample. Models
    // shaft speed jitter; also prevents a contiguous train/test split from
    // leaking recording identity through a frozen carrier phase.
    double carrier_phase_jitter = 0.01;
    // Per class; defaults pair classes {0,1} and {2,3} on shared carriers
    // with modulation periods of 4 and 2 segment lengths.
    std::vector<double> carrier_freqs;         // cycles per sample
    std::vector<double> mod_period_segments;   // in units of segment_len, must be > 1

    static SynthSpec confusable_pairs_default();
};

std::vector<Recording> synth_generate(const SynthSpec& spec, uint64_t seed);

// --- TRAW file format -------------------------------------------------------
//
// 24-byte header: magic "TRAW0001" (8 bytes ASCII), u32 LE channel count,
// u32 LE samples per channel, u32 LE sample rate (Hz), i32 LE label
// (-1 = unlabeled), followed by channel-major little-endian float32 samples.

void write_traw(const std::filesystem::path& path, const Recording& rec);
Recording load_recording(const std::filesystem::path& path);

// CSV with one column per channel and a header row.
Recording load_recording_csv(const std::filesystem::path& path, uint32_t sample_rate_hz, int label = -1);

} // namespace tcmkd
