#include "tcmkd/dataset_store.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

namespace tcmkd {

using json = nlohmann::json;

namespace {

constexpr char kSegMagic[8] = {'T', 'S', 'E', 'G', '0', '0', '0', '1'};

void put_u32(std::ofstream& out, uint32_t v) {
    const uint8_t b[4] = {static_cast<uint8_t>(v & 0xff), static_cast<uint8_t>((v >> 8) & 0xff),
                          static_cast<uint8_t>((v >> 16) & 0xff), static_cast<uint8_t>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t take_u32(const uint8_t*& p, const uint8_t* end, const std::string& ctx) {
    if (p + 4 > end) throw std::runtime_error("load_dataset: truncated " + ctx);
    const uint32_t v = static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
                       static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
    p += 4;
    return v;
}

void write_segments(const std::filesystem::path& path, const std::vector<Segment>& segments) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + path.string());
    out.write(kSegMagic, 8);
    put_u32(out, static_cast<uint32_t>(segments.size()));
    for (const Segment& s : segments) {
        put_u32(out, static_cast<uint32_t>(s.source_id.size()));
        out.write(s.source_id.data(), static_cast<std::streamsize>(s.source_id.size()));
        put_u32(out, static_cast<uint32_t>(s.index));
        put_u32(out, static_cast<uint32_t>(s.label));
        put_u32(out, static_cast<uint32_t>(s.data.size()));
        out.write(reinterpret_cast<const char*>(s.data.data()),
                  static_cast<std::streamsize>(s.data.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("save_dataset: write failed for " + path.string());
}

std::vector<Segment> read_segments(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_dataset: cannot open " + path.string());
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const uint8_t* p = buf.data();
    const uint8_t* end = buf.data() + buf.size();
    if (buf.size() < 12 || std::memcmp(p, kSegMagic, 8) != 0)
        throw std::runtime_error("load_dataset: " + path.string() + " is not a segment file");
    p += 8;
    const uint32_t count = take_u32(p, end, "segment count");
    std::vector<Segment> segments;
    segments.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        Segment s;
        const uint32_t id_len = take_u32(p, end, "source id");
        if (p + id_len > end) throw std::runtime_error("load_dataset: truncated source id");
        s.source_id.assign(reinterpret_cast<const char*>(p), id_len);
        p += id_len;
        s.index = static_cast<int32_t>(take_u32(p, end, "index"));
        s.label = static_cast<int32_t>(take_u32(p, end, "label"));
        const uint32_t len = take_u32(p, end, "data length");
        if (p + static_cast<size_t>(len) * 4 > end) throw std::runtime_error("load_dataset: truncated segment data");
        s.data.resize(len);
        std::memcpy(s.data.data(), p, static_cast<size_t>(len) * 4);
        p += static_cast<size_t>(len) * 4;
        segments.push_back(std::move(s));
    }
    return segments;
}

// Group a flat (already ordered) segment list back into per-recording runs
// and rebuild windows.
std::vector<TemporalWindow> rebuild_windows(const std::vector<Segment>& segments) {
    std::vector<TemporalWindow> windows;
    size_t run_start = 0;
    for (size_t i = 1; i <= segments.size(); ++i) {
        const bool boundary = i == segments.size() || segments[i].source_id != segments[run_start].source_id ||
                              segments[i].index != segments[i - 1].index + 1;
        if (!boundary) continue;
        std::vector<Segment> run(segments.begin() + static_cast<std::ptrdiff_t>(run_start),
                                 segments.begin() + static_cast<std::ptrdiff_t>(i));
        auto w = build_windows(run);
        windows.insert(windows.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
        run_start = i;
    }
    return windows;
}

json stats_to_json(const NormStats& s) {
    return {{"mean", std::vector<double>(s.mean.begin(), s.mean.end())},
            {"stddev", std::vector<double>(s.stddev.begin(), s.stddev.end())},
            {"fitted_on", s.fitted_on},
            {"sample_count", s.sample_count}};
}

NormStats stats_from_json(const json& j) {
    NormStats s;
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto stddev = j.at("stddev").get<std::vector<double>>();
    for (int c = 0; c < kNumChannels; ++c) {
        s.mean[static_cast<size_t>(c)] = mean.at(static_cast<size_t>(c));
        s.stddev[static_cast<size_t>(c)] = stddev.at(static_cast<size_t>(c));
    }
    s.fitted_on = j.value("fitted_on", std::string());
    s.sample_count = j.value("sample_count", int64_t(0));
    return s;
}

} // namespace

void save_dataset(const std::filesystem::path& dir, const SplitDataset& data, bool has_windows, bool split) {
    std::filesystem::create_directories(dir);
    write_segments(dir / "train_segments.bin", data.train.segments);
    if (split) write_segments(dir / "test_segments.bin", data.test.segments);

    json meta = {
        {"format_version", 1},
        {"num_classes", data.train.num_classes},
        {"domain", data.train.domain_tag == Domain::source ? "source" : "target"},
        {"has_windows", has_windows},
        {"split", split},
        {"norm_stats", stats_to_json(data.train.norm_stats)},
        {"counts",
         {{"train_segments", data.train.segments.size()},
          {"train_windows", data.train.windows.size()},
          {"test_segments", data.test.segments.size()},
          {"test_windows", data.test.windows.size()}}},
    };
    std::ofstream out(dir / "dataset.json", std::ios::binary);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + (dir / "dataset.json").string());
    out << meta.dump(2) << '\n';
}

StoredDataset load_dataset(const std::filesystem::path& dir) {
    const std::filesystem::path meta_path = dir / "dataset.json";
    std::ifstream in(meta_path);
    if (!in) throw std::runtime_error("load_dataset: missing " + meta_path.string());
    json meta;
    try {
        in >> meta;
    } catch (const json::exception& e) {
        throw std::runtime_error("load_dataset: bad " + meta_path.string() + ": " + e.what());
    }

    StoredDataset stored;
    stored.has_windows = meta.value("has_windows", true);
    stored.split = meta.value("split", true);
    stored.domain = meta.value("domain", std::string("source"));

    const Domain domain = stored.domain == "target" ? Domain::target : Domain::source;
    const int num_classes = meta.at("num_classes").get<int>();
    const NormStats stats = stats_from_json(meta.at("norm_stats"));

    auto load_side = [&](const std::filesystem::path& path) {
        LabeledDataset side;
        side.num_classes = num_classes;
        side.norm_stats = stats;
        side.domain_tag = domain;
        side.segments = read_segments(path);
        if (stored.has_windows) side.windows = rebuild_windows(side.segments);
        return side;
    };

    stored.data.train = load_side(dir / "train_segments.bin");
    if (stored.split)
        stored.data.test = load_side(dir / "test_segments.bin");
    else {
        stored.data.test.num_classes = num_classes;
        stored.data.test.norm_stats = stats;
        stored.data.test.domain_tag = domain;
    }
    return stored;
}

} // namespace tcmkd
