#include "tcmkd/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tcmkd/io.hpp"
#include "tcmkd/rng.hpp"

namespace tcmkd {

using json = nlohmann::json;

std::string variant_name(Variant v) { return v == Variant::narrow ? "narrow" : "wide"; }

ArchitectureSpec ArchitectureSpec::make(Variant v, int num_classes) {
    ArchitectureSpec spec;
    spec.variant = v;
    spec.in_channels = kNumChannels;
    spec.in_length = v == Variant::narrow ? kSegmentLen : kWindowLen;
    // Narrow: 1024 -> 64 -> 32 -> 16 -> 8 -> 4 -> 2 (conv stride 16 then pools).
    // Wide: first kernel and stride scaled by the window factor, 5120 -> 64,
    // identical from there on.
    const int factor = v == Variant::narrow ? 1 : kWindowSegments;
    spec.conv_stack = {
        {16, 64 * factor, 16 * factor, 2},
        {32, 3, 1, 2},
        {64, 3, 1, 2},
        {64, 3, 1, 2},
        {128, 3, 1, 2},
    };
    spec.mlp_hidden = {128, 64};
    spec.num_classes = num_classes;
    const std::vector<int> lengths = spec.stage_lengths();
    spec.latent_dim = spec.conv_stack.back().out_channels * lengths.back();
    return spec;
}

std::vector<int> ArchitectureSpec::stage_lengths() const {
    std::vector<int> lengths;
    int len = in_length;
    for (const ConvLayerSpec& layer : conv_stack) {
        len = (len + layer.stride - 1) / layer.stride; // same padding
        len = (len + layer.pool - 1) / layer.pool;     // non-overlapping max pool
        lengths.push_back(len);
    }
    return lengths;
}

namespace {

Tensor<float> he_uniform(Rng& rng, std::vector<int> shape, int fan_in) {
    Tensor<float> t(std::move(shape));
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (float& v : t.values) v = static_cast<float>(rng.uniform(-limit, limit));
    return t;
}

void init_params(Model& m, bool with_classifier) {
    Rng rng(m.rng_seed);
    const ArchitectureSpec& spec = m.spec;
    int in_ch = spec.in_channels;
    for (size_t i = 0; i < spec.conv_stack.size(); ++i) {
        const ConvLayerSpec& layer = spec.conv_stack[i];
        const std::string base = "conv" + std::to_string(i + 1);
        m.fe_params.emplace_back(base + ".weight",
                                 he_uniform(rng, {layer.out_channels, in_ch, layer.kernel}, in_ch * layer.kernel));
        m.fe_params.emplace_back(base + ".bias", Tensor<float>({layer.out_channels}));
        in_ch = layer.out_channels;
    }
    if (!with_classifier) return;
    int in_dim = spec.latent_dim;
    std::vector<int> dims = spec.mlp_hidden;
    dims.push_back(spec.num_classes);
    for (size_t i = 0; i < dims.size(); ++i) {
        const std::string base = "fc" + std::to_string(i + 1);
        m.clf_params.emplace_back(base + ".weight", he_uniform(rng, {dims[i], in_dim}, in_dim));
        m.clf_params.emplace_back(base + ".bias", Tensor<float>({dims[i]}));
        in_dim = dims[i];
    }
}

Model build_impl(Variant v, int num_classes, uint64_t seed, bool with_classifier) {
    if (num_classes < 2) throw std::invalid_argument("build_model: num_classes must be >= 2");
    Model m;
    m.spec = ArchitectureSpec::make(v, num_classes);
    m.rng_seed = seed;

    // Both variants must produce the same latent size or the distillation
    // MSE is ill-posed.
    const ArchitectureSpec narrow = ArchitectureSpec::make(Variant::narrow, num_classes);
    const ArchitectureSpec wide = ArchitectureSpec::make(Variant::wide, num_classes);
    if (narrow.latent_dim != wide.latent_dim)
        throw std::logic_error("build_model: narrow latent " + std::to_string(narrow.latent_dim) +
                               " != wide latent " + std::to_string(wide.latent_dim));

    init_params(m, with_classifier);
    return m;
}

} // namespace

Model build_model(Variant v, int num_classes, uint64_t seed) { return build_impl(v, num_classes, seed, true); }

Model build_feature_extractor(Variant v, int num_classes, uint64_t seed) {
    return build_impl(v, num_classes, seed, false);
}

std::vector<Parameter<float>*> Model::all_params() {
    std::vector<Parameter<float>*> out;
    for (auto& p : fe_params) out.push_back(&p);
    for (auto& p : clf_params) out.push_back(&p);
    return out;
}

std::vector<Parameter<float>*> Model::fe_param_ptrs() {
    std::vector<Parameter<float>*> out;
    for (auto& p : fe_params) out.push_back(&p);
    return out;
}

namespace {

FVar bind(Graph<float>& g, Parameter<float>& p, bool train) {
    return train ? g.param(p) : g.input(p.value);
}

} // namespace

FVar features_graph(Graph<float>& g, Model& model, FVar x, bool train) {
    const Tensor<float>& in = g.value(x);
    if (in.rank() != 3 || in.dim(1) != model.spec.in_channels || in.dim(2) != model.spec.in_length)
        throw std::invalid_argument("forward: " + variant_name(model.spec.variant) + " model expects [B," +
                                    std::to_string(model.spec.in_channels) + "," +
                                    std::to_string(model.spec.in_length) + "], got " + in.shape_str());
    FVar h = x;
    for (size_t i = 0; i < model.spec.conv_stack.size(); ++i) {
        const ConvLayerSpec& layer = model.spec.conv_stack[i];
        FVar w = bind(g, model.fe_params[2 * i], train);
        FVar b = bind(g, model.fe_params[2 * i + 1], train);
        h = g.conv1d(h, w, b, layer.stride, Padding::same);
        h = g.relu(h);
        h = g.max_pool1d(h, layer.pool);
    }
    return g.flatten(h);
}

FVar logits_graph(Graph<float>& g, Model& model, FVar z, bool train) {
    if (model.feature_extractor_only())
        throw std::logic_error("forward: model has no classifier head");
    FVar h = z;
    const size_t n_layers = model.clf_params.size() / 2;
    for (size_t i = 0; i < n_layers; ++i) {
        FVar w = bind(g, model.clf_params[2 * i], train);
        FVar b = bind(g, model.clf_params[2 * i + 1], train);
        h = g.linear(h, w, b);
        if (i + 1 < n_layers) h = g.relu(h);
    }
    return h;
}

Tensor<float> forward_features(const Model& model, const Tensor<float>& batch) {
    Graph<float> g;
    Model& m = const_cast<Model&>(model); // params bound read-only (train=false)
    FVar z = features_graph(g, m, g.input(batch), false);
    return g.value(z);
}

ClassifyResult forward_classify(const Model& model, const Tensor<float>& batch) {
    Graph<float> g;
    Model& m = const_cast<Model&>(model);
    FVar z = features_graph(g, m, g.input(batch), false);
    FVar logits = logits_graph(g, m, z, false);
    return {g.value(logits), g.softmax(logits)};
}

Tensor<float> batch_from_segments(const std::vector<Segment>& segments, size_t begin, size_t count) {
    if (count == 0 || begin + count > segments.size())
        throw std::out_of_range("batch_from_segments: bad range");
    const int len = static_cast<int>(segments[begin].data.size()) / kNumChannels;
    Tensor<float> batch({static_cast<int>(count), kNumChannels, len});
    for (size_t i = 0; i < count; ++i)
        std::memcpy(batch.values.data() + i * segments[begin + i].data.size(), segments[begin + i].data.data(),
                    sizeof(float) * segments[begin + i].data.size());
    return batch;
}

Tensor<float> batch_from_windows(const std::vector<TemporalWindow>& windows, size_t begin, size_t count) {
    if (count == 0 || begin + count > windows.size())
        throw std::out_of_range("batch_from_windows: bad range");
    const int len = static_cast<int>(windows[begin].data.size()) / kNumChannels;
    Tensor<float> batch({static_cast<int>(count), kNumChannels, len});
    for (size_t i = 0; i < count; ++i)
        std::memcpy(batch.values.data() + i * windows[begin + i].data.size(), windows[begin + i].data.data(),
                    sizeof(float) * windows[begin + i].data.size());
    return batch;
}

// --- checkpoints ------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'C', 'K', 'P', 'T', '0', '0', '0', '1'};
constexpr int kCkptVersion = 1;

json spec_to_json(const ArchitectureSpec& spec) {
    json layers = json::array();
    for (const ConvLayerSpec& l : spec.conv_stack)
        layers.push_back({{"out_channels", l.out_channels}, {"kernel", l.kernel}, {"stride", l.stride}, {"pool", l.pool}});
    return {
        {"variant", variant_name(spec.variant)},
        {"in_channels", spec.in_channels},
        {"in_length", spec.in_length},
        {"conv_stack", layers},
        {"latent_dim", spec.latent_dim},
        {"mlp_hidden", spec.mlp_hidden},
        {"num_classes", spec.num_classes},
    };
}

ArchitectureSpec spec_from_json(const json& j) {
    ArchitectureSpec spec;
    const std::string var = j.at("variant").get<std::string>();
    if (var == "narrow")
        spec.variant = Variant::narrow;
    else if (var == "wide")
        spec.variant = Variant::wide;
    else
        throw std::runtime_error("checkpoint: unknown variant '" + var + "'");
    spec.in_channels = j.at("in_channels").get<int>();
    spec.in_length = j.at("in_length").get<int>();
    for (const json& l : j.at("conv_stack"))
        spec.conv_stack.push_back({l.at("out_channels").get<int>(), l.at("kernel").get<int>(),
                                   l.at("stride").get<int>(), l.at("pool").get<int>()});
    spec.latent_dim = j.at("latent_dim").get<int>();
    spec.mlp_hidden = j.at("mlp_hidden").get<std::vector<int>>();
    spec.num_classes = j.at("num_classes").get<int>();
    return spec;
}

std::vector<uint8_t> tensor_bytes(const Tensor<float>& t) {
    std::vector<uint8_t> bytes(t.values.size() * 4);
    for (size_t i = 0; i < t.values.size(); ++i) {
        uint32_t bits;
        std::memcpy(&bits, &t.values[i], 4);
        bytes[i * 4] = static_cast<uint8_t>(bits & 0xff);
        bytes[i * 4 + 1] = static_cast<uint8_t>((bits >> 8) & 0xff);
        bytes[i * 4 + 2] = static_cast<uint8_t>((bits >> 16) & 0xff);
        bytes[i * 4 + 3] = static_cast<uint8_t>((bits >> 24) & 0xff);
    }
    return bytes;
}

} // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    json manifest = {
        {"format_version", kCkptVersion},
        {"spec", spec_to_json(model.spec)},
        {"rng_seed", model.rng_seed},
        {"provenance",
         {{"dataset_tag", model.provenance.dataset_tag},
          {"epochs", model.provenance.epochs},
          {"seed", model.provenance.seed}}},
    };

    json dir = json::array();
    std::vector<uint8_t> blob;
    auto append = [&](const Parameter<float>& p, const std::string& group) {
        const std::vector<uint8_t> bytes = tensor_bytes(p.value);
        dir.push_back({{"name", group + "." + p.name},
                       {"shape", p.value.shape},
                       {"offset", blob.size()},
                       {"crc32", crc32(bytes)}});
        blob.insert(blob.end(), bytes.begin(), bytes.end());
    };
    for (const Parameter<float>& p : model.fe_params) append(p, "fe");
    for (const Parameter<float>& p : model.clf_params) append(p, "clf");
    manifest["tensors"] = dir;

    const std::string manifest_str = manifest.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
    out.write(kCkptMagic, 8);
    const uint32_t mlen = static_cast<uint32_t>(manifest_str.size());
    const uint8_t lenb[4] = {static_cast<uint8_t>(mlen & 0xff), static_cast<uint8_t>((mlen >> 8) & 0xff),
                             static_cast<uint8_t>((mlen >> 16) & 0xff), static_cast<uint8_t>((mlen >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(lenb), 4);
    out.write(manifest_str.data(), static_cast<std::streamsize>(manifest_str.size()));
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 12 || std::memcmp(buf.data(), kCkptMagic, 8) != 0)
        throw std::runtime_error("load_checkpoint: " + path.string() + ": not a checkpoint file");
    const uint32_t mlen = static_cast<uint32_t>(buf[8]) | static_cast<uint32_t>(buf[9]) << 8 |
                          static_cast<uint32_t>(buf[10]) << 16 | static_cast<uint32_t>(buf[11]) << 24;
    if (buf.size() < 12 + static_cast<size_t>(mlen))
        throw std::runtime_error("load_checkpoint: " + path.string() + ": truncated manifest");

    json manifest;
    try {
        manifest = json::parse(buf.begin() + 12, buf.begin() + 12 + mlen);
    } catch (const json::exception& e) {
        throw std::runtime_error("load_checkpoint: " + path.string() + ": bad manifest: " + e.what());
    }

    const int version = manifest.at("format_version").get<int>();
    if (version != kCkptVersion)
        throw std::runtime_error("load_checkpoint: " + path.string() + ": format version " +
                                 std::to_string(version) + ", expected " + std::to_string(kCkptVersion));

    Model model;
    model.spec = spec_from_json(manifest.at("spec"));
    model.rng_seed = manifest.value("rng_seed", uint64_t(0));
    if (manifest.contains("provenance")) {
        const json& p = manifest["provenance"];
        model.provenance.dataset_tag = p.value("dataset_tag", std::string());
        model.provenance.epochs = p.value("epochs", 0);
        model.provenance.seed = p.value("seed", uint64_t(0));
    }

    const size_t data_start = 12 + mlen;
    for (const json& entry : manifest.at("tensors")) {
        const std::string full_name = entry.at("name").get<std::string>();
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        const size_t offset = entry.at("offset").get<size_t>();
        const uint32_t expected_crc = entry.at("crc32").get<uint32_t>();

        Tensor<float> t(shape);
        const size_t nbytes = t.values.size() * 4;
        if (data_start + offset + nbytes > buf.size())
            throw std::runtime_error("load_checkpoint: " + path.string() + ": tensor '" + full_name +
                                     "' extends past end of file (truncated?)");
        const uint8_t* src = buf.data() + data_start + offset;
        const uint32_t actual_crc = crc32(std::span<const uint8_t>(src, nbytes));
        if (actual_crc != expected_crc)
            throw std::runtime_error("load_checkpoint: " + path.string() + ": checksum mismatch for tensor '" +
                                     full_name + "'");
        for (size_t i = 0; i < t.values.size(); ++i) {
            const uint32_t bits = static_cast<uint32_t>(src[i * 4]) | static_cast<uint32_t>(src[i * 4 + 1]) << 8 |
                                  static_cast<uint32_t>(src[i * 4 + 2]) << 16 |
                                  static_cast<uint32_t>(src[i * 4 + 3]) << 24;
            std::memcpy(&t.values[i], &bits, 4);
        }

        const auto dot = full_name.find('.');
        const std::string group = full_name.substr(0, dot);
        const std::string name = full_name.substr(dot + 1);
        if (group == "fe")
            model.fe_params.emplace_back(name, std::move(t));
        else if (group == "clf")
            model.clf_params.emplace_back(name, std::move(t));
        else
            throw std::runtime_error("load_checkpoint: " + path.string() + ": unknown tensor group '" + group + "'");
    }

    // Validate shapes against the spec so a corrupted or hand-edited
    // manifest cannot produce a silently wrong model.
    Model expected = model.spec.num_classes >= 2 && !model.clf_params.empty()
                         ? build_model(model.spec.variant, model.spec.num_classes, 0)
                         : build_feature_extractor(model.spec.variant, std::max(model.spec.num_classes, 2), 0);
    auto check_group = [&](const std::vector<Parameter<float>>& got, const std::vector<Parameter<float>>& want,
                           const std::string& group) {
        if (got.size() != want.size())
            throw std::runtime_error("load_checkpoint: " + path.string() + ": " + group + " has " +
                                     std::to_string(got.size()) + " tensors, spec expects " +
                                     std::to_string(want.size()));
        for (size_t i = 0; i < got.size(); ++i)
            if (got[i].value.shape != want[i].value.shape || got[i].name != want[i].name)
                throw std::runtime_error("load_checkpoint: " + path.string() + ": tensor '" + got[i].name +
                                         "' shape " + got[i].value.shape_str() + " does not match spec (" +
                                         want[i].name + " " + want[i].value.shape_str() + ")");
    };
    check_group(model.fe_params, expected.fe_params, "feature extractor");
    if (!model.clf_params.empty()) check_group(model.clf_params, expected.clf_params, "classifier");

    return model;
}

Model load_checkpoint(const std::filesystem::path& path, Variant expected) {
    Model m = load_checkpoint(path);
    if (m.spec.variant != expected)
        throw std::runtime_error("load_checkpoint: " + path.string() + ": checkpoint is " +
                                 variant_name(m.spec.variant) + "-variant, expected " + variant_name(expected));
    return m;
}

} // namespace tcmkd
