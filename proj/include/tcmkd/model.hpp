#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tcmkd/autodiff.hpp"
#include "tcmkd/signal.hpp"
#include "tcmkd/tensor.hpp"

namespace tcmkd {

enum class Variant { narrow, wide };

std::string variant_name(Variant v);

struct ConvLayerSpec {
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int pool = 2;
};

// Five conv layers + flatten + 3-layer MLP. The wide variant differs from
// the narrow one only in the first layer's geometry (kernel and stride
// scaled by the window factor 5) so both land on the same latent size.
struct ArchitectureSpec {
    Variant variant = Variant::narrow;
    int in_channels = kNumChannels;
    int in_length = kSegmentLen;
    std::vector<ConvLayerSpec> conv_stack;
    int latent_dim = 0;
    std::vector<int> mlp_hidden;
    int num_classes = 0;

    static ArchitectureSpec make(Variant v, int num_classes);

    // Temporal length after each conv+pool stage; the last entry times the
    // last layer's channels is the latent size.
    std::vector<int> stage_lengths() const;
};

struct Provenance {
    std::string dataset_tag;
    int epochs = 0;
    uint64_t seed = 0;
};

struct Model {
    ArchitectureSpec spec;
    std::vector<Parameter<float>> fe_params;  // conv{i}.weight / conv{i}.bias
    std::vector<Parameter<float>> clf_params; // fc{i}.weight / fc{i}.bias; empty for a feature-extractor-only model
    uint64_t rng_seed = 0;
    Provenance provenance;

    bool feature_extractor_only() const { return clf_params.empty(); }
    std::vector<Parameter<float>*> all_params();
    std::vector<Parameter<float>*> fe_param_ptrs();
};

Model build_model(Variant v, int num_classes, uint64_t seed);
// Same conv stack, no classifier head; for target-domain adaptation.
Model build_feature_extractor(Variant v, int num_classes, uint64_t seed);

// --- forward passes ---------------------------------------------------------

using FVar = Graph<float>::Var;

// Graph-building forms used by the training loops. When train is true the
// model's parameters are bound as differentiable leaves.
FVar features_graph(Graph<float>& g, Model& model, FVar x, bool train);
FVar logits_graph(Graph<float>& g, Model& model, FVar z, bool train);

// Inference: batch is [B, 2, in_length].
Tensor<float> forward_features(const Model& model, const Tensor<float>& batch);

struct ClassifyResult {
    Tensor<float> logits;
    Tensor<float> probabilities;
};
ClassifyResult forward_classify(const Model& model, const Tensor<float>& batch);

Tensor<float> batch_from_segments(const std::vector<Segment>& segments, size_t begin, size_t count);
Tensor<float> batch_from_windows(const std::vector<TemporalWindow>& windows, size_t begin, size_t count);

// --- checkpoints ------------------------------------------------------------
//
// Container: magic "CKPT0001", u32 LE manifest byte length, UTF-8 JSON
// manifest (format_version, spec, provenance, tensor directory with
// name/shape/offset/crc32), then concatenated little-endian float32 blocks.

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path, Variant expected);

} // namespace tcmkd
