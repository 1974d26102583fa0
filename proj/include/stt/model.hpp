#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stt/param_store.hpp"
#include "stt/tensor.hpp"

namespace stt {

/// Architecture and objective hyperparameters. Defaults are the full-scale
/// values; desk() and gradcheck_desk() give the small configurations used by
/// the shipped experiments and the gradient suite.
struct ModelConfig {
    std::size_t embed_dim = 768;
    std::size_t spatial_layers = 1, spatial_heads = 6;
    std::size_t temporal_layers = 1, temporal_heads = 6;
    std::size_t global_layers = 2, global_heads = 6;
    std::size_t grid_h = 8, grid_w = 4;
    std::size_t frames_train = 8;
    std::size_t frames_eval = 32;
    std::size_t parts = 4;
    double alpha = 0.15;
    double margin = 0.3;
    double smoothing = 0.1;
    std::size_t num_classes = 1;
    std::size_t ffn_multiplier = 4;
    std::size_t image_h = 128, image_w = 64, image_c = 3;

    static ModelConfig desk();
    static ModelConfig gradcheck_desk();

    void validate() const;  // throws config_error on any violated invariant

    /// Canonical key-sorted JSON; two configs are interchangeable iff the
    /// strings (and therefore the hashes) match.
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
    std::uint64_t hash() const;

    std::size_t patch_dim() const { return (image_h / grid_h) * (image_w / grid_w) * image_c; }
    std::size_t tokens_per_frame() const { return grid_h * grid_w; }
};

/// Attention captured during one transformer forward. layers[l] has shape
/// [heads, S, S]; class_row is the final layer's class-token row, averaged
/// over heads, with the self weight dropped and renormalized to sum 1.
struct AttentionRecord {
    std::vector<Tensor> layers;
    Tensor class_row;
    bool head_averaged = true;
};

struct SpatialOut {
    Tensor cls;      // [D]
    Tensor patches;  // [H*W, D] transformed patch tokens
    AttentionRecord attn;
};

struct TemporalOut {
    Tensor token;          // [D]
    Tensor frame_outputs;  // [L, D]
    Tensor a;              // [L] head-averaged, renormalized class-token attention
    AttentionRecord attn;
};

/// The spatiotemporal model: per-frame patch encoder, Spatial Transformer
/// with positional embeddings, Temporal Transformer and Global Transformer
/// without them, plus the classifier heads used by the training objectives.
class SttModel {
public:
    /// Fresh parameters. Every tensor is initialized from a stream seeded by
    /// (seed, parameter name), so values are independent of creation order
    /// and of the number of classes in unrelated heads.
    SttModel(ModelConfig cfg, std::uint64_t seed);
    /// Adopts a loaded store after validating names and shapes against cfg.
    SttModel(ModelConfig cfg, ParameterStore params);

    const ModelConfig& config() const { return cfg_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    Tensor encode_frame(Tape& t, const Tensor& image) const;  // [Hpx,Wpx,C] -> [H*W, D]
    SpatialOut spatial_forward(Tape& t, const Tensor& tokens) const;
    TemporalOut temporal_forward(Tape& t, const Tensor& spatial_tokens) const;
    Tensor global_forward(Tape& t, const Tensor& all_patches) const;

    /// Full per-tracklet feature: frames -> patch tokens -> spatial tokens ->
    /// temporal token; with use_global, concat(temporal, global) of length 2D.
    Tensor extract_representation(Tape& t, const std::vector<Tensor>& frames, bool use_global) const;

    /// Logits [B, num_classes] from one of the named heads ("spatial",
    /// "part0".."partP-1", "temporal", "global", "backbone").
    Tensor head_logits(Tape& t, const std::string& head, const Tensor& features) const;

    /// Drops every "head.*" parameter and recreates it for a new class count,
    /// seeding by (seed, name). Non-head parameters are untouched.
    void reinit_heads(std::size_t num_classes, std::uint64_t seed);

    /// The (name, shape) layout implied by a config, in canonical order.
    static std::vector<std::pair<std::string, std::vector<std::size_t>>> layout(const ModelConfig& cfg);
    /// Seeds one parameter's values from (seed, name) according to its role.
    static void init_param(Tensor& p, const std::string& name, std::uint64_t seed);

private:
    Tensor encoder_stack(Tape& t, Tensor x, const std::string& prefix, std::size_t layers,
                         std::size_t heads, AttentionRecord* attn) const;

    ModelConfig cfg_;
    ParameterStore params_;
    std::vector<std::size_t> patch_pixel_rows_;  // gather order for encode_frame
};

}  // namespace stt
