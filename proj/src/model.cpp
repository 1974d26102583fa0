#include "stt/model.hpp"

#include <cmath>
#include <cstring>

#include <json.hpp>

#include "stt/rng.hpp"

namespace stt {

// ---- ModelConfig ---------------------------------------------------------

ModelConfig ModelConfig::desk() {
    ModelConfig c;
    c.embed_dim = 64;
    c.spatial_heads = c.temporal_heads = c.global_heads = 4;
    c.spatial_layers = c.temporal_layers = 1;
    c.global_layers = 2;
    c.grid_h = 8;
    c.grid_w = 4;
    c.frames_train = 8;
    c.frames_eval = 8;
    c.parts = 4;
    c.ffn_multiplier = 4;
    c.image_h = 48;
    c.image_w = 24;
    c.image_c = 3;
    return c;
}

ModelConfig ModelConfig::gradcheck_desk() {
    ModelConfig c;
    c.embed_dim = 16;
    c.spatial_heads = c.temporal_heads = c.global_heads = 2;
    c.spatial_layers = c.temporal_layers = c.global_layers = 1;
    c.grid_h = 4;
    c.grid_w = 2;
    c.frames_train = 4;
    c.frames_eval = 4;
    c.parts = 2;
    c.ffn_multiplier = 2;
    c.image_h = 8;
    c.image_w = 4;
    c.image_c = 3;
    c.num_classes = 2;
    return c;
}

void ModelConfig::validate() const {
    auto positive = [](std::size_t v, const char* field) {
        if (v < 1) throw config_error(std::string(field) + " must be >= 1");
    };
    positive(embed_dim, "embed_dim");
    positive(spatial_layers, "spatial_layers");
    positive(spatial_heads, "spatial_heads");
    positive(temporal_layers, "temporal_layers");
    positive(temporal_heads, "temporal_heads");
    positive(global_layers, "global_layers");
    positive(global_heads, "global_heads");
    positive(grid_h, "grid_h");
    positive(grid_w, "grid_w");
    positive(frames_train, "frames_train");
    positive(frames_eval, "frames_eval");
    positive(parts, "parts");
    positive(num_classes, "num_classes");
    positive(ffn_multiplier, "ffn_multiplier");
    positive(image_h, "image_h");
    positive(image_w, "image_w");
    positive(image_c, "image_c");
    for (std::size_t h : {spatial_heads, temporal_heads, global_heads})
        if (embed_dim % h != 0)
            throw config_error("embed_dim " + std::to_string(embed_dim) +
                               " not divisible by head count " + std::to_string(h));
    if (grid_h % parts != 0)
        throw config_error("parts " + std::to_string(parts) + " does not divide grid_h " +
                           std::to_string(grid_h));
    if (!(alpha > 0.0 && alpha < 1.0)) throw config_error("alpha must lie in (0,1)");
    if (!(smoothing >= 0.0 && smoothing < 1.0)) throw config_error("smoothing must lie in [0,1)");
    if (margin < 0.0) throw config_error("margin must be >= 0");
    if (image_h % grid_h != 0 || image_w % grid_w != 0)
        throw config_error("image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                           " not divisible into " + std::to_string(grid_h) + "x" +
                           std::to_string(grid_w) + " patch grid");
}

std::string ModelConfig::to_json() const {
    nlohmann::json j;
    j["alpha"] = alpha;
    j["embed_dim"] = embed_dim;
    j["ffn_multiplier"] = ffn_multiplier;
    j["frames_eval"] = frames_eval;
    j["frames_train"] = frames_train;
    j["global_heads"] = global_heads;
    j["global_layers"] = global_layers;
    j["grid_h"] = grid_h;
    j["grid_w"] = grid_w;
    j["image_c"] = image_c;
    j["image_h"] = image_h;
    j["image_w"] = image_w;
    j["margin"] = margin;
    j["num_classes"] = num_classes;
    j["parts"] = parts;
    j["smoothing"] = smoothing;
    j["spatial_heads"] = spatial_heads;
    j["spatial_layers"] = spatial_layers;
    j["temporal_heads"] = temporal_heads;
    j["temporal_layers"] = temporal_layers;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("model config: ") + e.what());
    }
    if (!j.is_object()) throw config_error("model config: expected a JSON object");
    ModelConfig c;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "alpha") c.alpha = value.get<double>();
            else if (key == "embed_dim") c.embed_dim = value.get<std::size_t>();
            else if (key == "ffn_multiplier") c.ffn_multiplier = value.get<std::size_t>();
            else if (key == "frames_eval") c.frames_eval = value.get<std::size_t>();
            else if (key == "frames_train") c.frames_train = value.get<std::size_t>();
            else if (key == "global_heads") c.global_heads = value.get<std::size_t>();
            else if (key == "global_layers") c.global_layers = value.get<std::size_t>();
            else if (key == "grid_h") c.grid_h = value.get<std::size_t>();
            else if (key == "grid_w") c.grid_w = value.get<std::size_t>();
            else if (key == "image_c") c.image_c = value.get<std::size_t>();
            else if (key == "image_h") c.image_h = value.get<std::size_t>();
            else if (key == "image_w") c.image_w = value.get<std::size_t>();
            else if (key == "margin") c.margin = value.get<double>();
            else if (key == "num_classes") c.num_classes = value.get<std::size_t>();
            else if (key == "parts") c.parts = value.get<std::size_t>();
            else if (key == "smoothing") c.smoothing = value.get<double>();
            else if (key == "spatial_heads") c.spatial_heads = value.get<std::size_t>();
            else if (key == "spatial_layers") c.spatial_layers = value.get<std::size_t>();
            else if (key == "temporal_heads") c.temporal_heads = value.get<std::size_t>();
            else if (key == "temporal_layers") c.temporal_layers = value.get<std::size_t>();
            else throw config_error("model config: unknown key \"" + key + "\"");
        }
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

std::uint64_t ModelConfig::hash() const { return fnv1a64(to_json()); }

// ---- parameter layout ----------------------------------------------------

std::vector<std::pair<std::string, std::vector<std::size_t>>> SttModel::layout(const ModelConfig& cfg) {
    const std::size_t D = cfg.embed_dim;
    const std::size_t F = D * cfg.ffn_multiplier;
    const std::size_t K = cfg.num_classes;
    std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
    out.emplace_back("embed.w", std::vector<std::size_t>{cfg.patch_dim(), D});
    out.emplace_back("embed.b", std::vector<std::size_t>{D});

    auto transformer = [&](const std::string& name, std::size_t layers, bool positional) {
        out.emplace_back(name + ".cls", std::vector<std::size_t>{1, D});
        if (positional)
            out.emplace_back(name + ".pos", std::vector<std::size_t>{cfg.tokens_per_frame() + 1, D});
        for (std::size_t l = 0; l < layers; ++l) {
            const std::string p = name + ".l" + std::to_string(l) + ".";
            out.emplace_back(p + "ln1.g", std::vector<std::size_t>{D});
            out.emplace_back(p + "ln1.b", std::vector<std::size_t>{D});
            for (const char* part : {"q", "k", "v", "o"}) {
                out.emplace_back(p + "attn." + part + ".w", std::vector<std::size_t>{D, D});
                // No key bias: softmax ignores a per-row constant shift of the
                // logits, so a key bias would be a permanently dead parameter.
                if (std::strcmp(part, "k") != 0)
                    out.emplace_back(p + "attn." + part + ".b", std::vector<std::size_t>{D});
            }
            out.emplace_back(p + "ln2.g", std::vector<std::size_t>{D});
            out.emplace_back(p + "ln2.b", std::vector<std::size_t>{D});
            out.emplace_back(p + "ffn.1.w", std::vector<std::size_t>{D, F});
            out.emplace_back(p + "ffn.1.b", std::vector<std::size_t>{F});
            out.emplace_back(p + "ffn.2.w", std::vector<std::size_t>{F, D});
            out.emplace_back(p + "ffn.2.b", std::vector<std::size_t>{D});
        }
        out.emplace_back(name + ".final.g", std::vector<std::size_t>{D});
        out.emplace_back(name + ".final.b", std::vector<std::size_t>{D});
    };
    transformer("spatial", cfg.spatial_layers, true);
    transformer("temporal", cfg.temporal_layers, false);
    transformer("global", cfg.global_layers, false);

    auto head = [&](const std::string& name) {
        out.emplace_back("head." + name + ".w", std::vector<std::size_t>{D, K});
        out.emplace_back("head." + name + ".b", std::vector<std::size_t>{K});
    };
    head("spatial");
    for (std::size_t p = 0; p < cfg.parts; ++p) head("part" + std::to_string(p));
    head("temporal");
    head("global");
    head("backbone");
    return out;
}

void SttModel::init_param(Tensor& p, const std::string& name, std::uint64_t seed) {
    auto ends_with = [&](const char* suf) {
        std::string_view s(suf);
        return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    auto vals = p.values_mut();
    if (ends_with(".g")) {
        for (double& v : vals) v = 1.0;
    } else if (ends_with(".b")) {
        for (double& v : vals) v = 0.0;
    } else if (ends_with(".pos")) {
        Rng rng(mix_seed(seed, fnv1a64(name)));
        for (double& v : vals) v = rng.truncated_normal(0.02);
    } else {
        // Fan-in scaling: at desk widths a fixed 0.02 leaves attention logits
        // tiny and the early gradient signal starves.
        double fan_in = static_cast<double>(p.rank() >= 2 ? p.shape().front() : p.size());
        Rng rng(mix_seed(seed, fnv1a64(name)));
        double std = 1.0 / std::sqrt(std::max(1.0, fan_in));
        for (double& v : vals) v = rng.truncated_normal(std);
    }
}

// ---- construction --------------------------------------------------------

namespace {

std::vector<std::size_t> patch_gather_order(const ModelConfig& cfg) {
    const std::size_t ph = cfg.image_h / cfg.grid_h;
    const std::size_t pw = cfg.image_w / cfg.grid_w;
    std::vector<std::size_t> rows;
    rows.reserve(cfg.image_h * cfg.image_w);
    for (std::size_t gy = 0; gy < cfg.grid_h; ++gy)
        for (std::size_t gx = 0; gx < cfg.grid_w; ++gx)
            for (std::size_t py = 0; py < ph; ++py)
                for (std::size_t px = 0; px < pw; ++px)
                    rows.push_back((gy * ph + py) * cfg.image_w + gx * pw + px);
    return rows;
}

}  // namespace

SttModel::SttModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    for (const auto& [name, shape] : layout(cfg_)) {
        Tensor& p = params_.create(name, shape);
        init_param(p, name, seed);
    }
    patch_pixel_rows_ = patch_gather_order(cfg_);
}

SttModel::SttModel(ModelConfig cfg, ParameterStore params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
    const auto expect = layout(cfg_);
    if (params_.size() != expect.size())
        throw contract_error("checkpoint has " + std::to_string(params_.size()) +
                             " parameters, architecture needs " + std::to_string(expect.size()));
    for (const auto& [name, shape] : expect) {
        if (!params_.contains(name)) throw contract_error("checkpoint missing parameter: " + name);
        if (params_.get(name).shape() != shape)
            throw contract_error("checkpoint shape mismatch for " + name);
    }
    patch_pixel_rows_ = patch_gather_order(cfg_);
}

void SttModel::reinit_heads(std::size_t num_classes, std::uint64_t seed) {
    if (num_classes < 1) throw config_error("num_classes must be >= 1");
    params_.erase_prefix("head.");
    cfg_.num_classes = num_classes;
    for (const auto& [name, shape] : layout(cfg_)) {
        if (name.rfind("head.", 0) != 0) continue;
        Tensor& p = params_.create(name, shape);
        init_param(p, name, seed);
    }
}

// ---- forward passes ------------------------------------------------------

Tensor SttModel::encode_frame(Tape& t, const Tensor& image) const {
    const std::vector<std::size_t> want{cfg_.image_h, cfg_.image_w, cfg_.image_c};
    if (image.shape() != want)
        throw dimension_error("encode_frame: expected image of " + std::to_string(cfg_.image_h) + "x" +
                              std::to_string(cfg_.image_w) + "x" + std::to_string(cfg_.image_c));
    Tensor flat = reshape(t, image, {cfg_.image_h * cfg_.image_w, cfg_.image_c});
    Tensor gathered = gather_rows(t, flat, patch_pixel_rows_);
    Tensor patches = reshape(t, gathered, {cfg_.tokens_per_frame(), cfg_.patch_dim()});
    return linear(t, patches, params_.get("embed.w"), params_.get("embed.b"));
}

Tensor SttModel::encoder_stack(Tape& t, Tensor x, const std::string& prefix, std::size_t layers,
                               std::size_t heads, AttentionRecord* attn) const {
    const std::size_t S = x.shape()[0];
    const std::size_t D = cfg_.embed_dim;
    const std::size_t dk = D / heads;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    for (std::size_t l = 0; l < layers; ++l) {
        const std::string p = prefix + ".l" + std::to_string(l) + ".";
        Tensor h1 = layer_norm(t, x, params_.get(p + "ln1.g"), params_.get(p + "ln1.b"));
        Tensor q = linear(t, h1, params_.get(p + "attn.q.w"), params_.get(p + "attn.q.b"));
        Tensor k = matmul(t, h1, params_.get(p + "attn.k.w"));
        Tensor v = linear(t, h1, params_.get(p + "attn.v.w"), params_.get(p + "attn.v.b"));
        Tensor qh = permute(t, reshape(t, q, {S, heads, dk}), {1, 0, 2});
        Tensor kh = permute(t, reshape(t, k, {S, heads, dk}), {1, 0, 2});
        Tensor vh = permute(t, reshape(t, v, {S, heads, dk}), {1, 0, 2});
        Tensor scores = scale(t, matmul(t, qh, permute(t, kh, {0, 2, 1})), inv_sqrt_dk);
        Tensor A = softmax(t, scores, 2);
        if (attn) attn->layers.push_back(A);
        Tensor ctx = matmul(t, A, vh);
        Tensor merged = reshape(t, permute(t, ctx, {1, 0, 2}), {S, D});
        Tensor proj = linear(t, merged, params_.get(p + "attn.o.w"), params_.get(p + "attn.o.b"));
        x = add(t, x, proj);
        Tensor h2 = layer_norm(t, x, params_.get(p + "ln2.g"), params_.get(p + "ln2.b"));
        Tensor f = gelu(t, linear(t, h2, params_.get(p + "ffn.1.w"), params_.get(p + "ffn.1.b")));
        f = linear(t, f, params_.get(p + "ffn.2.w"), params_.get(p + "ffn.2.b"));
        x = add(t, x, f);
    }
    x = layer_norm(t, x, params_.get(prefix + ".final.g"), params_.get(prefix + ".final.b"));
    if (attn && !attn->layers.empty()) {
        const Tensor& A = attn->layers.back();
        Tensor by_query = permute(t, A, {1, 0, 2});
        Tensor cls_rows = reshape(t, slice_rows(t, by_query, 0, 1), {heads, S});
        Tensor avg = mean_axis(t, cls_rows, 0);
        Tensor rest = slice_rows(t, avg, 1, S);
        attn->class_row = div_by_scalar(t, rest, sum_all(t, rest));
        attn->head_averaged = true;
    }
    return x;
}

SpatialOut SttModel::spatial_forward(Tape& t, const Tensor& tokens) const {
    const std::size_t n = cfg_.tokens_per_frame();
    if (tokens.rank() != 2 || tokens.shape()[0] != n || tokens.shape()[1] != cfg_.embed_dim)
        throw dimension_error("spatial_forward: expected [" + std::to_string(n) + "," +
                              std::to_string(cfg_.embed_dim) + "] tokens");
    Tensor x = concat(t, {params_.get("spatial.cls"), tokens}, 0);
    x = add(t, x, params_.get("spatial.pos"));
    SpatialOut out;
    x = encoder_stack(t, x, "spatial", cfg_.spatial_layers, cfg_.spatial_heads, &out.attn);
    out.cls = reshape(t, slice_rows(t, x, 0, 1), {cfg_.embed_dim});
    out.patches = slice_rows(t, x, 1, n + 1);
    return out;
}

TemporalOut SttModel::temporal_forward(Tape& t, const Tensor& spatial_tokens) const {
    if (spatial_tokens.rank() != 2 || spatial_tokens.shape()[0] < 1 ||
        spatial_tokens.shape()[1] != cfg_.embed_dim)
        throw dimension_error("temporal_forward: expected [L," + std::to_string(cfg_.embed_dim) +
                              "] tokens with L >= 1");
    const std::size_t L = spatial_tokens.shape()[0];
    Tensor x = concat(t, {params_.get("temporal.cls"), spatial_tokens}, 0);
    TemporalOut out;
    x = encoder_stack(t, x, "temporal", cfg_.temporal_layers, cfg_.temporal_heads, &out.attn);
    out.token = reshape(t, slice_rows(t, x, 0, 1), {cfg_.embed_dim});
    out.frame_outputs = slice_rows(t, x, 1, L + 1);
    out.a = out.attn.class_row;
    return out;
}

Tensor SttModel::global_forward(Tape& t, const Tensor& all_patches) const {
    if (all_patches.rank() != 2 || all_patches.shape()[1] != cfg_.embed_dim ||
        all_patches.shape()[0] < cfg_.tokens_per_frame() ||
        all_patches.shape()[0] % cfg_.tokens_per_frame() != 0)
        throw dimension_error("global_forward: token count must be a positive multiple of " +
                              std::to_string(cfg_.tokens_per_frame()));
    Tensor x = concat(t, {params_.get("global.cls"), all_patches}, 0);
    x = encoder_stack(t, x, "global", cfg_.global_layers, cfg_.global_heads, nullptr);
    return reshape(t, slice_rows(t, x, 0, 1), {cfg_.embed_dim});
}

Tensor SttModel::extract_representation(Tape& t, const std::vector<Tensor>& frames,
                                        bool use_global) const {
    if (frames.empty()) throw contract_error("extract_representation: tracklet has no frames");
    std::vector<Tensor> cls_rows;
    std::vector<Tensor> pre_tokens;
    cls_rows.reserve(frames.size());
    for (const Tensor& frame : frames) {
        Tensor tokens = encode_frame(t, frame);
        if (use_global) pre_tokens.push_back(tokens);
        SpatialOut so = spatial_forward(t, tokens);
        cls_rows.push_back(reshape(t, so.cls, {1, cfg_.embed_dim}));
    }
    Tensor st = concat(t, cls_rows, 0);
    TemporalOut to = temporal_forward(t, st);
    if (!use_global) return to.token;
    Tensor g = global_forward(t, concat(t, pre_tokens, 0));
    return concat(t, {to.token, g}, 0);
}

Tensor SttModel::head_logits(Tape& t, const std::string& head, const Tensor& features) const {
    if (features.rank() != 2 || features.shape()[1] != cfg_.embed_dim)
        throw dimension_error("head_logits: expected [B," + std::to_string(cfg_.embed_dim) +
                              "] features");
    return linear(t, features, params_.get("head." + head + ".w"), params_.get("head." + head + ".b"));
}

}  // namespace stt
