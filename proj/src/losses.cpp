#include "stt/losses.hpp"

#include <cmath>
#include <string>

namespace stt {

Tensor xent_label_smoothed(Tape& t, const Tensor& logits, const std::vector<std::size_t>& labels,
                           double eps) {
    if (logits.rank() != 2) throw dimension_error("xent: logits must be [B,K]");
    const std::size_t B = logits.shape()[0];
    const std::size_t K = logits.shape()[1];
    if (labels.size() != B) throw contract_error("xent: " + std::to_string(labels.size()) +
                                                 " labels for " + std::to_string(B) + " rows");
    if (!(eps >= 0.0 && eps < 1.0)) throw contract_error("xent: eps must lie in [0,1)");
    Tensor q = Tensor::zeros({B, K});
    auto qv = q.values_mut();
    for (std::size_t b = 0; b < B; ++b) {
        if (labels[b] >= K)
            throw contract_error("xent: label " + std::to_string(labels[b]) + " out of range for " +
                                 std::to_string(K) + " classes");
        for (std::size_t k = 0; k < K; ++k) qv[b * K + k] = eps / static_cast<double>(K);
        qv[b * K + labels[b]] += 1.0 - eps;
    }
    Tensor ls = log_softmax(t, logits, 1);
    return scale(t, sum_all(t, mul(t, ls, q)), -1.0 / static_cast<double>(B));
}

Tensor triplet_batch_hard(Tape& t, const Tensor& features, const std::vector<std::size_t>& identities,
                          double m) {
    if (features.rank() != 2) throw dimension_error("triplet: features must be [B,D]");
    const std::size_t B = features.shape()[0];
    if (identities.size() != B) throw contract_error("triplet: identity count mismatch");
    if (m < 0.0) throw contract_error("triplet: margin must be >= 0");

    Tensor dist = pairwise_distance(t, features, features);
    const auto dv = dist.values();
    std::vector<std::size_t> pos_flat(B), neg_flat(B);
    for (std::size_t i = 0; i < B; ++i) {
        bool has_pos = false, has_neg = false;
        double best_pos = -1.0, best_neg = 0.0;
        std::size_t pos_j = 0, neg_j = 0;
        for (std::size_t j = 0; j < B; ++j) {
            if (j == i) continue;
            const double d = dv[i * B + j];
            if (identities[j] == identities[i]) {
                if (!has_pos || d > best_pos) {
                    has_pos = true;
                    best_pos = d;
                    pos_j = j;
                }
            } else {
                if (!has_neg || d < best_neg) {
                    has_neg = true;
                    best_neg = d;
                    neg_j = j;
                }
            }
        }
        if (!has_pos)
            throw contract_error("triplet: identity " + std::to_string(identities[i]) +
                                 " has a single sample");
        if (!has_neg) throw contract_error("triplet: batch contains a single identity");
        pos_flat[i] = i * B + pos_j;
        neg_flat[i] = i * B + neg_j;
    }
    Tensor flat = reshape(t, dist, {B * B});
    Tensor d_pos = gather_rows(t, flat, pos_flat);
    Tensor d_neg = gather_rows(t, flat, neg_flat);
    Tensor margin = Tensor::from_values({B}, std::vector<double>(B, m));
    return sum_all(t, relu(t, add(t, sub(t, d_pos, d_neg), margin)));
}

Tensor spatial_part_xent(Tape& t, const SttModel& model, const Tensor& patch_tokens,
                         std::size_t label) {
    const ModelConfig& cfg = model.config();
    const std::size_t H = cfg.grid_h, W = cfg.grid_w, P = cfg.parts, D = cfg.embed_dim;
    if (H % P != 0) throw config_error("spatial_part_xent: parts must divide grid height");
    if (patch_tokens.rank() != 2 || patch_tokens.shape()[0] != H * W || patch_tokens.shape()[1] != D)
        throw dimension_error("spatial_part_xent: expected [" + std::to_string(H * W) + "," +
                              std::to_string(D) + "] tokens");
    const std::size_t band_rows = (H / P) * W;
    Tensor acc;
    for (std::size_t p = 0; p < P; ++p) {
        Tensor band = slice_rows(t, patch_tokens, p * band_rows, (p + 1) * band_rows);
        Tensor pooled = reshape(t, mean_axis(t, band, 0), {1, D});
        Tensor logits = model.head_logits(t, "part" + std::to_string(p), pooled);
        Tensor ce = xent_label_smoothed(t, logits, {label}, cfg.smoothing);
        acc = acc.defined() ? add(t, acc, ce) : ce;
    }
    return scale(t, acc, 1.0 / static_cast<double>(P));
}

Tensor spatial_constraint(Tape& t, const SttModel& model, const SpatialOut& frame, std::size_t label) {
    Tensor cls = reshape(t, frame.cls, {1, model.config().embed_dim});
    Tensor ce = xent_label_smoothed(t, model.head_logits(t, "spatial", cls), {label},
                                    model.config().smoothing);
    return add(t, ce, spatial_part_xent(t, model, frame.patches, label));
}

Tensor temporal_attention_loss(Tape& t, const Tensor& a, double alpha) {
    if (a.rank() != 1) throw dimension_error("temporal_attention_loss: a must be rank-1");
    double sum = 0.0;
    for (double v : a.values()) sum += v;
    if (std::abs(sum - 1.0) > 1e-6)
        throw contract_error("temporal_attention_loss: weights sum to " + std::to_string(sum) +
                             ", expected 1");
    Tensor neg_entropy = sum_all(t, xlogx(t, a));
    Tensor z = stt::exp(t, neg_entropy);
    return relu(t, sub(t, z, Tensor::scalar(alpha)));
}

Tensor temporal_constraint(Tape& t, const std::vector<Tensor>& frame_outputs,
                           const std::vector<Tensor>& attention_rows,
                           const std::vector<std::size_t>& labels, double m, double alpha) {
    if (frame_outputs.empty() || frame_outputs.size() != labels.size() ||
        frame_outputs.size() != attention_rows.size())
        throw contract_error("temporal_constraint: per-tracklet inputs misaligned");
    std::vector<std::size_t> frame_labels;
    for (std::size_t i = 0; i < frame_outputs.size(); ++i) {
        const std::size_t L = frame_outputs[i].shape()[0];
        frame_labels.insert(frame_labels.end(), L, labels[i]);
    }
    Tensor all_frames = concat(t, frame_outputs, 0);
    Tensor trip = triplet_batch_hard(t, all_frames, frame_labels, m);
    Tensor attn;
    for (std::size_t i = 0; i < attention_rows.size(); ++i) {
        Tensor one = temporal_attention_loss(t, attention_rows[i], alpha);
        attn = attn.defined() ? add(t, attn, one) : one;
    }
    return add(t, trip, attn);
}

LossBreakdown total_loss(Tape& t, const SttModel& model, const std::vector<TrackletSample>& batch,
                         const LossToggles& toggles) {
    if (batch.empty()) throw contract_error("total_loss: empty batch");
    const ModelConfig& cfg = model.config();
    const std::size_t B = batch.size();
    const std::size_t D = cfg.embed_dim;

    std::vector<std::size_t> labels(B);
    std::vector<std::size_t> frame_labels;
    std::vector<Tensor> temporal_tokens, frame_outputs, attention_rows;
    std::vector<Tensor> backbone_means, global_tokens;
    std::vector<Tensor> spatial_cls_rows;
    std::vector<std::vector<Tensor>> part_pooled(cfg.parts);

    const std::size_t band_rows = (cfg.grid_h / cfg.parts) * cfg.grid_w;
    for (std::size_t i = 0; i < B; ++i) {
        if (batch[i].frames.empty()) throw contract_error("total_loss: tracklet with no frames");
        labels[i] = batch[i].label;
        std::vector<Tensor> pre_tokens, cls_rows;
        for (const Tensor& frame : batch[i].frames) {
            Tensor tokens = model.encode_frame(t, frame);
            pre_tokens.push_back(tokens);
            SpatialOut so = model.spatial_forward(t, tokens);
            cls_rows.push_back(reshape(t, so.cls, {1, D}));
            if (toggles.spatial) {
                spatial_cls_rows.push_back(cls_rows.back());
                for (std::size_t p = 0; p < cfg.parts; ++p) {
                    Tensor band = slice_rows(t, so.patches, p * band_rows, (p + 1) * band_rows);
                    part_pooled[p].push_back(reshape(t, mean_axis(t, band, 0), {1, D}));
                }
                frame_labels.push_back(batch[i].label);
            }
        }
        Tensor all_pre = concat(t, pre_tokens, 0);
        backbone_means.push_back(reshape(t, mean_axis(t, all_pre, 0), {1, D}));
        TemporalOut to = model.temporal_forward(t, concat(t, cls_rows, 0));
        temporal_tokens.push_back(reshape(t, to.token, {1, D}));
        if (toggles.temporal) {
            frame_outputs.push_back(to.frame_outputs);
            attention_rows.push_back(to.a);
        }
        if (toggles.global) global_tokens.push_back(reshape(t, model.global_forward(t, all_pre), {1, D}));
    }

    LossBreakdown out;
    std::vector<Tensor> terms;
    auto activate = [&](double& slot, Tensor term) {
        slot = term.item();
        terms.push_back(std::move(term));
    };

    if (toggles.spatial) {
        Tensor cls_all = concat(t, spatial_cls_rows, 0);
        activate(out.spa_xent, xent_label_smoothed(t, model.head_logits(t, "spatial", cls_all),
                                                   frame_labels, cfg.smoothing));
        Tensor part_acc;
        for (std::size_t p = 0; p < cfg.parts; ++p) {
            Tensor pooled = concat(t, part_pooled[p], 0);
            Tensor ce = xent_label_smoothed(t, model.head_logits(t, "part" + std::to_string(p), pooled),
                                            frame_labels, cfg.smoothing);
            part_acc = part_acc.defined() ? add(t, part_acc, ce) : ce;
        }
        activate(out.spa_part_xent, scale(t, part_acc, 1.0 / static_cast<double>(cfg.parts)));
    }

    activate(out.tem_xent, xent_label_smoothed(t, model.head_logits(t, "temporal",
                                                                    concat(t, temporal_tokens, 0)),
                                               labels, cfg.smoothing));

    if (toggles.temporal) {
        std::vector<std::size_t> per_frame;
        for (std::size_t i = 0; i < B; ++i)
            per_frame.insert(per_frame.end(), frame_outputs[i].shape()[0], labels[i]);
        activate(out.tem_trip, triplet_batch_hard(t, concat(t, frame_outputs, 0), per_frame, cfg.margin));
        Tensor attn;
        for (const Tensor& a : attention_rows) {
            Tensor one = temporal_attention_loss(t, a, cfg.alpha);
            attn = attn.defined() ? add(t, attn, one) : one;
        }
        activate(out.tem_attn, attn);
    }

    if (toggles.global)
        activate(out.global_xent, xent_label_smoothed(t, model.head_logits(t, "global",
                                                                           concat(t, global_tokens, 0)),
                                                      labels, cfg.smoothing));

    activate(out.backbone_aux, xent_label_smoothed(t, model.head_logits(t, "backbone",
                                                                        concat(t, backbone_means, 0)),
                                                   labels, cfg.smoothing));

    Tensor total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) total = add(t, total, terms[i]);
    out.total_tensor = total;
    out.total = total.item();
    return out;
}

}  // namespace stt
