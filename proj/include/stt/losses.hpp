#pragma once

#include <cstddef>
#include <vector>

#include "stt/model.hpp"
#include "stt/tensor.hpp"

namespace stt {

/// Which objective groups are active. All false is the vanilla variant
/// (temporal-token cross entropy plus the encoder-stabilizing head only).
struct LossToggles {
    bool spatial = false;
    bool temporal = false;
    bool global = false;
};

/// Per-step scalar components plus the differentiable total. Inactive
/// components are exactly 0 and excluded from the total.
struct LossBreakdown {
    double spa_xent = 0.0;
    double spa_part_xent = 0.0;
    double tem_xent = 0.0;
    double tem_trip = 0.0;
    double tem_attn = 0.0;
    double global_xent = 0.0;
    double backbone_aux = 0.0;
    double total = 0.0;
    Tensor total_tensor;
};

/// One tracklet in a training batch: sampled frames plus its identity class.
struct TrackletSample {
    std::vector<Tensor> frames;
    std::size_t label = 0;
};

/// Mean over rows of the label-smoothed cross entropy: the target places
/// 1-eps+eps/K on the true class and eps/K elsewhere.
Tensor xent_label_smoothed(Tape& t, const Tensor& logits, const std::vector<std::size_t>& labels,
                           double eps);

/// Batch-hard triplet: per anchor, the farthest same-identity sample and the
/// nearest other-identity sample under Euclidean distance; hinge at margin m,
/// summed over anchors.
Tensor triplet_batch_hard(Tape& t, const Tensor& features, const std::vector<std::size_t>& identities,
                          double m);

/// Horizontal-band part loss for one frame's transformed patch tokens:
/// mean-pool each of P bands, classify with that band's head, average the
/// P smoothed cross entropies.
Tensor spatial_part_xent(Tape& t, const SttModel& model, const Tensor& patch_tokens, std::size_t label);

/// Per-frame spatial objective: smoothed CE on the spatial token plus the
/// part loss.
Tensor spatial_constraint(Tape& t, const SttModel& model, const SpatialOut& frame, std::size_t label);

/// Hinge on the exponentiated negative entropy of one tracklet's temporal
/// attention: [exp(sum a log a) - alpha]_+ .
Tensor temporal_attention_loss(Tape& t, const Tensor& a, double alpha);

/// Frame-level triplet over all tracklets' temporal frame outputs plus the
/// attention hinge summed over tracklets.
Tensor temporal_constraint(Tape& t, const std::vector<Tensor>& frame_outputs,
                           const std::vector<Tensor>& attention_rows,
                           const std::vector<std::size_t>& labels, double m, double alpha);

/// Full objective over a PK batch. Runs the model end to end and composes
/// the active components with unit weights.
LossBreakdown total_loss(Tape& t, const SttModel& model, const std::vector<TrackletSample>& batch,
                         const LossToggles& toggles);

}  // namespace stt
