#pragma once

#include <string>
#include <vector>

#include "stt/data.hpp"
#include "stt/model.hpp"

namespace stt {

/// Tracklet features plus the labels needed by the cross-camera protocol.
struct EmbeddingSet {
    std::vector<std::vector<double>> features;  // N rows of equal length
    std::vector<std::size_t> identities;
    std::vector<std::size_t> cameras;
    std::vector<std::size_t> tracklet_ids;

    std::size_t size() const { return features.size(); }
    std::size_t dim() const { return features.empty() ? 0 : features.front().size(); }
    void validate() const;
};

struct RetrievalMetrics {
    double rank1 = 0.0;
    double rank5 = 0.0;
    double rank10 = 0.0;
    double mAP = 0.0;
    std::vector<double> per_query_ap;
};

/// Euclidean by default; cosine distance (1 - cos) when the flag is set.
std::vector<std::vector<double>> pairwise_distance(const EmbeddingSet& q, const EmbeddingSet& g,
                                                   bool cosine = false);

/// Standard protocol: per query, gallery entries sharing both identity and
/// camera are dropped, the rest sorted by (distance, gallery index); CMC uses
/// the first hit, AP averages precision at each positive's rank.
RetrievalMetrics cmc_map(const EmbeddingSet& q, const EmbeddingSet& g, bool cosine = false);

/// Runs every tracklet of a split through the model with deterministic
/// chunk-center frame sampling.
EmbeddingSet embed_split(const SttModel& model, const std::vector<Tracklet>& split,
                         std::size_t frames_eval, bool use_global);

struct TransferRow {
    std::string source;
    std::string target;
    RetrievalMetrics metrics;
    std::size_t num_query = 0;
    std::size_t num_gallery = 0;
};

/// One retrieval row per target domain, all with the same trained source.
std::vector<TransferRow> transfer_eval(const SttModel& model, bool use_global,
                                       const std::string& source_name,
                                       const std::vector<const Dataset*>& targets);

std::string metrics_to_json(const std::vector<TransferRow>& rows);
std::string metrics_to_csv(const std::vector<TransferRow>& rows);

}  // namespace stt
