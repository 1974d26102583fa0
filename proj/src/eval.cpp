#include "stt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>

namespace stt {

void EmbeddingSet::validate() const {
    if (identities.size() != features.size() || cameras.size() != features.size() ||
        tracklet_ids.size() != features.size())
        throw contract_error("embedding set fields disagree on row count");
    for (const auto& row : features)
        if (row.size() != dim()) throw contract_error("embedding rows differ in length");
}

std::vector<std::vector<double>> pairwise_distance(const EmbeddingSet& q, const EmbeddingSet& g,
                                                   bool cosine) {
    q.validate();
    g.validate();
    if (q.dim() != g.dim())
        throw dimension_error("embedding dims differ: " + std::to_string(q.dim()) + " vs " +
                              std::to_string(g.dim()));
    std::vector<std::vector<double>> out(q.size(), std::vector<double>(g.size(), 0.0));
    for (std::size_t i = 0; i < q.size(); ++i)
        for (std::size_t j = 0; j < g.size(); ++j) {
            const auto& a = q.features[i];
            const auto& b = g.features[j];
            if (cosine) {
                double dot = 0.0, na = 0.0, nb = 0.0;
                for (std::size_t k = 0; k < a.size(); ++k) {
                    dot += a[k] * b[k];
                    na += a[k] * a[k];
                    nb += b[k] * b[k];
                }
                double denom = std::sqrt(na) * std::sqrt(nb);
                out[i][j] = denom > 0.0 ? 1.0 - dot / denom : 1.0;
            } else {
                double s = 0.0;
                for (std::size_t k = 0; k < a.size(); ++k) {
                    double d = a[k] - b[k];
                    s += d * d;
                }
                out[i][j] = std::sqrt(s);
            }
        }
    return out;
}

RetrievalMetrics cmc_map(const EmbeddingSet& q, const EmbeddingSet& g, bool cosine) {
    auto dist = pairwise_distance(q, g, cosine);
    RetrievalMetrics m;
    for (std::size_t i = 0; i < q.size(); ++i) {
        std::vector<std::pair<double, std::size_t>> order;
        for (std::size_t j = 0; j < g.size(); ++j) {
            if (g.identities[j] == q.identities[i] && g.cameras[j] == q.cameras[i]) continue;
            order.emplace_back(dist[i][j], j);
        }
        std::sort(order.begin(), order.end());

        std::size_t hits = 0;
        double ap = 0.0;
        std::size_t first_hit = order.size();
        for (std::size_t r = 0; r < order.size(); ++r) {
            if (g.identities[order[r].second] != q.identities[i]) continue;
            if (hits == 0) first_hit = r;
            ++hits;
            ap += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
        if (hits == 0)
            throw contract_error("query " + std::to_string(i) + " (identity " +
                                 std::to_string(q.identities[i]) +
                                 ") has no cross-camera positives in the gallery");
        ap /= static_cast<double>(hits);
        m.per_query_ap.push_back(ap);
        m.mAP += ap;
        m.rank1 += first_hit < 1 ? 1.0 : 0.0;
        m.rank5 += first_hit < 5 ? 1.0 : 0.0;
        m.rank10 += first_hit < 10 ? 1.0 : 0.0;
    }
    double n = static_cast<double>(q.size());
    if (q.size() > 0) {
        m.mAP /= n;
        m.rank1 /= n;
        m.rank5 /= n;
        m.rank10 /= n;
    }
    return m;
}

EmbeddingSet embed_split(const SttModel& model, const std::vector<Tracklet>& split,
                         std::size_t frames_eval, bool use_global) {
    EmbeddingSet out;
    Tape tape(false);
    for (std::size_t i = 0; i < split.size(); ++i) {
        const Tracklet& tk = split[i];
        auto idx = restricted_sample(tk.length(), frames_eval);
        Tensor rep = model.extract_representation(tape, tk.frames(idx), use_global);
        out.features.emplace_back(rep.values().begin(), rep.values().end());
        out.identities.push_back(tk.identity);
        out.cameras.push_back(tk.camera);
        out.tracklet_ids.push_back(i);
    }
    return out;
}

std::vector<TransferRow> transfer_eval(const SttModel& model, bool use_global,
                                       const std::string& source_name,
                                       const std::vector<const Dataset*>& targets) {
    std::vector<TransferRow> rows;
    for (const Dataset* target : targets) {
        if (!target) throw contract_error("null target dataset");
        std::size_t n = model.config().frames_eval;
        EmbeddingSet q = embed_split(model, target->query, n, use_global);
        EmbeddingSet g = embed_split(model, target->gallery, n, use_global);
        TransferRow row;
        row.source = source_name;
        row.target = target->spec.domain_id;
        row.metrics = cmc_map(q, g);
        row.num_query = q.size();
        row.num_gallery = g.size();
        rows.push_back(std::move(row));
    }
    return rows;
}

static nlohmann::json row_json(const TransferRow& r) {
    nlohmann::json j;
    j["source"] = r.source;
    j["target"] = r.target;
    j["rank1"] = r.metrics.rank1;
    j["rank5"] = r.metrics.rank5;
    j["rank10"] = r.metrics.rank10;
    j["mAP"] = r.metrics.mAP;
    j["num_query"] = r.num_query;
    j["num_gallery"] = r.num_gallery;
    return j;
}

std::string metrics_to_json(const std::vector<TransferRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const TransferRow& r : rows) arr.push_back(row_json(r));
    return arr.dump(2) + "\n";
}

std::string metrics_to_csv(const std::vector<TransferRow>& rows) {
    std::string out = "source,target,rank1,rank5,rank10,mAP,num_query,num_gallery\n";
    char buf[256];
    for (const TransferRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%.17g,%.17g,%.17g,%zu,%zu\n",
                      r.source.c_str(), r.target.c_str(), r.metrics.rank1, r.metrics.rank5,
                      r.metrics.rank10, r.metrics.mAP, r.num_query, r.num_gallery);
        out += buf;
    }
    return out;
}

}  // namespace stt
