#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <json.hpp>
#include <set>

#include "stt/eval.hpp"
#include "stt/rng.hpp"

using namespace stt;

static EmbeddingSet make_set(std::vector<std::vector<double>> feats, std::vector<std::size_t> ids,
                             std::vector<std::size_t> cams) {
    EmbeddingSet s;
    s.features = std::move(feats);
    s.identities = std::move(ids);
    s.cameras = std::move(cams);
    for (std::size_t i = 0; i < s.features.size(); ++i) s.tracklet_ids.push_back(i);
    return s;
}

// Rank-by-counting reimplementation: no sorting, every rank derived by
// counting strictly-closer entries (ties resolved by gallery index).
static RetrievalMetrics retrieval_oracle(const EmbeddingSet& q, const EmbeddingSet& g) {
    RetrievalMetrics m;
    for (std::size_t i = 0; i < q.size(); ++i) {
        std::vector<std::size_t> valid;
        for (std::size_t j = 0; j < g.size(); ++j)
            if (!(g.identities[j] == q.identities[i] && g.cameras[j] == q.cameras[i]))
                valid.push_back(j);

        auto d = [&](std::size_t j) {
            double s = 0.0;
            for (std::size_t k = 0; k < q.features[i].size(); ++k) {
                double diff = q.features[i][k] - g.features[j][k];
                s += diff * diff;
            }
            return std::sqrt(s);
        };
        auto rank_of = [&](std::size_t j) {
            std::size_t r = 0;
            for (std::size_t o : valid)
                if (o != j && (d(o) < d(j) || (d(o) == d(j) && o < j))) ++r;
            return r;
        };

        std::vector<std::size_t> pos_ranks;
        for (std::size_t j : valid)
            if (g.identities[j] == q.identities[i]) pos_ranks.push_back(rank_of(j));
        REQUIRE(!pos_ranks.empty());

        double ap = 0.0;
        std::size_t best = valid.size();
        for (std::size_t r : pos_ranks) {
            std::size_t closer_or_equal = 0;
            for (std::size_t r2 : pos_ranks)
                if (r2 <= r) ++closer_or_equal;
            ap += static_cast<double>(closer_or_equal) / static_cast<double>(r + 1);
            best = std::min(best, r);
        }
        ap /= static_cast<double>(pos_ranks.size());
        m.per_query_ap.push_back(ap);
        m.mAP += ap;
        m.rank1 += best < 1 ? 1.0 : 0.0;
        m.rank5 += best < 5 ? 1.0 : 0.0;
        m.rank10 += best < 10 ? 1.0 : 0.0;
    }
    double n = static_cast<double>(q.size());
    m.mAP /= n;
    m.rank1 /= n;
    m.rank5 /= n;
    m.rank10 /= n;
    return m;
}

TEST_CASE("pairwise distances match hand values") {
    EmbeddingSet a = make_set({{0.0, 0.0}}, {0}, {0});
    EmbeddingSet b = make_set({{0.0, 0.0}, {3.0, 4.0}}, {0, 1}, {1, 1});
    auto d = pairwise_distance(a, b);
    CHECK(d[0][0] == 0.0);
    CHECK(d[0][1] == 5.0);

    Rng rng(2);
    std::vector<std::vector<double>> feats;
    for (int i = 0; i < 5; ++i)
        feats.push_back({rng.normal(), rng.normal(), rng.normal()});
    EmbeddingSet s = make_set(feats, {0, 1, 2, 3, 4}, {0, 1, 0, 1, 0});
    auto dd = pairwise_distance(s, s);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j)
            CHECK(dd[i][j] == doctest::Approx(dd[j][i]).epsilon(1e-12));

    EmbeddingSet wrong = make_set({{1.0}}, {0}, {0});
    CHECK_THROWS_AS(pairwise_distance(a, wrong), dimension_error);
}

TEST_CASE("cosine distance option") {
    EmbeddingSet a = make_set({{1.0, 0.0}}, {0}, {0});
    EmbeddingSet b = make_set({{2.0, 0.0}, {0.0, 3.0}, {-1.0, 0.0}}, {0, 1, 2}, {1, 1, 1});
    auto d = pairwise_distance(a, b, true);
    CHECK(d[0][0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(d[0][1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d[0][2] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("perfect ranking gives rank1 and mAP of 1") {
    // Two queries, each with tight same-identity clusters far from the rest.
    EmbeddingSet q = make_set({{0.0, 0.0}, {10.0, 0.0}}, {1, 2}, {0, 0});
    EmbeddingSet g = make_set({{0.1, 0.0}, {0.2, 0.0}, {10.1, 0.0}, {5.0, 5.0}}, {1, 1, 2, 3},
                              {1, 2, 1, 1});
    RetrievalMetrics m = cmc_map(q, g);
    CHECK(m.rank1 == 1.0);
    CHECK(m.rank5 == 1.0);
    CHECK(m.mAP == 1.0);
}

TEST_CASE("average precision with positives at ranks 1 and 3") {
    EmbeddingSet q = make_set({{0.0}}, {1}, {0});
    EmbeddingSet g = make_set({{1.0}, {2.0}, {3.0}, {4.0}}, {1, 2, 1, 3}, {1, 0, 2, 1});
    RetrievalMetrics m = cmc_map(q, g);
    CHECK(m.mAP == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
    CHECK(m.rank1 == 1.0);
    CHECK(m.per_query_ap.size() == 1);
}

TEST_CASE("exact ties break by gallery index") {
    EmbeddingSet q = make_set({{0.0}}, {1}, {0});
    // Identical embeddings: positive sits at gallery index 0, negative at 1.
    EmbeddingSet g1 = make_set({{0.0}, {0.0}}, {1, 2}, {1, 1});
    RetrievalMetrics m1 = cmc_map(q, g1);
    CHECK(m1.mAP == 1.0);
    CHECK(m1.rank1 == 1.0);
    // Swapped: negative first wins the tie, positive lands at rank 2.
    EmbeddingSet g2 = make_set({{0.0}, {0.0}}, {2, 1}, {1, 1});
    RetrievalMetrics m2 = cmc_map(q, g2);
    CHECK(m2.mAP == 0.5);
    CHECK(m2.rank1 == 0.0);
}

TEST_CASE("same-identity same-camera gallery entries are dropped") {
    EmbeddingSet q = make_set({{0.0}}, {1}, {0});
    // Nearest entry shares id and camera, so the ranking must skip it.
    EmbeddingSet g = make_set({{0.0}, {2.0}, {1.0}}, {1, 1, 2}, {0, 1, 1});
    RetrievalMetrics m = cmc_map(q, g);
    CHECK(m.rank1 == 0.0);
    CHECK(m.mAP == 0.5);
}

TEST_CASE("query without cross-camera positives is a named contract error") {
    EmbeddingSet q = make_set({{0.0}, {5.0}}, {1, 2}, {0, 0});
    EmbeddingSet g = make_set({{1.0}, {2.0}, {5.5}}, {1, 3, 2}, {0, 1, 1});
    try {
        cmc_map(q, g);
        CHECK(false);
    } catch (const contract_error& e) {
        std::string msg = e.what();
        CHECK(msg.find("query 0") != std::string::npos);
        CHECK(msg.find("identity 1") != std::string::npos);
    }
}

TEST_CASE("retrieval metrics match the counting oracle on 200 random instances") {
    Rng rng(99);
    std::size_t tested = 0;
    while (tested < 200) {
        std::size_t nq = 1 + rng.uniform_index(3);
        std::size_t ng = 1 + rng.uniform_index(6);
        std::size_t dim = 1 + rng.uniform_index(3);
        auto rand_set = [&](std::size_t n) {
            std::vector<std::vector<double>> feats;
            std::vector<std::size_t> ids, cams;
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<double> f;
                for (std::size_t k = 0; k < dim; ++k) {
                    // Half duplicated coordinates to provoke exact ties.
                    f.push_back(rng.uniform() < 0.5 ? 0.5 : rng.uniform());
                }
                feats.push_back(f);
                ids.push_back(rng.uniform_index(3));
                cams.push_back(rng.uniform_index(3));
            }
            return make_set(feats, ids, cams);
        };
        EmbeddingSet q = rand_set(nq);
        EmbeddingSet g = rand_set(ng);

        bool valid = true;
        for (std::size_t i = 0; i < nq && valid; ++i) {
            bool has = false;
            for (std::size_t j = 0; j < ng; ++j)
                if (g.identities[j] == q.identities[i] && g.cameras[j] != q.cameras[i]) has = true;
            valid = has;
        }
        if (!valid) continue;

        RetrievalMetrics got = cmc_map(q, g);
        RetrievalMetrics want = retrieval_oracle(q, g);
        CHECK(std::abs(got.mAP - want.mAP) < 1e-12);
        CHECK(std::abs(got.rank1 - want.rank1) < 1e-12);
        CHECK(std::abs(got.rank5 - want.rank5) < 1e-12);
        CHECK(std::abs(got.rank10 - want.rank10) < 1e-12);
        REQUIRE(got.per_query_ap.size() == want.per_query_ap.size());
        for (std::size_t i = 0; i < got.per_query_ap.size(); ++i)
            CHECK(std::abs(got.per_query_ap[i] - want.per_query_ap[i]) < 1e-12);
        ++tested;
    }
}

TEST_CASE("ranks are monotone in k and everything stays in range") {
    Rng rng(123);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::vector<double>> fq, fg;
        std::vector<std::size_t> iq, cq, ig, cg;
        for (int i = 0; i < 4; ++i) {
            fq.push_back({rng.normal(), rng.normal()});
            iq.push_back(static_cast<std::size_t>(i));
            cq.push_back(0);
        }
        for (int j = 0; j < 12; ++j) {
            fg.push_back({rng.normal(), rng.normal()});
            ig.push_back(static_cast<std::size_t>(j % 4));
            cg.push_back(1 + static_cast<std::size_t>(j % 2));
        }
        RetrievalMetrics m = cmc_map(make_set(fq, iq, cq), make_set(fg, ig, cg));
        CHECK(m.rank1 <= m.rank5);
        CHECK(m.rank5 <= m.rank10);
        CHECK(m.rank1 >= 0.0);
        CHECK(m.rank10 <= 1.0);
        CHECK(m.mAP >= 0.0);
        CHECK(m.mAP <= 1.0);
    }
}

TEST_CASE("metrics are invariant under a rigid rotation of all embeddings") {
    Rng rng(7);
    std::size_t dim = 4;
    // Random rotation via Gram-Schmidt on a random matrix.
    std::vector<std::vector<double>> rot(dim, std::vector<double>(dim));
    for (auto& row : rot)
        for (double& v : row) v = rng.normal();
    for (std::size_t i = 0; i < dim; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < dim; ++k) dot += rot[i][k] * rot[j][k];
            for (std::size_t k = 0; k < dim; ++k) rot[i][k] -= dot * rot[j][k];
        }
        double norm = 0.0;
        for (double v : rot[i]) norm += v * v;
        norm = std::sqrt(norm);
        for (double& v : rot[i]) v /= norm;
    }
    auto apply = [&](const std::vector<double>& x) {
        std::vector<double> y(dim, 0.0);
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t k = 0; k < dim; ++k) y[i] += rot[i][k] * x[k];
        return y;
    };

    std::vector<std::vector<double>> fq, fg;
    std::vector<std::size_t> iq, cq, ig, cg;
    for (int i = 0; i < 3; ++i) {
        fq.push_back({rng.normal(), rng.normal(), rng.normal(), rng.normal()});
        iq.push_back(static_cast<std::size_t>(i));
        cq.push_back(0);
    }
    for (int j = 0; j < 9; ++j) {
        fg.push_back({rng.normal(), rng.normal(), rng.normal(), rng.normal()});
        ig.push_back(static_cast<std::size_t>(j % 3));
        cg.push_back(1);
    }
    RetrievalMetrics before = cmc_map(make_set(fq, iq, cq), make_set(fg, ig, cg));

    std::vector<std::vector<double>> fq2, fg2;
    for (const auto& x : fq) fq2.push_back(apply(x));
    for (const auto& x : fg) fg2.push_back(apply(x));
    RetrievalMetrics after = cmc_map(make_set(fq2, iq, cq), make_set(fg2, ig, cg));

    CHECK(after.rank1 == doctest::Approx(before.rank1).epsilon(1e-12));
    CHECK(after.mAP == doctest::Approx(before.mAP).epsilon(1e-12));
}

static ModelConfig tiny_model_config() {
    ModelConfig cfg = ModelConfig::gradcheck_desk();
    cfg.image_h = 16;
    cfg.image_w = 8;
    cfg.grid_h = 4;
    cfg.grid_w = 2;
    cfg.frames_eval = 4;
    return cfg;
}

static DomainSpec tiny_spec() {
    DomainSpec s;
    s.domain_id = "T";
    s.num_identities = 6;
    s.tracklets_per_id = 3;
    s.frames_per_tracklet = 8;
    s.image_h = 16;
    s.image_w = 8;
    s.num_cameras = 2;
    s.camera_bg = {{0.5, 0.5, 0.5}, {0.4, 0.4, 0.4}};
    s.camera_tint = {{1.0, 1.0, 1.0}, {1.0, 0.95, 0.9}};
    s.jitter_px = 1.0;
    s.seed = 21;
    return s;
}

TEST_CASE("transfer rows agree with direct evaluation and per-source structure") {
    Dataset a = generate_domain(tiny_spec());
    DomainSpec spec_b = tiny_spec();
    spec_b.domain_id = "U";
    spec_b.seed = 22;
    spec_b.camera_bg = {{0.2, 0.3, 0.2}, {0.25, 0.3, 0.3}};
    Dataset b = generate_domain(spec_b);

    SttModel model(tiny_model_config(), 55);
    auto rows = transfer_eval(model, false, "T", {&a, &b});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].source == "T");
    CHECK(rows[1].source == "T");
    CHECK(rows[0].target == "T");
    CHECK(rows[1].target == "U");
    CHECK(rows[0].num_query == a.query.size());
    CHECK(rows[0].num_gallery == a.gallery.size());

    EmbeddingSet q = embed_split(model, a.query, 4, false);
    EmbeddingSet g = embed_split(model, a.gallery, 4, false);
    RetrievalMetrics direct = cmc_map(q, g);
    CHECK(rows[0].metrics.rank1 == direct.rank1);
    CHECK(rows[0].metrics.mAP == direct.mAP);
}

TEST_CASE("on identity-free noise data the model scores at chance level") {
    // Pure-noise tracklets carry no identity information, so any fixed
    // embedding map must land at the chance level set by the split structure.
    Rng rng(31);
    Dataset noise;
    noise.spec = tiny_spec();
    noise.spec.domain_id = "N";
    auto noise_tracklet = [&](std::size_t id, std::size_t cam) {
        Tracklet tk;
        tk.identity = id;
        tk.camera = cam;
        tk.h = 16;
        tk.w = 8;
        tk.c = 3;
        tk.pixels.resize(8 * 16 * 8 * 3);
        for (auto& p : tk.pixels) p = static_cast<std::uint8_t>(rng.uniform_index(256));
        tk.occluded.assign(8, 0);
        tk.distractor.assign(8, 0);
        return tk;
    };
    for (std::size_t id = 0; id < 12; ++id) {
        noise.query.push_back(noise_tracklet(id, id % 2));
        noise.gallery.push_back(noise_tracklet(id, (id + 1) % 2));
        noise.gallery.push_back(noise_tracklet(id, id % 2));
    }

    // Chance level by Monte Carlo: random gaussian embeddings with the same
    // label and camera structure.
    double chance = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        EmbeddingSet q, g;
        for (const Tracklet& tk : noise.query) {
            q.features.push_back({rng.normal(), rng.normal(), rng.normal()});
            q.identities.push_back(tk.identity);
            q.cameras.push_back(tk.camera);
            q.tracklet_ids.push_back(q.tracklet_ids.size());
        }
        for (const Tracklet& tk : noise.gallery) {
            g.features.push_back({rng.normal(), rng.normal(), rng.normal()});
            g.identities.push_back(tk.identity);
            g.cameras.push_back(tk.camera);
            g.tracklet_ids.push_back(g.tracklet_ids.size());
        }
        chance += cmc_map(q, g).mAP;
    }
    chance /= 100.0;

    SttModel model(tiny_model_config(), 100);
    auto rows = transfer_eval(model, false, "N", {&noise});
    CHECK(std::abs(rows[0].metrics.mAP - chance) <= 0.15);
}

TEST_CASE("metrics serialize to the agreed JSON and CSV schema") {
    TransferRow r;
    r.source = "A";
    r.target = "B";
    r.metrics.rank1 = 0.5;
    r.metrics.rank5 = 0.75;
    r.metrics.rank10 = 1.0;
    r.metrics.mAP = 0.625;
    r.num_query = 16;
    r.num_gallery = 48;

    std::string js = metrics_to_json({r});
    auto parsed = nlohmann::json::parse(js);
    REQUIRE(parsed.is_array());
    REQUIRE(parsed.size() == 1);
    for (const char* key :
         {"source", "target", "rank1", "rank5", "rank10", "mAP", "num_query", "num_gallery"})
        CHECK(parsed[0].count(key) == 1);
    CHECK(parsed[0]["mAP"].get<double>() == 0.625);

    std::string csv = metrics_to_csv({r});
    CHECK(csv.find("source,target,rank1,rank5,rank10,mAP,num_query,num_gallery\n") == 0);
    CHECK(csv.find("A,B,0.5,0.75,1,0.625,16,48\n") != std::string::npos);
}
