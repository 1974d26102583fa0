#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stt/model.hpp"
#include "stt/rng.hpp"

using namespace stt;

namespace {

Tensor random_image(const ModelConfig& cfg, Rng& rng) {
    Tensor img = Tensor::zeros({cfg.image_h, cfg.image_w, cfg.image_c});
    for (double& v : img.values_mut()) v = rng.uniform();
    return img;
}

Tensor random_tokens(std::size_t n, std::size_t d, Rng& rng) {
    Tensor x = Tensor::zeros({n, d});
    for (double& v : x.values_mut()) v = rng.normal();
    return x;
}

double max_rel_diff(std::span<const double> a, std::span<const double> b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double denom = std::max({1e-12, std::abs(a[i]), std::abs(b[i])});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

Tensor permuted_rows(Tape& t, const Tensor& x, const std::vector<std::size_t>& order) {
    return gather_rows(t, x, order);
}

}  // namespace

TEST_CASE("config validation catches each invariant") {
    CHECK_NOTHROW(ModelConfig().validate());
    CHECK_NOTHROW(ModelConfig::desk().validate());
    CHECK_NOTHROW(ModelConfig::gradcheck_desk().validate());

    ModelConfig c = ModelConfig::desk();
    c.spatial_heads = 5;  // 64 % 5 != 0
    CHECK_THROWS_AS(c.validate(), config_error);
    c = ModelConfig::desk();
    c.parts = 3;  // does not divide grid_h = 8
    CHECK_THROWS_AS(c.validate(), config_error);
    c = ModelConfig::desk();
    c.alpha = 1.0;
    CHECK_THROWS_AS(c.validate(), config_error);
    c = ModelConfig::desk();
    c.smoothing = 1.0;
    CHECK_THROWS_AS(c.validate(), config_error);
    c = ModelConfig::desk();
    c.margin = -0.1;
    CHECK_THROWS_AS(c.validate(), config_error);
    c = ModelConfig::desk();
    c.image_h = 50;  // not divisible by grid_h = 8
    CHECK_THROWS_AS(c.validate(), config_error);
    c = ModelConfig::desk();
    c.num_classes = 0;
    CHECK_THROWS_AS(c.validate(), config_error);
}

TEST_CASE("config json round-trips and rejects unknown keys") {
    ModelConfig c = ModelConfig::desk();
    c.num_classes = 13;
    c.alpha = 0.2;
    ModelConfig back = ModelConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.hash() == c.hash());
    CHECK(back.num_classes == 13);
    CHECK(back.alpha == 0.2);

    CHECK_THROWS_AS(ModelConfig::from_json("{\"embed_dim\":64,\"bogus\":1}"), config_error);
    CHECK_THROWS_AS(ModelConfig::from_json("not json"), config_error);
    CHECK_THROWS_AS(ModelConfig::from_json("[1,2]"), config_error);
}

TEST_CASE("encode_frame produces one token per grid cell") {
    ModelConfig cfg = ModelConfig::desk();
    cfg.num_classes = 4;
    SttModel model(cfg, 11);
    Rng rng(3);
    Tape t;

    Tensor img = random_image(cfg, rng);
    Tensor tokens = model.encode_frame(t, img);
    CHECK(tokens.shape() == std::vector<std::size_t>{32, 64});

    Tensor zero_img = Tensor::zeros({cfg.image_h, cfg.image_w, cfg.image_c});
    Tensor zero_tokens = model.encode_frame(t, zero_img);
    for (double v : zero_tokens.values()) CHECK(v == 0.0);  // bias is zero-initialized

    CHECK_THROWS_AS(model.encode_frame(t, Tensor::zeros({8, 8, 3})), dimension_error);
}

TEST_CASE("encode_frame is local to the changed patch") {
    ModelConfig cfg = ModelConfig::desk();
    cfg.num_classes = 4;
    SttModel model(cfg, 11);
    Rng rng(4);
    Tape t;

    Tensor img_a = random_image(cfg, rng);
    Tensor img_b = Tensor::from_values({cfg.image_h, cfg.image_w, cfg.image_c},
                                       std::vector<double>(img_a.values().begin(), img_a.values().end()));
    // patch (gy=2, gx=1): pixel rows 12..17, cols 6..11 for the 48x24 grid 8x4
    const std::size_t py = 13, px = 7;
    img_b.values_mut()[(py * cfg.image_w + px) * cfg.image_c + 1] += 0.5;
    const std::size_t target_token = 2 * cfg.grid_w + 1;

    Tensor ta = model.encode_frame(t, img_a);
    Tensor tb = model.encode_frame(t, img_b);
    const std::size_t D = cfg.embed_dim;
    for (std::size_t tok = 0; tok < cfg.tokens_per_frame(); ++tok) {
        bool any_diff = false;
        for (std::size_t d = 0; d < D; ++d)
            if (ta.values()[tok * D + d] != tb.values()[tok * D + d]) any_diff = true;
        CHECK(any_diff == (tok == target_token));
    }
}

TEST_CASE("spatial forward shapes and attention normalization") {
    ModelConfig cfg = ModelConfig::desk();
    cfg.num_classes = 4;
    SttModel model(cfg, 21);
    Rng rng(5);
    Tape t;
    Tensor tokens = random_tokens(32, 64, rng);
    SpatialOut so = model.spatial_forward(t, tokens);
    CHECK(so.cls.shape() == std::vector<std::size_t>{64});
    CHECK(so.patches.shape() == std::vector<std::size_t>{32, 64});
    REQUIRE(so.attn.layers.size() == cfg.spatial_layers);
    CHECK(so.attn.class_row.shape() == std::vector<std::size_t>{32});
    CHECK(so.attn.head_averaged);

    for (const Tensor& A : so.attn.layers) {
        const std::size_t h = A.shape()[0], S = A.shape()[1];
        for (std::size_t hd = 0; hd < h; ++hd)
            for (std::size_t r = 0; r < S; ++r) {
                double acc = 0.0;
                for (std::size_t cidx = 0; cidx < S; ++cidx) acc += A.at({hd, r, cidx});
                CHECK(acc == doctest::Approx(1.0).epsilon(1e-9));
            }
    }
    double row_sum = 0.0;
    for (double v : so.attn.class_row.values()) {
        CHECK(v >= 0.0);
        row_sum += v;
    }
    CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-9));

    CHECK_THROWS_AS(model.spatial_forward(t, random_tokens(31, 64, rng)), dimension_error);
}

TEST_CASE("spatial output depends on token order only through positional embeddings") {
    ModelConfig cfg = ModelConfig::desk();
    cfg.num_classes = 4;
    Rng rng(6);
    std::vector<std::size_t> order(32);
    for (std::size_t i = 0; i < 32; ++i) order[i] = (i * 7 + 3) % 32;

    {
        // positional embeddings start at zero, so the class output is
        // permutation invariant right after init
        SttModel model(cfg, 31);
        Tape t;
        Tensor tokens = random_tokens(32, 64, rng);
        Tensor shuffled = permuted_rows(t, tokens, order);
        SpatialOut a = model.spatial_forward(t, tokens);
        SpatialOut b = model.spatial_forward(t, shuffled);
        CHECK(max_rel_diff(a.cls.values(), b.cls.values()) < 1e-6);
    }
    {
        SttModel model(cfg, 31);
        Rng prng(77);
        for (double& v : model.params().get("spatial.pos").values_mut()) v = prng.normal() * 0.1;
        Tape t;
        Tensor tokens = random_tokens(32, 64, rng);
        Tensor shuffled = permuted_rows(t, tokens, order);
        SpatialOut a = model.spatial_forward(t, tokens);
        SpatialOut b = model.spatial_forward(t, shuffled);
        CHECK(max_rel_diff(a.cls.values(), b.cls.values()) > 1e-4);
    }
}

TEST_CASE("temporal forward permutation equivariance and weight extraction") {
    ModelConfig cfg = ModelConfig::desk();
    cfg.num_classes = 4;
    SttModel model(cfg, 41);
    Rng rng(7);

    {
        Tape t;
        Tensor one = random_tokens(1, 64, rng);
        TemporalOut to = model.temporal_forward(t, one);
        REQUIRE(to.a.size() == 1);
        CHECK(to.a.values()[0] == doctest::Approx(1.0).epsilon(1e-12));
    }

    for (int trial = 0; trial < 10; ++trial) {
        Tape t;
        const std::size_t L = 6;
        Tensor tokens = random_tokens(L, 64, rng);
        std::vector<std::size_t> order{3, 0, 5, 1, 4, 2};
        Tensor shuffled = permuted_rows(t, tokens, order);
        TemporalOut a = model.temporal_forward(t, tokens);
        TemporalOut b = model.temporal_forward(t, shuffled);
        CHECK(max_rel_diff(a.token.values(), b.token.values()) < 1e-6);
        // frame outputs follow their frames
        for (std::size_t i = 0; i < L; ++i) {
            auto lhs = std::span<const double>(b.frame_outputs.values().data() + i * 64, 64);
            auto rhs = std::span<const double>(a.frame_outputs.values().data() + order[i] * 64, 64);
            CHECK(max_rel_diff(lhs, rhs) < 1e-6);
        }
        double s = 0.0;
        for (double v : a.a.values()) s += v;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("global forward is permutation invariant") {
    ModelConfig cfg = ModelConfig::desk();
    cfg.num_classes = 4;
    SttModel model(cfg, 51);
    Rng rng(8);
    const std::size_t n = 2 * cfg.tokens_per_frame();

    for (int trial = 0; trial < 10; ++trial) {
        Tape t;
        Tensor tokens = random_tokens(n, 64, rng);
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        Rng shuffle_rng(trial + 100);
        shuffle_rng.shuffle(order);
        Tensor shuffled = permuted_rows(t, tokens, order);
        Tensor a = model.global_forward(t, tokens);
        Tensor b = model.global_forward(t, shuffled);
        CHECK(max_rel_diff(a.values(), b.values()) < 1e-6);
    }
    Tape t;
    CHECK_THROWS_AS(model.global_forward(t, random_tokens(33, 64, rng)), dimension_error);
}

TEST_CASE("representation length, frame-order invariance, determinism") {
    ModelConfig cfg = ModelConfig::desk();
    cfg.num_classes = 4;
    SttModel model(cfg, 61);
    Rng rng(9);

    std::vector<Tensor> frames;
    for (int i = 0; i < 4; ++i) frames.push_back(random_image(cfg, rng));
    std::vector<Tensor> reversed(frames.rbegin(), frames.rend());

    Tape t;
    Tensor rep_t = model.extract_representation(t, frames, false);
    Tensor rep_g = model.extract_representation(t, frames, true);
    CHECK(rep_t.shape() == std::vector<std::size_t>{64});
    CHECK(rep_g.shape() == std::vector<std::size_t>{128});

    Tensor rep_rev = model.extract_representation(t, reversed, true);
    CHECK(max_rel_diff(rep_g.values(), rep_rev.values()) < 1e-6);

    Tensor rep_again = model.extract_representation(t, frames, true);
    for (std::size_t i = 0; i < rep_g.size(); ++i) CHECK(rep_g.values()[i] == rep_again.values()[i]);

    CHECK_THROWS_AS(model.extract_representation(t, {}, false), contract_error);
}

TEST_CASE("same seed reproduces parameters bitwise, different seed does not") {
    ModelConfig cfg = ModelConfig::gradcheck_desk();
    SttModel a(cfg, 123), b(cfg, 123), c(cfg, 124);
    bool any_diff_seed = false;
    for (const auto& name : a.params().names()) {
        auto va = a.params().get(name).values();
        auto vb = b.params().get(name).values();
        for (std::size_t i = 0; i < va.size(); ++i) CHECK(va[i] == vb[i]);
        auto vc = c.params().get(name).values();
        for (std::size_t i = 0; i < va.size(); ++i)
            if (va[i] != vc[i]) any_diff_seed = true;
    }
    CHECK(any_diff_seed);
}

TEST_CASE("init is independent of head class count") {
    ModelConfig c2 = ModelConfig::gradcheck_desk();
    ModelConfig c9 = ModelConfig::gradcheck_desk();
    c9.num_classes = 9;
    SttModel m2(c2, 55), m9(c9, 55);
    for (const auto& name : m2.params().names()) {
        if (name.rfind("head.", 0) == 0) continue;
        auto a = m2.params().get(name).values();
        auto b = m9.params().get(name).values();
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }
}

TEST_CASE("reinit_heads matches a fresh model with the new class count") {
    ModelConfig cfg = ModelConfig::gradcheck_desk();
    SttModel model(cfg, 200);
    std::vector<std::vector<double>> body_before;
    for (const auto& name : model.params().names())
        if (name.rfind("head.", 0) != 0) {
            auto v = model.params().get(name).values();
            body_before.emplace_back(v.begin(), v.end());
        }

    model.reinit_heads(7, 300);
    CHECK(model.config().num_classes == 7);
    CHECK(model.params().get("head.temporal.w").shape() == std::vector<std::size_t>{16, 7});

    ModelConfig cfg7 = cfg;
    cfg7.num_classes = 7;
    SttModel fresh(cfg7, 300);
    for (const auto& name : model.params().names()) {
        if (name.rfind("head.", 0) != 0) continue;
        auto a = model.params().get(name).values();
        auto b = fresh.params().get(name).values();
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }
    std::size_t bi = 0;
    for (const auto& name : model.params().names())
        if (name.rfind("head.", 0) != 0) {
            auto v = model.params().get(name).values();
            CHECK(std::vector<double>(v.begin(), v.end()) == body_before[bi++]);
        }
}

TEST_CASE("checkpoint round trip preserves forward outputs") {
    ModelConfig cfg = ModelConfig::gradcheck_desk();
    SttModel model(cfg, 71);
    Rng rng(10);
    std::vector<Tensor> frames;
    for (int i = 0; i < 2; ++i) frames.push_back(random_image(cfg, rng));

    Tape t;
    Tensor before = model.extract_representation(t, frames, true);

    CheckpointMeta meta;
    meta.model_config_json = cfg.to_json();
    model.params().save("tmp_model_ckpt.bin", meta);
    ParameterStore loaded = ParameterStore::load("tmp_model_ckpt.bin");
    SttModel back(cfg, std::move(loaded));
    Tensor after = back.extract_representation(t, frames, true);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before.values()[i] == after.values()[i]);

    ParameterStore broken = ParameterStore::load("tmp_model_ckpt.bin");
    broken.erase_prefix("temporal.cls");
    CHECK_THROWS_AS(SttModel(cfg, std::move(broken)), contract_error);
}

// Fresh-init attention is near uniform and leaves some query/key gradients
// below finite-difference resolution, so check at a generic parameter point.
static void move_to_generic_point(SttModel& model, std::uint64_t seed, double scale) {
    Rng rng(seed);
    for (const auto& name : model.params().names()) {
        bool gain = name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0;
        for (double& v : model.params().get(name).values_mut())
            v = (gain ? 1.0 : 0.0) + scale * rng.normal();
    }
}

TEST_CASE("head outputs pass a full-parameter gradient check") {
    ModelConfig cfg = ModelConfig::gradcheck_desk();
    SttModel model(cfg, 81);
    move_to_generic_point(model, 1717, 0.25);
    Rng rng(12);
    std::vector<Tensor> frames;
    for (int i = 0; i < 2; ++i) frames.push_back(random_image(cfg, rng));

    Tensor w_t = Tensor::zeros({1, cfg.num_classes});
    Tensor w_g = Tensor::zeros({1, cfg.num_classes});
    for (double& v : w_t.values_mut()) v = rng.normal();
    for (double& v : w_g.values_mut()) v = rng.normal();

    auto fn = [&](Tape& t) {
        Tensor rep = model.extract_representation(t, frames, true);
        Tensor tem = reshape(t, slice_rows(t, rep, 0, cfg.embed_dim), {1, cfg.embed_dim});
        Tensor glo = reshape(t, slice_rows(t, rep, cfg.embed_dim, 2 * cfg.embed_dim),
                             {1, cfg.embed_dim});
        Tensor s1 = sum_all(t, mul(t, model.head_logits(t, "temporal", tem), w_t));
        Tensor s2 = sum_all(t, mul(t, model.head_logits(t, "global", glo), w_g));
        return add(t, s1, s2);
    };
    CHECK(grad_check(fn, model.params(), 1e-4) < 1e-4);
}
