#include "stt/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <set>

#include "stt/serialize.hpp"

namespace stt {

void DomainSpec::validate() const {
    if (domain_id.empty()) throw config_error("domain_id must be non-empty");
    if (num_identities < 1) throw config_error("num_identities must be >= 1");
    if (tracklets_per_id < 1) throw config_error("tracklets_per_id must be >= 1");
    if (frames_per_tracklet < 1) throw config_error("frames_per_tracklet must be >= 1");
    if (image_h < 8 || image_w < 8) throw config_error("image dims must be >= 8");
    if (channels != 3) throw config_error("renderer produces RGB, channels must be 3");
    if (num_cameras < 2) throw config_error("cross-camera evaluation needs >= 2 cameras");
    if (camera_bg.size() != num_cameras || camera_tint.size() != num_cameras)
        throw config_error("camera_bg/camera_tint must have one entry per camera");
    if (occlusion_prob < 0.0 || occlusion_prob > 1.0)
        throw config_error("occlusion_prob must be in [0, 1]");
    if (distractor_prob < 0.0 || distractor_prob > 1.0)
        throw config_error("distractor_prob must be in [0, 1]");
    double lim = 0.5 * static_cast<double>(std::min(image_h, image_w));
    if (jitter_px < 0.0 || jitter_px >= lim)
        throw config_error("jitter_px must be in [0, min(image dims)/2)");
}

static nlohmann::json color_list(const std::vector<std::array<double, 3>>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& c : v) a.push_back({c[0], c[1], c[2]});
    return a;
}

static std::vector<std::array<double, 3>> parse_color_list(const nlohmann::json& a,
                                                           const std::string& key) {
    if (!a.is_array()) throw config_error(key + " must be an array of [r,g,b] triples");
    std::vector<std::array<double, 3>> out;
    for (const auto& e : a) {
        if (!e.is_array() || e.size() != 3) throw config_error(key + " entries must be [r,g,b]");
        out.push_back({e[0].get<double>(), e[1].get<double>(), e[2].get<double>()});
    }
    return out;
}

std::string DomainSpec::to_json() const {
    nlohmann::json j;
    j["domain_id"] = domain_id;
    j["num_identities"] = num_identities;
    j["tracklets_per_id"] = tracklets_per_id;
    j["frames_per_tracklet"] = frames_per_tracklet;
    j["image_h"] = image_h;
    j["image_w"] = image_w;
    j["channels"] = channels;
    j["num_cameras"] = num_cameras;
    j["camera_bg"] = color_list(camera_bg);
    j["camera_tint"] = color_list(camera_tint);
    j["jitter_px"] = jitter_px;
    j["occlusion_prob"] = occlusion_prob;
    j["distractor_prob"] = distractor_prob;
    j["seed"] = seed;
    return j.dump();
}

DomainSpec DomainSpec::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("domain spec JSON parse failed: ") + e.what());
    }
    if (!j.is_object()) throw config_error("domain spec must be a JSON object");
    static const std::set<std::string> known = {
        "domain_id",   "num_identities", "tracklets_per_id", "frames_per_tracklet",
        "image_h",     "image_w",        "channels",         "num_cameras",
        "camera_bg",   "camera_tint",    "jitter_px",        "occlusion_prob",
        "distractor_prob", "seed"};
    for (const auto& item : j.items())
        if (!known.count(item.key()))
            throw config_error("unknown domain spec key: " + item.key());
    DomainSpec s;
    try {
        if (j.count("domain_id")) s.domain_id = j["domain_id"].get<std::string>();
        if (j.count("num_identities")) s.num_identities = j["num_identities"].get<std::size_t>();
        if (j.count("tracklets_per_id")) s.tracklets_per_id = j["tracklets_per_id"].get<std::size_t>();
        if (j.count("frames_per_tracklet"))
            s.frames_per_tracklet = j["frames_per_tracklet"].get<std::size_t>();
        if (j.count("image_h")) s.image_h = j["image_h"].get<std::size_t>();
        if (j.count("image_w")) s.image_w = j["image_w"].get<std::size_t>();
        if (j.count("channels")) s.channels = j["channels"].get<std::size_t>();
        if (j.count("num_cameras")) s.num_cameras = j["num_cameras"].get<std::size_t>();
        if (j.count("camera_bg")) s.camera_bg = parse_color_list(j["camera_bg"], "camera_bg");
        if (j.count("camera_tint")) s.camera_tint = parse_color_list(j["camera_tint"], "camera_tint");
        if (j.count("jitter_px")) s.jitter_px = j["jitter_px"].get<double>();
        if (j.count("occlusion_prob")) s.occlusion_prob = j["occlusion_prob"].get<double>();
        if (j.count("distractor_prob")) s.distractor_prob = j["distractor_prob"].get<double>();
        if (j.count("seed")) s.seed = j["seed"].get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("domain spec field type error: ") + e.what());
    }
    s.validate();
    return s;
}

Tensor Tracklet::frame(std::size_t t) const {
    if (t >= length()) throw contract_error("frame index out of range");
    Tensor out = Tensor::zeros({h, w, c});
    auto v = out.values_mut();
    const std::uint8_t* src = pixels.data() + t * h * w * c;
    for (std::size_t i = 0; i < h * w * c; ++i) v[i] = static_cast<double>(src[i]) / 255.0;
    return out;
}

std::vector<Tensor> Tracklet::frames(const std::vector<std::size_t>& idx) const {
    std::vector<Tensor> out;
    out.reserve(idx.size());
    for (std::size_t t : idx) out.push_back(frame(t));
    return out;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

struct Frame {
    std::size_t h, w;
    std::vector<double> px;  // h*w*3
    Frame(std::size_t h_, std::size_t w_) : h(h_), w(w_), px(h_ * w_ * 3, 0.0) {}
    void set(std::size_t r, std::size_t col, const std::array<double, 3>& color) {
        double* p = &px[(r * w + col) * 3];
        p[0] = color[0];
        p[1] = color[1];
        p[2] = color[2];
    }
};

void fill_rect(Frame& f, double r0, double r1, double c0, double c1,
               const std::array<double, 3>& color) {
    long rb = std::max(0L, std::lround(r0));
    long re = std::min(static_cast<long>(f.h) - 1, std::lround(r1));
    long cb = std::max(0L, std::lround(c0));
    long ce = std::min(static_cast<long>(f.w) - 1, std::lround(c1));
    for (long r = rb; r <= re; ++r)
        for (long c = cb; c <= ce; ++c)
            f.set(static_cast<std::size_t>(r), static_cast<std::size_t>(c), color);
}

void fill_ellipse(Frame& f, double cy, double cx, double ry, double rx,
                  const std::array<double, 3>& color) {
    long rb = std::max(0L, std::lround(cy - ry));
    long re = std::min(static_cast<long>(f.h) - 1, std::lround(cy + ry));
    long cb = std::max(0L, std::lround(cx - rx));
    long ce = std::min(static_cast<long>(f.w) - 1, std::lround(cx + rx));
    for (long r = rb; r <= re; ++r)
        for (long c = cb; c <= ce; ++c) {
            double dy = (static_cast<double>(r) - cy) / ry;
            double dx = (static_cast<double>(c) - cx) / rx;
            if (dy * dy + dx * dx <= 1.0)
                f.set(static_cast<std::size_t>(r), static_cast<std::size_t>(c), color);
        }
}

// Figure vertical span as fractions of image height; the occlusion bar and
// the distractor placement both reference it.
constexpr double kFigTop = 0.10;
constexpr double kFigBottom = 0.92;

void draw_figure(Frame& f, const IdentityAppearance& a, double cx, double dy, double phase) {
    double h = static_cast<double>(f.h);
    double w = static_cast<double>(f.w);
    double top = kFigTop * h + dy;
    double bottom = kFigBottom * h + dy;
    double rh = a.head_radius * h;
    double torso_top = top + 2.0 * rh + 1.0;
    double torso_bot = torso_top + a.torso_height * h;
    double tw = a.torso_width * 0.5 * w;
    double swing = 0.06 * w * std::sin(phase);

    double leg_w = 0.35 * tw;
    fill_rect(f, torso_bot, bottom, cx - 0.55 * tw + swing - leg_w, cx - 0.55 * tw + swing,
              a.leg_color);
    fill_rect(f, torso_bot, bottom, cx + 0.55 * tw - swing, cx + 0.55 * tw - swing + leg_w,
              a.leg_color);
    fill_rect(f, torso_top, torso_bot, cx - tw, cx + tw, a.torso_color);
    fill_ellipse(f, top + rh, cx, rh, 0.8 * rh, a.head_color);
}

double hash_noise(std::uint64_t key) {
    std::uint64_t s = key;
    return static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53 - 0.5;
}

IdentityAppearance random_appearance(Rng& rng) {
    IdentityAppearance a;
    for (auto* col : {&a.head_color, &a.torso_color, &a.leg_color})
        for (double& v : *col) v = rng.uniform(0.05, 0.95);
    a.torso_width = rng.uniform(0.38, 0.62);
    a.torso_height = rng.uniform(0.28, 0.40);
    a.head_radius = rng.uniform(0.07, 0.12);
    a.bob_speed = rng.uniform(0.25, 0.75);
    return a;
}

Tracklet render_tracklet(const DomainSpec& spec, const IdentityAppearance& app,
                         std::size_t identity, std::size_t camera, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t H = spec.image_h, W = spec.image_w, L = spec.frames_per_tracklet;
    Tracklet tk;
    tk.identity = identity;
    tk.camera = camera;
    tk.h = H;
    tk.w = W;
    tk.c = 3;
    tk.pixels.resize(L * H * W * 3);
    tk.occluded.assign(L, 0);
    tk.distractor.assign(L, 0);

    double phase0 = rng.uniform(0.0, 2.0 * M_PI);
    double drift = rng.uniform(-0.12, 0.12) * static_cast<double>(W);
    double base_cx = (0.5 + rng.uniform(-0.06, 0.06)) * static_cast<double>(W);
    const auto& bg = spec.camera_bg[camera];
    const auto& tint = spec.camera_tint[camera];

    for (std::size_t t = 0; t < L; ++t) {
        Frame f(H, W);
        // Background: camera base color, a vertical gradient, hashed grain.
        for (std::size_t r = 0; r < H; ++r)
            for (std::size_t c = 0; c < W; ++c) {
                double grad = 0.08 * (static_cast<double>(r) / static_cast<double>(H) - 0.5);
                double grain =
                    0.06 * hash_noise(seed ^ (t * 0x9e3779b9ULL + r * 8191ULL + c * 131ULL + 7ULL));
                for (std::size_t ch = 0; ch < 3; ++ch)
                    f.px[(r * W + c) * 3 + ch] = bg[ch] + grad + grain;
            }

        double dx = rng.uniform(-spec.jitter_px, spec.jitter_px);
        double dy = rng.uniform(-spec.jitter_px, spec.jitter_px);
        double prog = L > 1 ? static_cast<double>(t) / static_cast<double>(L - 1) - 0.5 : 0.0;
        double phase = 2.0 * M_PI * app.bob_speed * static_cast<double>(t) + phase0;
        double bob = 0.02 * static_cast<double>(H) * std::sin(phase);
        double cx = base_cx + drift * prog + dx;

        if (rng.uniform() < spec.distractor_prob) {
            tk.distractor[t] = 1;
            IdentityAppearance other = random_appearance(rng);
            double side = rng.uniform() < 0.5 ? 0.04 : 0.96;
            double dcx = side * static_cast<double>(W) + rng.uniform(-1.5, 1.5);
            draw_figure(f, other, dcx, rng.uniform(-2.0, 2.0), rng.uniform(0.0, 2.0 * M_PI));
        }

        draw_figure(f, app, cx, bob + dy, phase);

        if (rng.uniform() < spec.occlusion_prob) {
            tk.occluded[t] = 1;
            // Opaque full-width bar over more than half of the figure rows.
            double g = rng.uniform(0.08, 0.25);
            double top = (kFigTop + 0.18) * static_cast<double>(H) + bob + dy;
            double span = 0.58 * (kFigBottom - kFigTop) * static_cast<double>(H);
            fill_rect(f, top, top + span, 0.0, static_cast<double>(W) - 1.0, {g, g, g * 1.1});
        }

        std::uint8_t* out = tk.pixels.data() + t * H * W * 3;
        for (std::size_t i = 0; i < H * W; ++i)
            for (std::size_t ch = 0; ch < 3; ++ch) {
                double v = f.px[i * 3 + ch] * tint[ch];
                v = std::min(1.0, std::max(0.0, v));
                out[i * 3 + ch] = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
    }
    return tk;
}

}  // namespace

std::vector<IdentityAppearance> draw_appearances(std::size_t count, Rng& rng) {
    std::vector<IdentityAppearance> out;
    out.reserve(count);
    // Two identities must stay apart overall, and also apart on the body
    // parts an occlusion bar cannot hide, or tiny galleries get unresolvable
    // near-duplicate pairs.
    const double min_dist = 0.8;
    const double min_body_dist = 0.55;
    for (std::size_t i = 0; i < count; ++i) {
        IdentityAppearance cand;
        bool ok = false;
        for (int attempt = 0; attempt < 40000 && !ok; ++attempt) {
            cand = random_appearance(rng);
            ok = true;
            for (const auto& prev : out) {
                double head = 0.0, body = 0.0;
                for (std::size_t k = 0; k < 3; ++k) {
                    head += (cand.head_color[k] - prev.head_color[k]) *
                            (cand.head_color[k] - prev.head_color[k]);
                    body += (cand.torso_color[k] - prev.torso_color[k]) *
                            (cand.torso_color[k] - prev.torso_color[k]);
                    body += (cand.leg_color[k] - prev.leg_color[k]) *
                            (cand.leg_color[k] - prev.leg_color[k]);
                }
                if (std::sqrt(head + body) < min_dist || std::sqrt(body) < min_body_dist) {
                    ok = false;
                    break;
                }
            }
        }
        if (!ok) throw contract_error("could not draw a sufficiently distinct appearance");
        out.push_back(cand);
    }
    return out;
}

Dataset generate_domain(const DomainSpec& spec) {
    spec.validate();
    if (spec.num_identities < 2) throw contract_error("need at least 2 identities");
    if (spec.tracklets_per_id < 2)
        throw contract_error("need at least 2 tracklets per identity for query/gallery");

    Rng app_rng(mix_seed(spec.seed, fnv1a64("appearance")));
    auto appearances = draw_appearances(spec.num_identities, app_rng);

    Dataset d;
    d.spec = spec;
    // Three quarters of the identities train; the rest are retrieval ids whose
    // even tracklets probe against the odd ones. Consecutive tracklets sit on
    // different cameras, so every query keeps a cross-camera gallery mate.
    d.num_train_ids = std::max<std::size_t>(1, spec.num_identities * 3 / 4);
    if (d.num_train_ids == spec.num_identities) d.num_train_ids = spec.num_identities - 1;
    for (std::size_t i = 0; i < spec.num_identities; ++i) {
        for (std::size_t k = 0; k < spec.tracklets_per_id; ++k) {
            std::size_t camera = (i + k) % spec.num_cameras;
            std::uint64_t tseed = mix_seed(
                spec.seed, fnv1a64(spec.domain_id + "/" + std::to_string(i) + "/" + std::to_string(k)));
            Tracklet tk = render_tracklet(spec, appearances[i], i, camera, tseed);
            if (i < d.num_train_ids)
                d.train.push_back(std::move(tk));
            else if (k % 2 == 0)
                d.query.push_back(std::move(tk));
            else
                d.gallery.push_back(std::move(tk));
        }
    }
    return d;
}

std::vector<std::size_t> restricted_sample(std::size_t length, std::size_t n, Rng* rng) {
    if (length < 1) throw contract_error("restricted_sample needs a non-empty tracklet");
    if (n < 1) throw contract_error("restricted_sample needs n >= 1");
    std::vector<std::size_t> out;
    out.reserve(n);
    if (length < n) {
        for (std::size_t i = 0; i < n; ++i) out.push_back(i % length);
        return out;
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t begin = i * length / n;
        std::size_t end = (i + 1) * length / n;
        if (rng)
            out.push_back(begin + static_cast<std::size_t>(rng->uniform_index(end - begin)));
        else
            out.push_back((begin + end) / 2);
    }
    return out;
}

std::vector<std::vector<std::size_t>> balanced_batches(const std::vector<Tracklet>& train,
                                                       std::size_t p_ids, std::size_t k_tracklets,
                                                       Rng& rng) {
    if (p_ids < 1 || k_tracklets < 1) throw contract_error("P and K must be >= 1");
    std::map<std::size_t, std::vector<std::size_t>> by_id;
    for (std::size_t i = 0; i < train.size(); ++i) by_id[train[i].identity].push_back(i);
    if (by_id.size() < p_ids)
        throw contract_error("batch needs " + std::to_string(p_ids) + " identities, dataset has " +
                             std::to_string(by_id.size()));

    std::vector<std::size_t> ids;
    ids.reserve(by_id.size());
    for (const auto& kv : by_id) ids.push_back(kv.first);
    rng.shuffle(ids);

    std::size_t num_batches = (ids.size() + p_ids - 1) / p_ids;
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t b = 0; b < num_batches; ++b) {
        std::vector<std::size_t> batch_ids(ids.begin() + static_cast<std::ptrdiff_t>(b * p_ids),
                                           ids.begin() + static_cast<std::ptrdiff_t>(
                                                             std::min((b + 1) * p_ids, ids.size())));
        while (batch_ids.size() < p_ids) {
            // Last batch: top up with already-covered identities, kept distinct.
            std::size_t cand = ids[rng.uniform_index(b * p_ids)];
            if (std::find(batch_ids.begin(), batch_ids.end(), cand) == batch_ids.end())
                batch_ids.push_back(cand);
        }
        std::vector<std::size_t> batch;
        for (std::size_t id : batch_ids) {
            const auto& group = by_id[id];
            if (group.size() >= k_tracklets) {
                std::vector<std::size_t> pool = group;
                rng.shuffle(pool);
                for (std::size_t k = 0; k < k_tracklets; ++k) batch.push_back(pool[k]);
            } else {
                for (std::size_t k = 0; k < k_tracklets; ++k)
                    batch.push_back(group[rng.uniform_index(group.size())]);
            }
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

// ---------------------------------------------------------------------------
// Persistence

static void write_tracklet_file(const Tracklet& tk, const std::string& path) {
    ByteWriter w;
    w.str_raw("STTK");
    w.u32(static_cast<std::uint32_t>(tk.length()));
    w.u32(static_cast<std::uint32_t>(tk.h));
    w.u32(static_cast<std::uint32_t>(tk.w));
    w.u32(static_cast<std::uint32_t>(tk.c));
    w.raw(tk.pixels.data(), tk.pixels.size());
    w.write_file(path);
}

static nlohmann::json flag_array(const std::vector<std::uint8_t>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (std::uint8_t f : v) a.push_back(static_cast<int>(f));
    return a;
}

void save_dataset(const Dataset& d, const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("cannot create directory " + dir + ": " + ec.message());

    nlohmann::json manifest;
    manifest["domain"] = nlohmann::json::parse(d.spec.to_json());
    manifest["num_train_ids"] = d.num_train_ids;
    nlohmann::json records = nlohmann::json::array();
    std::size_t n = 0;
    auto emit = [&](const std::vector<Tracklet>& split, const char* split_name) {
        for (const Tracklet& tk : split) {
            char name[32];
            std::snprintf(name, sizeof(name), "t%05zu.bin", n++);
            write_tracklet_file(tk, dir + "/" + name);
            nlohmann::json rec;
            rec["file"] = name;
            rec["split"] = split_name;
            rec["identity"] = tk.identity;
            rec["camera"] = tk.camera;
            rec["occluded"] = flag_array(tk.occluded);
            rec["distractor"] = flag_array(tk.distractor);
            records.push_back(std::move(rec));
        }
    };
    emit(d.train, "train");
    emit(d.query, "query");
    emit(d.gallery, "gallery");
    manifest["tracklets"] = std::move(records);

    std::ofstream out(dir + "/manifest.json", std::ios::trunc);
    if (!out) throw io_error("cannot write " + dir + "/manifest.json");
    out << manifest.dump(2) << "\n";
    if (!out) throw io_error("write failed: " + dir + "/manifest.json");
}

static std::vector<std::uint8_t> parse_flags(const nlohmann::json& a, const std::string& what) {
    if (!a.is_array()) throw format_error("manifest: " + what + " must be an array");
    std::vector<std::uint8_t> out;
    for (const auto& e : a) out.push_back(e.get<int>() ? 1 : 0);
    return out;
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw io_error("cannot open " + dir + "/manifest.json");
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw format_error(dir + "/manifest.json: " + e.what());
    }
    for (const char* key : {"domain", "num_train_ids", "tracklets"})
        if (!manifest.count(key))
            throw format_error(dir + "/manifest.json: missing key " + std::string(key));

    Dataset d;
    d.spec = DomainSpec::from_json(manifest["domain"].dump());
    d.num_train_ids = manifest["num_train_ids"].get<std::size_t>();

    for (const auto& rec : manifest["tracklets"]) {
        for (const char* key : {"file", "split", "identity", "camera", "occluded", "distractor"})
            if (!rec.count(key))
                throw format_error(dir + "/manifest.json: tracklet record missing " +
                                   std::string(key));
        Tracklet tk;
        tk.identity = rec["identity"].get<std::size_t>();
        tk.camera = rec["camera"].get<std::size_t>();
        tk.occluded = parse_flags(rec["occluded"], "occluded");
        tk.distractor = parse_flags(rec["distractor"], "distractor");

        std::string path = dir + "/" + rec["file"].get<std::string>();
        ByteReader r = ByteReader::from_file(path);
        r.expect_magic("STTK");
        std::size_t L = r.u32();
        tk.h = r.u32();
        tk.w = r.u32();
        tk.c = r.u32();
        if (L != tk.occluded.size())
            throw format_error(path + ": frame count " + std::to_string(L) +
                               " does not match manifest flags (" +
                               std::to_string(tk.occluded.size()) + ")");
        if (tk.h != d.spec.image_h || tk.w != d.spec.image_w || tk.c != d.spec.channels)
            throw format_error(path + ": frame dims disagree with the domain spec");
        tk.pixels.resize(L * tk.h * tk.w * tk.c);
        r.raw(tk.pixels.data(), tk.pixels.size());
        if (r.remaining() != 0)
            throw format_error(path + ": trailing bytes at offset " + std::to_string(r.offset()));

        std::string split = rec["split"].get<std::string>();
        if (split == "train")
            d.train.push_back(std::move(tk));
        else if (split == "query")
            d.query.push_back(std::move(tk));
        else if (split == "gallery")
            d.gallery.push_back(std::move(tk));
        else
            throw format_error(dir + "/manifest.json: unknown split " + split);
    }
    return d;
}

Tracklet load_tracklet_file(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("STTK");
    std::size_t L = r.u32();
    Tracklet tk;
    tk.h = r.u32();
    tk.w = r.u32();
    tk.c = r.u32();
    if (L == 0 || tk.h == 0 || tk.w == 0 || tk.c == 0)
        throw format_error(path + ": empty tracklet dimensions");
    tk.occluded.assign(L, 0);
    tk.distractor.assign(L, 0);
    tk.pixels.resize(L * tk.h * tk.w * tk.c);
    r.raw(tk.pixels.data(), tk.pixels.size());
    if (r.remaining() != 0)
        throw format_error(path + ": trailing bytes at offset " + std::to_string(r.offset()));
    return tk;
}

DomainSpec preset_domain(const std::string& name) {
    DomainSpec s;
    if (name == "A") {
        // Cool gray halls; cameras agree on background and differ mildly in
        // illumination, so the domain trains cleanly at desk scale.
        s.domain_id = "A";
        s.seed = 1001;
        s.camera_bg = {{0.50, 0.52, 0.55}, {0.49, 0.51, 0.54}, {0.51, 0.53, 0.56}, {0.50, 0.51, 0.53}};
        s.camera_tint = {{1.00, 1.00, 1.00}, {1.10, 0.96, 0.88}, {0.90, 1.02, 1.10}, {1.06, 1.06, 0.90}};
    } else if (name == "B") {
        // Dark warehouse with strongly colored lamps per camera. Cross-camera
        // retrieval here rewards illumination-invariant features.
        s.domain_id = "B";
        s.seed = 2002;
        s.camera_bg = {{0.33, 0.30, 0.26}, {0.34, 0.31, 0.27}, {0.32, 0.30, 0.25}, {0.33, 0.29, 0.26}};
        s.camera_tint = {{1.30, 1.00, 0.68}, {0.68, 1.00, 1.30}, {1.12, 1.24, 0.70}, {0.84, 0.80, 1.26}};
    } else if (name == "C") {
        s.domain_id = "C";
        s.seed = 3003;
        s.num_identities = 64;
        s.tracklets_per_id = 6;
        s.num_cameras = 6;
        s.jitter_px = 3.0;
        s.occlusion_prob = 0.25;
        s.distractor_prob = 0.25;
        s.camera_bg = {{0.18, 0.18, 0.20}, {0.65, 0.60, 0.55}, {0.25, 0.35, 0.30},
                       {0.55, 0.45, 0.50}, {0.30, 0.22, 0.35}, {0.60, 0.65, 0.45}};
        s.camera_tint = {{1.10, 1.00, 0.90}, {0.90, 1.00, 1.10}, {1.05, 0.95, 1.00},
                        {0.95, 1.05, 0.95}, {1.00, 0.90, 1.05}, {0.92, 1.00, 1.04}};
    } else {
        throw config_error("unknown domain preset: " + name + " (expected A, B, or C)");
    }
    return s;
}

}  // namespace stt
