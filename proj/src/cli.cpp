#include "stt/cli.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stt/common.hpp"
#include "stt/data.hpp"
#include "stt/eval.hpp"
#include "stt/losses.hpp"
#include "stt/model.hpp"
#include "stt/param_store.hpp"
#include "stt/rng.hpp"
#include "stt/tensor.hpp"
#include "stt/trainer.hpp"

namespace stt {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string slurp_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    fs::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write " + path);
    out << text;
    out.flush();
    if (!out) throw io_error("short write to " + path);
}

std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t file_hash(const std::string& path) { return fnv1a64(slurp_text(path)); }

std::string resolve(const std::string& workdir, const std::string& p) {
    if (p.empty()) return p;
    fs::path q(p);
    if (q.is_absolute() || workdir.empty() || workdir == ".") return p;
    return (fs::path(workdir) / q).string();
}

struct RunContext {
    std::string workdir = ".";
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    std::string path(const std::string& p) const { return resolve(workdir, p); }
    double elapsed_s() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

/// Files directly inside dir, sorted by name. Skips the run manifest so a
/// rerun does not hash the previous manifest into the new one.
std::vector<std::string> list_dir_files(const std::string& dir) {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "run_manifest.json")
            out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

void write_run_manifest(const RunContext& rc, const std::string& out_dir,
                        const std::string& command, const json& config,
                        const std::vector<std::uint64_t>& seeds,
                        const std::vector<std::string>& inputs,
                        const std::vector<std::string>& outputs,
                        const json& results = json::object()) {
    json j;
    j["command"] = command;
    j["config"] = config;
    j["seeds"] = seeds;
    j["inputs"] = inputs;
    json outs = json::array();
    for (const std::string& p : outputs) {
        std::error_code ec;
        fs::path rel = fs::relative(p, out_dir, ec);
        std::string shown = (ec || rel.empty() || rel.native().starts_with("..")) ? p : rel.string();
        outs.push_back(json{{"path", shown}, {"fnv1a64", hex64(file_hash(p))}});
    }
    j["outputs"] = outs;
    j["results"] = results;
    j["wall_time_s"] = rc.elapsed_s();
    write_text(out_dir + "/run_manifest.json", j.dump(2) + "\n");
}

bool env_seed(std::uint64_t* out) {
    const char* v = std::getenv("STT_SEED");
    if (!v || !*v) return false;
    char* end = nullptr;
    errno = 0;
    unsigned long long parsed = std::strtoull(v, &end, 10);
    if (errno != 0 || end == v || *end != '\0')
        throw config_error("STT_SEED must be an unsigned integer, got '" + std::string(v) + "'");
    *out = parsed;
    return true;
}

SttModel load_model(const std::string& ckpt, CheckpointMeta* meta_out = nullptr) {
    CheckpointMeta meta;
    ParameterStore ps = ParameterStore::load(ckpt, &meta);
    if (meta.model_config_json.empty())
        throw format_error(ckpt + ": sidecar metadata lacks the model configuration");
    ModelConfig mc = ModelConfig::from_json(meta.model_config_json);
    if (meta_out) *meta_out = meta;
    return SttModel(mc, std::move(ps));
}

void move_to_generic_point(SttModel& model, std::uint64_t seed, double scale) {
    // Fresh-init attention is near uniform, which leaves query/key gradients
    // below finite-difference resolution; check at a random parameter point.
    Rng prng(seed);
    for (const std::string& name : model.params().names()) {
        Tensor& p = model.params().get(name);
        bool gain = name.size() >= 2 && name.compare(name.size() - 2, 2, ".g") == 0;
        for (double& v : p.values_mut()) v = (gain ? 1.0 : 0.0) + scale * prng.normal();
    }
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataOpts {
    std::string preset = "A";
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    bool has_seed = false;
};

int cmd_gen_data(const RunContext& rc, const GenDataOpts& o) {
    DomainSpec spec = o.config.empty() ? preset_domain(o.preset)
                                       : DomainSpec::from_json(slurp_text(rc.path(o.config)));
    if (o.has_seed) spec.seed = o.seed;
    std::uint64_t env = 0;
    if (env_seed(&env)) spec.seed = env;

    Dataset ds = generate_domain(spec);
    std::string out = rc.path(o.out);
    save_dataset(ds, out);

    std::vector<std::string> inputs;
    if (!o.config.empty()) inputs.push_back(rc.path(o.config));
    json results{{"tracklets", ds.train.size() + ds.query.size() + ds.gallery.size()},
                 {"train", ds.train.size()},
                 {"query", ds.query.size()},
                 {"gallery", ds.gallery.size()},
                 {"train_identities", ds.num_train_ids}};
    write_run_manifest(rc, out, "gen-data", json::parse(spec.to_json()), {spec.seed}, inputs,
                       list_dir_files(out), results);
    std::fprintf(stderr, "gen-data: domain %s, %zu tracklets (%zu train / %zu query / %zu gallery) in %s\n",
                 ds.spec.domain_id.c_str(), ds.train.size() + ds.query.size() + ds.gallery.size(),
                 ds.train.size(), ds.query.size(), ds.gallery.size(), out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
    std::string data;
    std::string out;
    std::string config;
    std::string model_config;
    std::string variant;
    std::string init;
    std::string pretrain_data;
    long long epochs = -1;
    long long pretrain_epochs = -1;
    std::uint64_t seed = 0;
    bool has_seed = false;
};

void apply_variant(TrainConfig& tc, const std::string& v) {
    if (v == "vanilla") {
        tc.vanilla = true;
        tc.toggles = LossToggles{};
    } else if (v == "spatial") {
        tc.vanilla = false;
        tc.toggles = LossToggles{true, false, false};
    } else if (v == "constrained") {
        tc.vanilla = false;
        tc.toggles = LossToggles{true, true, false};
    } else if (v == "global") {
        tc.vanilla = false;
        tc.toggles = LossToggles{true, true, true};
    } else {
        throw config_error("unknown variant '" + v + "' (expected vanilla|spatial|constrained|global)");
    }
}

int cmd_train(const RunContext& rc, const TrainOpts& o) {
    if (!o.init.empty() && !o.pretrain_data.empty())
        throw config_error("--init and --pretrain-data are mutually exclusive");

    TrainConfig tc = o.config.empty() ? TrainConfig::desk()
                                      : TrainConfig::from_json(slurp_text(rc.path(o.config)));
    if (!o.variant.empty()) apply_variant(tc, o.variant);
    if (o.epochs >= 0) tc.epochs = static_cast<std::size_t>(o.epochs);
    if (o.has_seed) tc.seed = o.seed;
    std::uint64_t env = 0;
    if (env_seed(&env)) tc.seed = env;
    tc.validate();

    Dataset ds = load_dataset(rc.path(o.data));
    ModelConfig mc = o.model_config.empty()
                         ? ModelConfig::desk()
                         : ModelConfig::from_json(slurp_text(rc.path(o.model_config)));
    mc.num_classes = ds.num_train_ids;

    std::string out = rc.path(o.out);
    TrainResult r;
    json config_json{{"train", json::parse(tc.to_json())}, {"model", json::parse(mc.to_json())}};
    std::vector<std::string> inputs{rc.path(o.data)};
    if (!o.config.empty()) inputs.push_back(rc.path(o.config));
    if (!o.model_config.empty()) inputs.push_back(rc.path(o.model_config));

    if (!o.pretrain_data.empty()) {
        Dataset pre_ds = load_dataset(rc.path(o.pretrain_data));
        TrainConfig pre_tc = tc;
        if (o.pretrain_epochs >= 0) pre_tc.epochs = static_cast<std::size_t>(o.pretrain_epochs);
        r = pretrain_then_finetune(mc, pre_tc, pre_ds, tc, ds, out);
        config_json["pretrain"] = json{{"data", rc.path(o.pretrain_data)}, {"epochs", pre_tc.epochs}};
        inputs.push_back(rc.path(o.pretrain_data));
    } else if (!o.init.empty()) {
        CheckpointMeta meta;
        ParameterStore ps = ParameterStore::load(rc.path(o.init), &meta);
        if (meta.model_config_json.empty())
            throw format_error(rc.path(o.init) + ": sidecar metadata lacks the model configuration");
        ModelConfig init_mc = ModelConfig::from_json(meta.model_config_json);
        ModelConfig cmp = init_mc;
        cmp.num_classes = mc.num_classes;
        if (cmp.hash() != mc.hash())
            throw config_error("--init checkpoint architecture differs from the training configuration");
        if (init_mc.num_classes == mc.num_classes) {
            SttModel model(mc, std::move(ps));
            r = train(model, tc, ds, out);
        } else {
            SttModel donor(init_mc, std::move(ps));
            SttModel model(mc, tc.seed);
            for (const std::string& name : model.params().names()) {
                if (name.starts_with("head.")) continue;
                auto src = donor.params().get(name).values();
                auto dst = model.params().get(name).values_mut();
                std::copy(src.begin(), src.end(), dst.begin());
            }
            r = train(model, tc, ds, out);
        }
        config_json["init"] = rc.path(o.init);
        inputs.push_back(rc.path(o.init));
    } else {
        SttModel model(mc, tc.seed);
        r = train(model, tc, ds, out);
    }

    std::vector<std::string> outputs = list_dir_files(out);
    json results{{"steps", r.steps},
                 {"checkpoint", fs::path(r.checkpoint_path).filename().string()},
                 {"final_epoch_mean_loss",
                  r.epoch_mean_total.empty() ? 0.0 : r.epoch_mean_total.back()}};
    write_run_manifest(rc, out, "train", config_json, {tc.seed}, inputs, outputs, results);
    std::fprintf(stderr, "train: %zu steps over %zu epochs, checkpoint %s\n", r.steps, tc.epochs,
                 r.checkpoint_path.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// eval and transfer-eval

struct EvalOpts {
    std::string ckpt;
    std::string source;
    std::vector<std::string> targets;
    std::string out;
    bool use_global = false;
};

int cmd_transfer_eval(const RunContext& rc, const EvalOpts& o, const char* command) {
    CheckpointMeta meta;
    SttModel model = load_model(rc.path(o.ckpt), &meta);

    std::vector<Dataset> targets;
    targets.reserve(o.targets.size());
    for (const std::string& dir : o.targets) targets.push_back(load_dataset(rc.path(dir)));
    std::vector<const Dataset*> ptrs;
    ptrs.reserve(targets.size());
    for (const Dataset& d : targets) ptrs.push_back(&d);

    std::string source = o.source.empty() ? targets.front().spec.domain_id : o.source;
    std::vector<TransferRow> rows = transfer_eval(model, o.use_global, source, ptrs);

    std::string out = rc.path(o.out);
    std::string csv = metrics_to_csv(rows);
    write_text(out + "/metrics.json", metrics_to_json(rows));
    write_text(out + "/metrics.csv", csv);
    std::fputs(csv.c_str(), stdout);

    std::vector<std::string> inputs{rc.path(o.ckpt)};
    json target_names = json::array();
    for (const std::string& dir : o.targets) {
        inputs.push_back(rc.path(dir));
        target_names.push_back(rc.path(dir));
    }
    json config_json{{"checkpoint", rc.path(o.ckpt)},
                     {"source", source},
                     {"targets", target_names},
                     {"use_global", o.use_global},
                     {"frames_eval", model.config().frames_eval}};
    write_run_manifest(rc, out, command, config_json, {meta.seed}, inputs,
                       {out + "/metrics.json", out + "/metrics.csv"});
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckOpts {
    std::string config;
    std::string out = ".";
    double eps = 1e-4;
    double threshold = 1e-4;
    std::uint64_t seed = 4242;
};

int cmd_gradcheck(const RunContext& rc, const GradcheckOpts& o) {
    ModelConfig mc = o.config.empty() ? ModelConfig::gradcheck_desk()
                                      : ModelConfig::from_json(slurp_text(rc.path(o.config)));
    mc.validate();
    SttModel model(mc, o.seed);
    move_to_generic_point(model, mix_seed(o.seed, fnv1a64("gradcheck-point")), 0.25);

    Rng drng(mix_seed(o.seed, fnv1a64("gradcheck-batch")));
    std::vector<TrackletSample> batch;
    for (std::size_t i = 0; i < 4; ++i) {
        TrackletSample s;
        s.label = (i / 2) % mc.num_classes;
        for (std::size_t f = 0; f < mc.frames_train; ++f) {
            Tensor img = Tensor::zeros({mc.image_h, mc.image_w, mc.image_c});
            for (double& v : img.values_mut()) v = drng.uniform();
            s.frames.push_back(img);
        }
        batch.push_back(std::move(s));
    }

    auto fn = [&](Tape& t) {
        return total_loss(t, model, batch, LossToggles{true, true, true}).total_tensor;
    };
    auto t0 = std::chrono::steady_clock::now();
    double err = grad_check(fn, model.params(), o.eps);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    bool pass = err < o.threshold;
    std::printf("max_rel_err %.6e\n%s\n", err, pass ? "PASS" : "FAIL");
    std::fprintf(stderr, "gradcheck: eps %.1e, threshold %.1e, %.1f s\n", o.eps, o.threshold, secs);

    std::string out = rc.path(o.out);
    json config_json{{"model", json::parse(mc.to_json())},
                     {"eps", o.eps},
                     {"threshold", o.threshold}};
    json results{{"max_rel_err", err}, {"pass", pass}, {"seconds", secs}};
    write_run_manifest(rc, out, "gradcheck", config_json, {o.seed},
                       o.config.empty() ? std::vector<std::string>{}
                                        : std::vector<std::string>{rc.path(o.config)},
                       {}, results);
    return pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// dump-attn

struct DumpAttnOpts {
    std::string ckpt;
    std::string tracklet;
    std::string out;
};

std::string attention_svg(const std::vector<std::vector<double>>& maps,
                          const std::vector<double>& temporal, std::size_t H, std::size_t W) {
    const int cell = 14, gap = 10, label_h = 14;
    const std::size_t L = maps.size();
    const int frame_w = static_cast<int>(W) * cell;
    const int width = gap + static_cast<int>(L) * (frame_w + gap);
    const int height = gap + label_h + static_cast<int>(H) * cell + gap + label_h + cell + gap;

    double smax = 1e-300, tmax = 1e-300;
    for (const auto& m : maps)
        for (double v : m) smax = std::max(smax, v);
    for (double v : temporal) tmax = std::max(tmax, v);

    auto color = [](double v) {
        int r = static_cast<int>(std::lround(255.0 * std::min(1.0, 1.6 * v)));
        int g = static_cast<int>(std::lround(255.0 * std::clamp(1.4 * v - 0.35, 0.0, 1.0)));
        int b = static_cast<int>(std::lround(60.0 * (1.0 - v)));
        char buf[8];
        std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
        return std::string(buf);
    };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\">\n";
    svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"#101014\"/>\n";
    for (std::size_t f = 0; f < L; ++f) {
        int x0 = gap + static_cast<int>(f) * (frame_w + gap);
        svg << "<text x=\"" << x0 << "\" y=\"" << gap + label_h - 4
            << "\" font-family=\"monospace\" font-size=\"11\" fill=\"#cccccc\">f" << f
            << "</text>\n";
        for (std::size_t r = 0; r < H; ++r)
            for (std::size_t c = 0; c < W; ++c) {
                double v = maps[f][r * W + c] / smax;
                svg << "<rect x=\"" << x0 + static_cast<int>(c) * cell << "\" y=\""
                    << gap + label_h + static_cast<int>(r) * cell << "\" width=\"" << cell - 1
                    << "\" height=\"" << cell - 1 << "\" fill=\"" << color(v) << "\"/>\n";
            }
    }
    int ty = gap + label_h + static_cast<int>(H) * cell + gap;
    svg << "<text x=\"" << gap << "\" y=\"" << ty + label_h - 4
        << "\" font-family=\"monospace\" font-size=\"11\" fill=\"#cccccc\">temporal weight</text>\n";
    for (std::size_t f = 0; f < L; ++f) {
        int x0 = gap + static_cast<int>(f) * (frame_w + gap);
        svg << "<rect x=\"" << x0 << "\" y=\"" << ty + label_h << "\" width=\"" << frame_w - 1
            << "\" height=\"" << cell - 1 << "\" fill=\"" << color(temporal[f] / tmax)
            << "\"/>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

int cmd_dump_attn(const RunContext& rc, const DumpAttnOpts& o) {
    CheckpointMeta meta;
    SttModel model = load_model(rc.path(o.ckpt), &meta);
    const ModelConfig& mc = model.config();
    Tracklet tk = load_tracklet_file(rc.path(o.tracklet));
    if (tk.h != mc.image_h || tk.w != mc.image_w || tk.c != mc.image_c)
        throw config_error("tracklet frames are " + std::to_string(tk.h) + "x" +
                           std::to_string(tk.w) + "x" + std::to_string(tk.c) +
                           " but the model expects " + std::to_string(mc.image_h) + "x" +
                           std::to_string(mc.image_w) + "x" + std::to_string(mc.image_c));

    Tape tape(false);
    std::vector<std::vector<double>> maps;
    std::vector<Tensor> cls_rows;
    for (std::size_t f = 0; f < tk.length(); ++f) {
        Tensor tokens = model.encode_frame(tape, tk.frame(f));
        SpatialOut so = model.spatial_forward(tape, tokens);
        auto row = so.attn.class_row.values();
        maps.emplace_back(row.begin(), row.end());
        cls_rows.push_back(reshape(tape, so.cls, {1, mc.embed_dim}));
    }
    TemporalOut to = model.temporal_forward(tape, concat(tape, cls_rows, 0));
    auto av = to.a.values();
    std::vector<double> temporal(av.begin(), av.end());

    auto check_norm = [](const std::vector<double>& v, const std::string& what) {
        double s = 0.0;
        for (double x : v) s += x;
        if (std::abs(s - 1.0) > 1e-9)
            throw contract_error(what + " sums to " + std::to_string(s) + ", expected 1");
    };
    for (std::size_t f = 0; f < maps.size(); ++f)
        check_norm(maps[f], "spatial attention map for frame " + std::to_string(f));
    check_norm(temporal, "temporal attention");

    json j;
    j["grid_h"] = mc.grid_h;
    j["grid_w"] = mc.grid_w;
    j["num_frames"] = tk.length();
    json spatial = json::array();
    for (const auto& m : maps) {
        json rows = json::array();
        for (std::size_t r = 0; r < mc.grid_h; ++r)
            rows.push_back(std::vector<double>(m.begin() + r * mc.grid_w,
                                               m.begin() + (r + 1) * mc.grid_w));
        spatial.push_back(rows);
    }
    j["spatial"] = spatial;
    j["temporal"] = temporal;

    std::string out = rc.path(o.out);
    write_text(out + "/attention.json", j.dump(2) + "\n");
    write_text(out + "/attention.svg", attention_svg(maps, temporal, mc.grid_h, mc.grid_w));

    json config_json{{"checkpoint", rc.path(o.ckpt)}, {"tracklet", rc.path(o.tracklet)}};
    write_run_manifest(rc, out, "dump-attn", config_json, {meta.seed},
                       {rc.path(o.ckpt), rc.path(o.tracklet)},
                       {out + "/attention.json", out + "/attention.svg"});
    std::fprintf(stderr, "dump-attn: %zu frames to %s\n", tk.length(), out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// report

struct ReportOpts {
    std::string runs;
    std::string out;
};

struct RowLite {
    double rank1 = 0.0;
    double mAP = 0.0;
};

struct SeedMetrics {
    std::string source;
    std::map<std::string, RowLite> by_target;
};

int cmd_report(const RunContext& rc, const ReportOpts& o) {
    std::string runs_dir = rc.path(o.runs);
    if (!fs::is_directory(runs_dir)) throw io_error(runs_dir + " is not a directory");

    // variant -> seed index -> metrics
    std::map<std::string, std::map<int, SeedMetrics>> runs;
    std::vector<std::string> consumed;
    std::vector<std::string> variant_dirs;
    for (const auto& e : fs::directory_iterator(runs_dir))
        if (e.is_directory()) variant_dirs.push_back(e.path().filename().string());
    std::sort(variant_dirs.begin(), variant_dirs.end());

    for (const std::string& variant : variant_dirs) {
        for (const auto& e : fs::directory_iterator(runs_dir + "/" + variant)) {
            if (!e.is_directory()) continue;
            std::string name = e.path().filename().string();
            if (name.rfind("seed", 0) != 0) continue;
            std::string digits = name.substr(4);
            if (digits.empty() ||
                digits.find_first_not_of("0123456789") != std::string::npos)
                continue;
            std::string mpath = e.path().string() + "/metrics.json";
            if (!fs::exists(mpath))
                throw io_error(mpath + " is missing; run eval or transfer-eval first");
            json rows;
            try {
                rows = json::parse(slurp_text(mpath));
            } catch (const json::parse_error& ex) {
                throw format_error(mpath + ": " + ex.what());
            }
            SeedMetrics sm;
            for (const auto& row : rows) {
                for (const char* key : {"source", "target", "rank1", "mAP"})
                    if (!row.count(key))
                        throw format_error(mpath + ": metrics row missing " + std::string(key));
                sm.source = row["source"].get<std::string>();
                RowLite lite{row["rank1"].get<double>(), row["mAP"].get<double>()};
                sm.by_target[row["target"].get<std::string>()] = lite;
            }
            runs[variant][std::stoi(digits)] = std::move(sm);
            consumed.push_back(mpath);
        }
    }
    if (runs.empty()) throw config_error("no <variant>/seed<k>/metrics.json runs under " + runs_dir);

    std::vector<std::string> variants;
    for (const char* v : {"vanilla", "spatial", "constrained", "global", "pretrain"})
        if (runs.count(v)) variants.push_back(v);
    for (const auto& [v, _] : runs)
        if (std::find(variants.begin(), variants.end(), v) == variants.end())
            variants.push_back(v);

    std::set<std::string> target_set;
    std::string source;
    for (const auto& [v, seeds] : runs)
        for (const auto& [s, sm] : seeds) {
            source = sm.source;
            for (const auto& [t, _] : sm.by_target) target_set.insert(t);
        }
    std::vector<std::string> targets(target_set.begin(), target_set.end());

    auto mean_of = [&](const std::string& variant, const std::string& target, bool rank) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& [s, sm] : runs.at(variant)) {
            auto it = sm.by_target.find(target);
            if (it == sm.by_target.end()) continue;
            sum += rank ? it->second.rank1 : it->second.mAP;
            ++n;
        }
        return n ? sum / static_cast<double>(n) : std::nan("");
    };

    std::ostringstream md;
    md << "# Retrieval results\n\n";
    md << "Source domain: " << source << ". Values are means over seeds.\n\n";
    md << "| variant | seeds |";
    for (const std::string& t : targets) md << " " << t << " rank-1 | " << t << " mAP |";
    md << "\n|---|---|";
    for (std::size_t i = 0; i < targets.size(); ++i) md << "---|---|";
    md << "\n";
    char buf[64];
    for (const std::string& v : variants) {
        md << "| " << v << " | " << runs.at(v).size() << " |";
        for (const std::string& t : targets) {
            double r1 = mean_of(v, t, true), map = mean_of(v, t, false);
            std::snprintf(buf, sizeof buf, " %.4f | %.4f |", r1, map);
            md << buf;
        }
        md << "\n";
    }

    md << "\n## Per-seed orderings (transfer mAP)\n\n";
    struct Cmp {
        const char* hi;
        const char* lo;
        double frac;
    };
    bool any_cmp = false;
    for (const Cmp& cmp : {Cmp{"constrained", "vanilla", 0.8}, Cmp{"global", "constrained", 0.6},
                           Cmp{"pretrain", "global", 0.8}}) {
        if (!runs.count(cmp.hi) || !runs.count(cmp.lo)) continue;
        for (const std::string& t : targets) {
            if (t == source) continue;
            std::size_t wins = 0, n = 0;
            for (const auto& [s, hi_sm] : runs.at(cmp.hi)) {
                auto lo_it = runs.at(cmp.lo).find(s);
                if (lo_it == runs.at(cmp.lo).end()) continue;
                auto hi_t = hi_sm.by_target.find(t);
                auto lo_t = lo_it->second.by_target.find(t);
                if (hi_t == hi_sm.by_target.end() || lo_t == lo_it->second.by_target.end())
                    continue;
                ++n;
                if (hi_t->second.mAP > lo_t->second.mAP) ++wins;
            }
            if (n == 0) continue;
            any_cmp = true;
            std::size_t need =
                static_cast<std::size_t>(std::ceil(cmp.frac * static_cast<double>(n) - 1e-9));
            md << "- " << cmp.hi << " > " << cmp.lo << " on " << t << " mAP: " << wins << "/" << n
               << " seeds (need " << need << "): " << (wins >= need ? "PASS" : "FAIL") << "\n";
        }
    }
    if (!any_cmp) md << "- not enough variants present for ordering checks\n";

    md << "\n## Source-domain rank-1\n\n";
    if (target_set.count(source)) {
        for (const std::string& v : variants) {
            std::snprintf(buf, sizeof buf, "%.4f", mean_of(v, source, true));
            md << "- " << v << ": " << buf << "\n";
        }
    } else {
        md << "- source domain was not evaluated\n";
    }

    std::string out = rc.path(o.out);
    std::string text = md.str();
    write_text(out + "/report.md", text);
    std::fputs(text.c_str(), stdout);

    write_run_manifest(rc, out, "report", json{{"runs", runs_dir}}, {}, consumed,
                       {out + "/report.md"});
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"spatiotemporal tracklet retrieval workbench"};
    app.require_subcommand(1);
    std::string workdir = ".";
    app.add_option("--workdir", workdir, "root for relative paths")->capture_default_str();

    GenDataOpts gen;
    CLI::App* c_gen = app.add_subcommand("gen-data", "write a synthetic tracklet dataset");
    c_gen->add_option("--preset", gen.preset, "built-in domain (A|B|C)")->capture_default_str();
    c_gen->add_option("--config", gen.config, "domain spec JSON, replaces the preset");
    CLI::Option* gen_seed = c_gen->add_option("--seed", gen.seed, "override the domain seed");
    c_gen->add_option("--out", gen.out, "output directory")->required();

    TrainOpts tr;
    CLI::App* c_train = app.add_subcommand("train", "optimize a model on a dataset");
    c_train->add_option("--data", tr.data, "training dataset directory")->required();
    c_train->add_option("--out", tr.out, "output directory")->required();
    c_train->add_option("--config", tr.config, "training config JSON");
    c_train->add_option("--model-config", tr.model_config, "model config JSON");
    c_train->add_option("--variant", tr.variant,
                        "objective set: vanilla|spatial|constrained|global");
    c_train->add_option("--epochs", tr.epochs, "override epoch count");
    CLI::Option* tr_seed = c_train->add_option("--seed", tr.seed, "override the training seed");
    c_train->add_option("--init", tr.init, "checkpoint to start from");
    c_train->add_option("--pretrain-data", tr.pretrain_data,
                        "pretrain on this dataset, then fine-tune on --data");
    c_train->add_option("--pretrain-epochs", tr.pretrain_epochs,
                        "epoch count for the pretrain phase");

    EvalOpts ev;
    std::string eval_data;
    CLI::App* c_eval = app.add_subcommand("eval", "retrieval metrics on one dataset");
    c_eval->add_option("--ckpt", ev.ckpt, "model checkpoint")->required();
    c_eval->add_option("--data", eval_data, "dataset directory")->required();
    c_eval->add_option("--out", ev.out, "output directory")->required();
    c_eval->add_flag("--use-global", ev.use_global, "concatenate the global feature");

    EvalOpts tev;
    CLI::App* c_tev = app.add_subcommand("transfer-eval", "retrieval metrics on several domains");
    c_tev->add_option("--ckpt", tev.ckpt, "model checkpoint")->required();
    c_tev->add_option("--source", tev.source, "label of the training domain")->required();
    c_tev->add_option("--targets", tev.targets, "dataset directories")
        ->required()
        ->delimiter(',');
    c_tev->add_option("--out", tev.out, "output directory")->required();
    c_tev->add_flag("--use-global", tev.use_global, "concatenate the global feature");

    GradcheckOpts gc;
    CLI::App* c_gc = app.add_subcommand("gradcheck", "finite-difference check of the full objective");
    c_gc->add_option("--config", gc.config, "model config JSON (default: gradient-suite size)");
    c_gc->add_option("--eps", gc.eps, "central difference step")->capture_default_str();
    c_gc->add_option("--threshold", gc.threshold, "pass bound on max relative error")
        ->capture_default_str();
    c_gc->add_option("--seed", gc.seed, "parameter point seed")->capture_default_str();
    c_gc->add_option("--out", gc.out, "manifest directory")->capture_default_str();

    DumpAttnOpts da;
    CLI::App* c_da = app.add_subcommand("dump-attn", "attention maps for one tracklet");
    c_da->add_option("--ckpt", da.ckpt, "model checkpoint")->required();
    c_da->add_option("--tracklet", da.tracklet, "tracklet binary")->required();
    c_da->add_option("--out", da.out, "output directory")->required();

    ReportOpts rp;
    CLI::App* c_rp = app.add_subcommand("report", "aggregate metrics from completed runs");
    c_rp->add_option("--runs", rp.runs, "directory holding <variant>/seed<k>/metrics.json")
        ->required();
    c_rp->add_option("--out", rp.out, "output directory")->required();

    auto t0 = std::chrono::steady_clock::now();
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    RunContext rc;
    rc.workdir = workdir;
    rc.start = t0;
    gen.has_seed = gen_seed->count() > 0;
    tr.has_seed = tr_seed->count() > 0;

    try {
        if (c_gen->parsed()) return cmd_gen_data(rc, gen);
        if (c_train->parsed()) return cmd_train(rc, tr);
        if (c_eval->parsed()) {
            ev.targets = {eval_data};
            return cmd_transfer_eval(rc, ev, "eval");
        }
        if (c_tev->parsed()) return cmd_transfer_eval(rc, tev, "transfer-eval");
        if (c_gc->parsed()) return cmd_gradcheck(rc, gc);
        if (c_da->parsed()) return cmd_dump_attn(rc, da);
        if (c_rp->parsed()) return cmd_report(rc, rp);
    } catch (const io_error& e) {
        std::fprintf(stderr, "stt: %s\n", e.what());
        return 2;
    } catch (const format_error& e) {
        std::fprintf(stderr, "stt: %s\n", e.what());
        return 2;
    } catch (const error& e) {
        std::fprintf(stderr, "stt: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "stt: %s\n", e.what());
        return 1;
    }
    return 1;
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<std::string> full;
    full.reserve(args.size() + 1);
    full.push_back("stt");
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(full.size());
    for (const std::string& s : full) argv.push_back(s.c_str());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

bool verify_run_manifest(const std::string& manifest_path) {
    json j;
    try {
        j = json::parse(slurp_text(manifest_path));
    } catch (const json::parse_error& e) {
        throw format_error(manifest_path + ": " + e.what());
    }
    if (!j.count("outputs") || !j["outputs"].is_array())
        throw format_error(manifest_path + ": missing outputs array");
    fs::path base = fs::path(manifest_path).parent_path();
    for (const auto& entry : j["outputs"]) {
        if (!entry.count("path") || !entry.count("fnv1a64"))
            throw format_error(manifest_path + ": output entry missing path or fnv1a64");
        fs::path p(entry["path"].get<std::string>());
        if (!p.is_absolute()) p = base / p;
        if (hex64(file_hash(p.string())) != entry["fnv1a64"].get<std::string>()) return false;
    }
    return true;
}

}  // namespace stt
