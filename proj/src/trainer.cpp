#include "stt/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>

#include "stt/rng.hpp"

namespace stt {

TrainConfig TrainConfig::desk() {
    TrainConfig c;
    c.base_lr = 5e-4;
    c.classifier_lr = 2.5e-3;
    c.epochs = 30;
    c.decay_epochs = {24, 28};
    c.warmup_steps = 20;
    c.p_ids = 2;
    c.k_tracklets = 4;
    return c;
}

void TrainConfig::validate() const {
    if (base_lr <= 0.0 || classifier_lr <= 0.0) throw config_error("learning rates must be > 0");
    if (weight_decay < 0.0) throw config_error("weight_decay must be >= 0");
    if (decay_factor <= 0.0 || decay_factor > 1.0)
        throw config_error("decay_factor must be in (0, 1]");
    for (std::size_t i = 1; i < decay_epochs.size(); ++i)
        if (decay_epochs[i] <= decay_epochs[i - 1])
            throw config_error("decay_epochs must be strictly ascending");
    if (p_ids < 1 || k_tracklets < 1) throw config_error("p_ids and k_tracklets must be >= 1");
    if (vanilla && (toggles.spatial || toggles.temporal || toggles.global))
        throw config_error("vanilla mode excludes the constraint toggles");
}

std::string TrainConfig::to_json() const {
    nlohmann::json j;
    j["base_lr"] = base_lr;
    j["classifier_lr"] = classifier_lr;
    j["weight_decay"] = weight_decay;
    j["warmup_steps"] = warmup_steps;
    j["decay_epochs"] = decay_epochs;
    j["decay_factor"] = decay_factor;
    j["epochs"] = epochs;
    j["p_ids"] = p_ids;
    j["k_tracklets"] = k_tracklets;
    j["spatial"] = toggles.spatial;
    j["temporal"] = toggles.temporal;
    j["global"] = toggles.global;
    j["vanilla"] = vanilla;
    j["checkpoint_interval"] = checkpoint_interval;
    j["seed"] = seed;
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("train config JSON parse failed: ") + e.what());
    }
    if (!j.is_object()) throw config_error("train config must be a JSON object");
    static const std::set<std::string> known = {
        "base_lr",  "classifier_lr", "weight_decay", "warmup_steps",        "decay_epochs",
        "decay_factor", "epochs",    "p_ids",        "k_tracklets",         "spatial",
        "temporal", "global",        "vanilla",      "checkpoint_interval", "seed"};
    for (const auto& item : j.items())
        if (!known.count(item.key())) throw config_error("unknown train config key: " + item.key());
    TrainConfig c;
    try {
        if (j.count("base_lr")) c.base_lr = j["base_lr"].get<double>();
        if (j.count("classifier_lr")) c.classifier_lr = j["classifier_lr"].get<double>();
        if (j.count("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
        if (j.count("warmup_steps")) c.warmup_steps = j["warmup_steps"].get<std::size_t>();
        if (j.count("decay_epochs"))
            c.decay_epochs = j["decay_epochs"].get<std::vector<std::size_t>>();
        if (j.count("decay_factor")) c.decay_factor = j["decay_factor"].get<double>();
        if (j.count("epochs")) c.epochs = j["epochs"].get<std::size_t>();
        if (j.count("p_ids")) c.p_ids = j["p_ids"].get<std::size_t>();
        if (j.count("k_tracklets")) c.k_tracklets = j["k_tracklets"].get<std::size_t>();
        if (j.count("spatial")) c.toggles.spatial = j["spatial"].get<bool>();
        if (j.count("temporal")) c.toggles.temporal = j["temporal"].get<bool>();
        if (j.count("global")) c.toggles.global = j["global"].get<bool>();
        if (j.count("vanilla")) c.vanilla = j["vanilla"].get<bool>();
        if (j.count("checkpoint_interval"))
            c.checkpoint_interval = j["checkpoint_interval"].get<std::size_t>();
        if (j.count("seed")) c.seed = j["seed"].get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("train config field type error: ") + e.what());
    }
    c.validate();
    return c;
}

std::uint64_t TrainConfig::hash() const { return fnv1a64(to_json()); }

double lr_at_step(std::size_t step, std::size_t epoch, const TrainConfig& cfg, bool is_classifier) {
    double lr = is_classifier ? cfg.classifier_lr : cfg.base_lr;
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
        lr *= static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    for (std::size_t e : cfg.decay_epochs)
        if (epoch >= e) lr *= cfg.decay_factor;
    return lr;
}

AdamW::AdamW(double weight_decay, double beta1, double beta2, double eps)
    : wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

void AdamW::step(ParameterStore& params, const std::function<double(const std::string&)>& lr_of) {
    ++t_;
    double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (const std::string& name : params.names()) {
        Tensor& p = params.get(name);
        double lr = lr_of(name);
        if (lr == 0.0) continue;
        auto& m = m_[name];
        auto& v = v_[name];
        if (m.empty()) {
            m.assign(p.size(), 0.0);
            v.assign(p.size(), 0.0);
        }
        auto vals = p.values_mut();
        auto g = p.grad();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
            v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            vals[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * vals[i]);
        }
    }
}

static std::string breakdown_csv_row(std::size_t step, std::size_t epoch, double lr,
                                     const LossBreakdown& b) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", step, epoch,
                  lr, b.spa_xent, b.spa_part_xent, b.tem_xent, b.tem_trip, b.tem_attn,
                  b.global_xent, b.backbone_aux, b.total);
    return buf;
}

static std::string breakdown_text(const LossBreakdown& b) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "spa_xent=%g spa_part_xent=%g tem_xent=%g tem_trip=%g tem_attn=%g "
                  "global_xent=%g backbone_aux=%g total=%g",
                  b.spa_xent, b.spa_part_xent, b.tem_xent, b.tem_trip, b.tem_attn, b.global_xent,
                  b.backbone_aux, b.total);
    return buf;
}

static void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot open for writing: " + path);
    out << text;
    if (!out) throw io_error("write failed: " + path);
}

static CheckpointMeta meta_for(const SttModel& model, const TrainConfig& cfg, std::size_t epoch) {
    CheckpointMeta meta;
    meta.config_hash = model.config().hash();
    meta.train_config_hash = cfg.hash();
    meta.seed = cfg.seed;
    meta.epoch = static_cast<int>(epoch);
    meta.num_classes = static_cast<int>(model.config().num_classes);
    meta.model_config_json = model.config().to_json();
    return meta;
}

TrainResult train(SttModel& model, const TrainConfig& cfg, const Dataset& data,
                  const std::string& out_dir) {
    cfg.validate();
    if (model.config().num_classes != data.num_train_ids)
        throw contract_error("model expects " + std::to_string(model.config().num_classes) +
                             " classes but the dataset trains " +
                             std::to_string(data.num_train_ids) + " identities");
    if (data.train.empty()) throw contract_error("dataset has no training tracklets");

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw io_error("cannot create directory " + out_dir + ": " + ec.message());

    Rng rng(cfg.seed);
    AdamW opt(cfg.weight_decay);
    LossToggles toggles = cfg.effective_toggles();
    std::string log =
        "step,epoch,lr,spa_xent,spa_part_xent,tem_xent,tem_trip,tem_attn,global_xent,"
        "backbone_aux,total\n";

    TrainResult result;
    result.checkpoint_path = out_dir + "/checkpoint_final.bin";
    result.log_path = out_dir + "/train_log.csv";

    std::size_t step = 0;
    LossBreakdown last;
    bool have_last = false;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto batches = balanced_batches(data.train, cfg.p_ids, cfg.k_tracklets, rng);
        double epoch_sum = 0.0;
        for (const auto& batch : batches) {
            std::vector<TrackletSample> samples;
            samples.reserve(batch.size());
            for (std::size_t idx : batch) {
                const Tracklet& tk = data.train[idx];
                auto frame_idx = restricted_sample(tk.length(), model.config().frames_train, &rng);
                samples.push_back({tk.frames(frame_idx), tk.identity});
            }

            double lr_base = lr_at_step(step, epoch, cfg, false);
            try {
                Tape tape(true);
                LossBreakdown lb = total_loss(tape, model, samples, toggles);
                model.params().zero_grad();
                tape.backward(lb.total_tensor);
                opt.step(model.params(), [&](const std::string& name) {
                    return lr_at_step(step, epoch, cfg, name.starts_with("head."));
                });
                last = lb;
                have_last = true;
                epoch_sum += lb.total;
                log += breakdown_csv_row(step, epoch, lr_base, lb);
            } catch (const error& e) {
                write_text_file(result.log_path, log);
                std::string msg = "training aborted at step " + std::to_string(step) + " (epoch " +
                                  std::to_string(epoch) + "): " + e.what();
                if (have_last)
                    msg += "; last completed step: " + breakdown_text(last);
                throw error(msg);
            }
            ++step;
        }
        result.epoch_mean_total.push_back(epoch_sum / static_cast<double>(batches.size()));
        if (cfg.checkpoint_interval > 0 && (epoch + 1) % cfg.checkpoint_interval == 0 &&
            epoch + 1 < cfg.epochs) {
            char name[64];
            std::snprintf(name, sizeof(name), "/checkpoint_epoch_%04zu.bin", epoch + 1);
            model.params().save(out_dir + name, meta_for(model, cfg, epoch + 1));
        }
    }

    result.steps = step;
    write_text_file(result.log_path, log);
    model.params().save(result.checkpoint_path, meta_for(model, cfg, cfg.epochs));
    return result;
}

TrainResult pretrain_then_finetune(const ModelConfig& arch, const TrainConfig& pre_cfg,
                                   const Dataset& pre_ds, const TrainConfig& ft_cfg,
                                   const Dataset& ft_ds, const std::string& out_dir) {
    if (pre_ds.spec.image_h != ft_ds.spec.image_h || pre_ds.spec.image_w != ft_ds.spec.image_w ||
        pre_ds.spec.channels != ft_ds.spec.channels)
        throw config_error("pretrain and finetune datasets must share image dims");

    ModelConfig pre_arch = arch;
    pre_arch.num_classes = pre_ds.num_train_ids;
    SttModel pre_model(pre_arch, pre_cfg.seed);
    train(pre_model, pre_cfg, pre_ds, out_dir + "/pretrain");

    ModelConfig ft_arch = arch;
    ft_arch.num_classes = ft_ds.num_train_ids;
    SttModel ft_model(ft_arch, ft_cfg.seed);
    for (const std::string& name : pre_model.params().names()) {
        if (name.starts_with("head.")) continue;
        auto src = pre_model.params().get(name).values();
        auto dst = ft_model.params().get(name).values_mut();
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return train(ft_model, ft_cfg, ft_ds, out_dir);
}

}  // namespace stt
