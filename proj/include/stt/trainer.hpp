#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "stt/data.hpp"
#include "stt/losses.hpp"
#include "stt/model.hpp"

namespace stt {

/// Optimization schedule and batch structure. Defaults are the full-scale
/// recipe; desk() shrinks epochs and batch shape to the shipped experiments.
struct TrainConfig {
    double base_lr = 3.5e-4;
    double classifier_lr = 1.75e-3;  // heads train 5x faster than the backbone
    double weight_decay = 5e-4;
    std::size_t warmup_steps = 200;
    std::vector<std::size_t> decay_epochs = {80, 160};
    double decay_factor = 0.1;
    std::size_t epochs = 200;
    std::size_t p_ids = 15;
    std::size_t k_tracklets = 4;
    LossToggles toggles{true, true, true};
    bool vanilla = false;  // overrides toggles: identity losses only
    std::size_t checkpoint_interval = 0;  // epochs between snapshots, 0 = final only
    std::uint64_t seed = 1;

    static TrainConfig desk();
    void validate() const;
    LossToggles effective_toggles() const { return vanilla ? LossToggles{} : toggles; }
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
    std::uint64_t hash() const;
};

/// Linear warmup from zero over warmup_steps, then the group's base rate
/// scaled by decay_factor once per passed decay epoch.
double lr_at_step(std::size_t step, std::size_t epoch, const TrainConfig& cfg, bool is_classifier);

/// Adam with decoupled weight decay. Zero learning rate freezes a parameter
/// exactly: the decay term is scaled by the rate, not applied separately.
class AdamW {
public:
    AdamW(double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(ParameterStore& params, const std::function<double(const std::string&)>& lr_of);

private:
    double wd_, b1_, b2_, eps_;
    std::size_t t_ = 0;
    std::unordered_map<std::string, std::vector<double>> m_, v_;
};

struct TrainResult {
    std::string checkpoint_path;
    std::string log_path;
    std::size_t steps = 0;
    std::vector<double> epoch_mean_total;  // one entry per trained epoch
};

/// Runs the PK-batch loop on data.train and writes checkpoint_final.bin plus
/// train_log.csv under out_dir. Fully determined by cfg.seed.
TrainResult train(SttModel& model, const TrainConfig& cfg, const Dataset& data,
                  const std::string& out_dir);

/// Pretrains on one domain, re-initializes every classifier head for the
/// fine-tune domain's class count, carries all other parameters over
/// bit-exactly, then trains on the fine-tune domain.
TrainResult pretrain_then_finetune(const ModelConfig& arch, const TrainConfig& pre_cfg,
                                   const Dataset& pre_ds, const TrainConfig& ft_cfg,
                                   const Dataset& ft_ds, const std::string& out_dir);

}  // namespace stt
