#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "layergen/diffusion.hpp"

namespace layergen::diff {

struct TrainExample {
    Tensor latent;  // [H x W x C] clean target
    Layout layout;
};

struct LossRow {
    std::int64_t step = 0;
    double loss = 0.0;          // hybrid objective, batch mean
    double text_loss = 0.0;     // unweighted MSE over text cells
    double nontext_loss = 0.0;  // unweighted MSE over the rest
};

struct AdamState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    std::int64_t t = 0;
};

// Single-stream training loop. One counter-based generator drives example
// choice, timestep, noise, and prompt dropout in a fixed order, so a run is
// one pure function of (dataset, configs, seed) and a checkpoint resume
// continues it bit for bit.
class Trainer {
public:
    Trainer(std::vector<TrainExample> dataset, const DenoiserConfig& dcfg,
            const TrainConfig& tcfg, const NoiseSchedule& schedule);

    void run(std::int64_t steps);
    // ceil(dataset / batch) steps per epoch, times the configured epochs.
    std::int64_t steps_per_epoch() const;
    void run_epochs();

    const DenoiserParams& params() const { return params_; }
    const TrainConfig& train_config() const { return tcfg_; }
    const std::vector<LossRow>& trace() const { return trace_; }
    std::int64_t step() const { return step_; }
    // How many region prompts dropout replaced with the null sequence so far.
    std::int64_t null_replacements() const { return null_replacements_; }

    std::string checkpoint_json() const;
    void save_checkpoint(const std::string& path) const;
    static Trainer from_checkpoint_json(const std::string& text, std::vector<TrainExample> dataset,
                                        const NoiseSchedule& schedule,
                                        const std::string& origin = "<string>");
    static Trainer load_checkpoint(const std::string& path, std::vector<TrainExample> dataset,
                                   const NoiseSchedule& schedule);

private:
    Trainer(std::vector<TrainExample> dataset, const NoiseSchedule& schedule);
    void prepare();

    std::vector<TrainExample> dataset_;
    NoiseSchedule schedule_;
    TrainConfig tcfg_;
    DenoiserParams params_;
    AdamState adam_;
    Rng rng_{0};
    std::int64_t step_ = 0;
    std::int64_t null_replacements_ = 0;
    std::vector<LossRow> trace_;

    // Derived caches, rebuilt on construction and load.
    std::vector<std::vector<attn::RegionTokens>> example_tokens_;
    std::vector<Tensor> example_text_masks_;
    Tensor null_sequence_;
};

void write_loss_csv(const std::vector<LossRow>& trace, const std::string& path);

// Weights-only load for sampling; skips dataset and optimizer state.
DenoiserParams params_from_checkpoint(const std::string& path);

}  // namespace layergen::diff
