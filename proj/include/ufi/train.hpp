#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "ufi/checkpoint.hpp"
#include "ufi/dataset.hpp"
#include "ufi/metrics.hpp"
#include "ufi/urbanfm.hpp"
#include "ufi/urbanpy.hpp"

namespace ufi {

/// Thrown when the training loss stops being finite.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    double lr = 1e-4;                 // 2e-4 for the progressive model
    int64_t batch_size = 16;          // 32 for the progressive model
    int64_t lr_halve_every = 20;      // epochs
    int64_t early_stop_patience = 50; // epochs without validation improvement
    int64_t max_epochs = 200;
    uint64_t seed = 0;
    bool use_external = true;                 // -ne ablation when false
    bool use_structural_loss_variant = false; // -sl ablation
    double structural_loss_weight = 1.0;
    bool local_structure = false;      // pyramid [T/F, ...]
    bool distributional_loss = true;   // pyramid [..., T/F]
    double grad_clip = 0.0;            // 0 disables clipping

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
    /// Progressive models double the learning rate and batch size.
    static TrainConfig defaults_for(const std::string& model_kind);
};

struct EpochRecord {
    int64_t epoch = 0;
    double train_loss = 0.0;
    double val_metric = 0.0;  // validation RMSE
    double lr = 0.0;
    double wall_seconds = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    int64_t best_epoch = -1;
    double best_val_metric = 0.0;
    bool early_stopped = false;

    nlohmann::json to_json() const;
};

/// Callbacks driving one training run; the loop owns the learning-rate
/// schedule (lr * 0.5^(epoch / halve_every)), best-checkpoint tracking, early
/// stopping and divergence detection, so it can be exercised on stubs.
struct TrainHooks {
    std::function<double(int64_t epoch)> run_epoch;  // returns train loss
    std::function<double()> validate;                // returns validation metric
    std::function<void(double lr)> set_lr;
    std::function<void()> snapshot_best;             // called on improvement
};

TrainLog run_training_loop(const TrainConfig& cfg, const TrainHooks& hooks);

struct TrainResult {
    Checkpoint checkpoint;
    TrainLog log;
};

TrainResult train_urbanfm(const FlowDataset& ds, const DatasetSplit& split,
                          FMConfig model_cfg, TrainConfig cfg);
TrainResult train_urbanpy(const FlowDataset& ds, const DatasetSplit& split,
                          PyramidConfig model_cfg, TrainConfig cfg);

/// Metrics of a checkpointed model on one split slice (default: test).
/// Pyramid models report per-level metrics plus final-level headline values.
MetricReport evaluate(const Checkpoint& ckpt, const FlowDataset& ds,
                      const DatasetSplit& split);

/// Closed-form baselines need no checkpoint.
struct BaselineReports {
    MetricReport mean;
    MetricReport ha;
};
BaselineReports evaluate_baselines(const FlowDataset& ds, const DatasetSplit& split,
                                   int64_t n);

}  // namespace ufi
