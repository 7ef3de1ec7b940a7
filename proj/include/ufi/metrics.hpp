#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "ufi/flow.hpp"

namespace ufi {

/// Squared Frobenius distance: the *sum* of squared elementwise differences
/// (summed over batch too). Differentiable.
torch::Tensor mse_loss_sum(const torch::Tensor& pred, const torch::Tensor& truth);
double mse_loss(const FlowMap& pred, const FlowMap& truth);

/// Sum over superregions of KL(pred block || truth block). Truth entries
/// of zero contribute a capped penalty via log(max(d, eps_kl)); all-zero
/// truth blocks are skipped. Differentiable; exact zero when pred == truth.
torch::Tensor kl_distributional_loss_t(const torch::Tensor& pred,
                                       const torch::Tensor& truth,
                                       int64_t block_size, double eps_kl = 1e-8);
double kl_distributional_loss(const DistributionMap& pred,
                              const DistributionMap& truth);

/// Ground-truth distribution: the level's flow map divided elementwise by
/// the upsampled coarse map, with a zero guard (blocks under a zero coarse
/// cell become all-zero).
torch::Tensor ground_truth_distribution(const torch::Tensor& level_truth,
                                        const torch::Tensor& coarse, int64_t scale);

struct LevelPrediction {
    torch::Tensor flow;          // inferred flows at this level
    torch::Tensor distribution;  // D_l (optional when alpha = 0)
    int64_t scale = 1;
};
struct LevelTruth {
    torch::Tensor flow;          // X_l
    torch::Tensor distribution;  // D_l ground truth
    int64_t scale = 1;
};

/// Sum over levels of alpha * KL + (1 - alpha) * MSE.
torch::Tensor combined_loss(std::span<const LevelPrediction> predictions,
                            std::span<const LevelTruth> truths, double alpha,
                            double eps_kl = 1e-8);

/// Sample-sequence metrics, float64 accumulation (Kahan-compensated):
///   RMSE = sqrt(mean of squared error over all samples and cells)
///   MAE  = mean absolute error per cell
///   MAPE = mean of |err|/truth over cells with truth > 0
double rmse(std::span<const FlowMap> preds, std::span<const FlowMap> truths);
double mae(std::span<const FlowMap> preds, std::span<const FlowMap> truths);
double mape(std::span<const FlowMap> preds, std::span<const FlowMap> truths);

/// Streaming accumulator behind the three metrics.
class MetricAccumulator {
public:
    void add(const torch::Tensor& pred, const torch::Tensor& truth);
    double rmse() const;
    double mae() const;
    double mape() const;
    int64_t cells() const { return count_; }

private:
    struct Kahan {
        double sum = 0.0, carry = 0.0;
        void add(double v);
    };
    Kahan sq_, abs_, ape_;
    int64_t count_ = 0, ape_count_ = 0;
};

struct MetricReport {
    double rmse = 0.0;
    double mae = 0.0;
    double mape = 0.0;
    // per-level breakdown for pyramid models, keyed by "level_<scale>x"
    std::map<std::string, std::map<std::string, double>> levels;

    nlohmann::json to_json() const;
};

}  // namespace ufi
