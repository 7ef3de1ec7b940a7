#include "ufi/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "ufi/ops.hpp"

namespace ufi {

using nlohmann::json;

torch::Tensor mse_loss_sum(const torch::Tensor& pred, const torch::Tensor& truth) {
    if (!pred.sizes().equals(truth.sizes())) {
        throw std::invalid_argument("mse_loss: dimension mismatch");
    }
    return (pred - truth).pow(2).sum();
}

double mse_loss(const FlowMap& pred, const FlowMap& truth) {
    return mse_loss_sum(pred.values().to(torch::kFloat64),
                        truth.values().to(torch::kFloat64))
        .item<double>();
}

torch::Tensor kl_distributional_loss_t(const torch::Tensor& pred,
                                       const torch::Tensor& truth,
                                       int64_t block_size, double eps_kl) {
    if (!pred.sizes().equals(truth.sizes())) {
        throw std::invalid_argument("kl_distributional_loss: dimension mismatch");
    }
    // per-entry pred * (log pred - log truth); clamped logs keep gradients
    // finite and cap the zero-truth penalty at pred * log(pred / eps_kl)
    auto log_pred = pred.clamp_min(eps_kl).log();
    auto log_truth = truth.clamp_min(eps_kl).log();
    auto terms = pred * (log_pred - log_truth);
    // skip superregions whose truth block is all-zero
    auto block_mass = sum_pool(truth, block_size);
    auto valid = nn_upsample(block_mass.gt(0).to(terms.dtype()), block_size);
    return (terms * valid).sum();
}

double kl_distributional_loss(const DistributionMap& pred,
                              const DistributionMap& truth) {
    if (pred.block_size != truth.block_size) {
        throw std::invalid_argument("kl_distributional_loss: block size mismatch");
    }
    return kl_distributional_loss_t(pred.values.to(torch::kFloat64),
                                    truth.values.to(torch::kFloat64),
                                    pred.block_size)
        .item<double>();
}

torch::Tensor ground_truth_distribution(const torch::Tensor& level_truth,
                                        const torch::Tensor& coarse, int64_t scale) {
    auto denom = nn_upsample(coarse, scale);
    auto dist = level_truth / denom.clamp_min(1e-12);
    return dist * denom.gt(0).to(dist.dtype());
}

torch::Tensor combined_loss(std::span<const LevelPrediction> predictions,
                            std::span<const LevelTruth> truths, double alpha,
                            double eps_kl) {
    if (predictions.size() != truths.size() || predictions.empty()) {
        throw std::invalid_argument("combined_loss: level count mismatch");
    }
    torch::Tensor total;
    for (size_t l = 0; l < predictions.size(); ++l) {
        auto mse = mse_loss_sum(predictions[l].flow, truths[l].flow);
        auto term = (1.0 - alpha) * mse;
        if (alpha > 0.0) {
            if (!predictions[l].distribution.defined() ||
                !truths[l].distribution.defined()) {
                throw std::invalid_argument(
                    "combined_loss: distributions required when alpha > 0");
            }
            term = term + alpha * kl_distributional_loss_t(
                              predictions[l].distribution, truths[l].distribution,
                              predictions[l].scale, eps_kl);
        }
        total = total.defined() ? total + term : term;
    }
    return total;
}

void MetricAccumulator::Kahan::add(double v) {
    const double y = v - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
}

void MetricAccumulator::add(const torch::Tensor& pred, const torch::Tensor& truth) {
    if (!pred.sizes().equals(truth.sizes())) {
        throw std::invalid_argument("metric accumulator: dimension mismatch");
    }
    auto p = pred.to(torch::kFloat64).reshape({-1});
    auto t = truth.to(torch::kFloat64).reshape({-1});
    auto pa = p.accessor<double, 1>();
    auto ta = t.accessor<double, 1>();
    for (int64_t i = 0; i < p.numel(); ++i) {
        const double err = pa[i] - ta[i];
        sq_.add(err * err);
        abs_.add(std::abs(err));
        if (ta[i] > 0) {
            ape_.add(std::abs(err) / ta[i]);
            ++ape_count_;
        }
        ++count_;
    }
}

double MetricAccumulator::rmse() const {
    if (count_ == 0) throw std::invalid_argument("no samples accumulated");
    return std::sqrt(sq_.sum / static_cast<double>(count_));
}

double MetricAccumulator::mae() const {
    if (count_ == 0) throw std::invalid_argument("no samples accumulated");
    return abs_.sum / static_cast<double>(count_);
}

double MetricAccumulator::mape() const {
    if (count_ == 0) throw std::invalid_argument("no samples accumulated");
    if (ape_count_ == 0) return 0.0;  // no positive-truth cells
    return ape_.sum / static_cast<double>(ape_count_);
}

namespace {

MetricAccumulator accumulate(std::span<const FlowMap> preds,
                             std::span<const FlowMap> truths) {
    if (preds.empty() || preds.size() != truths.size()) {
        throw std::invalid_argument("metrics need equally many non-empty sequences");
    }
    MetricAccumulator acc;
    for (size_t i = 0; i < preds.size(); ++i) {
        acc.add(preds[i].values(), truths[i].values());
    }
    return acc;
}

}  // namespace

double rmse(std::span<const FlowMap> preds, std::span<const FlowMap> truths) {
    return accumulate(preds, truths).rmse();
}

double mae(std::span<const FlowMap> preds, std::span<const FlowMap> truths) {
    return accumulate(preds, truths).mae();
}

double mape(std::span<const FlowMap> preds, std::span<const FlowMap> truths) {
    return accumulate(preds, truths).mape();
}

json MetricReport::to_json() const {
    json j{{"rmse", rmse}, {"mae", mae}, {"mape", mape}};
    if (!levels.empty()) {
        json lv;
        for (const auto& [name, metrics] : levels) {
            lv[name] = metrics;
        }
        j["levels"] = lv;
    }
    return j;
}

}  // namespace ufi
