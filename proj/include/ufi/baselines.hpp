#pragma once

#include <cstdint>
#include <span>

#include "ufi/flow.hpp"

namespace ufi {

/// Mean partition: each superregion's flow split evenly over its n^2
/// subregions. Satisfies the structural constraint exactly.
FlowMap baseline_mean(const FlowMap& coarse, int64_t n);

/// Historical Average: per-subregion fraction of its superregion's flow,
/// averaged over the training data. Superregions with zero total training
/// flow fall back to the uniform block.
struct HAModel {
    DistributionMap fractions;
    int64_t n = 1;
};

HAModel fit_ha(std::span<const FlowMap> train_fine, int64_t n, double eps = 1e-9);
FlowMap predict_ha(const HAModel& model, const FlowMap& coarse);

}  // namespace ufi
