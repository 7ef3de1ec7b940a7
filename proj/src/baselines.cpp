#include "ufi/baselines.hpp"

#include <stdexcept>

#include "ufi/ops.hpp"

namespace ufi {

FlowMap baseline_mean(const FlowMap& coarse, int64_t n) {
    if (n < 1) throw std::invalid_argument("upscaling factor must be >= 1");
    auto fine = nn_upsample(coarse.values().to(torch::kFloat64), n) /
                static_cast<double>(n * n);
    return FlowMap(fine);
}

HAModel fit_ha(std::span<const FlowMap> train_fine, int64_t n, double eps) {
    if (train_fine.empty()) {
        throw std::invalid_argument("HA requires a non-empty training set");
    }
    auto mean = torch::zeros({train_fine.front().height(), train_fine.front().width()},
                             torch::kFloat64);
    for (const auto& m : train_fine) mean += m.values().to(torch::kFloat64);
    mean /= static_cast<double>(train_fine.size());

    auto fractions = n2_normalize(mean, n, eps);
    // uniform fallback where a superregion saw zero total flow
    auto mass = nn_upsample(sum_pool(mean, n), n);
    auto uniform = torch::full_like(fractions, 1.0 / static_cast<double>(n * n));
    fractions = torch::where(mass.gt(0), fractions, uniform);

    HAModel model;
    model.fractions = DistributionMap{fractions, n, eps};
    model.n = n;
    return model;
}

FlowMap predict_ha(const HAModel& model, const FlowMap& coarse) {
    auto fine = distributional_upsample(coarse.values().to(torch::kFloat64),
                                        model.fractions.values, model.n);
    return FlowMap(fine);
}

}  // namespace ufi
