#include "ufi/flow.hpp"

#include <stdexcept>
#include <string>
#include <vector>

#include "ufi/ops.hpp"

namespace ufi {

FlowMap::FlowMap(torch::Tensor values) : values_(std::move(values)) {
    if (!values_.defined() || values_.dim() != 2) {
        throw std::invalid_argument("FlowMap requires a 2-D tensor");
    }
    if (values_.size(0) < 1 || values_.size(1) < 1) {
        throw std::invalid_argument("FlowMap requires height >= 1 and width >= 1");
    }
    if (!torch::isfinite(values_).all().item<bool>()) {
        throw std::invalid_argument("FlowMap entries must be finite");
    }
    if (values_.lt(0).any().item<bool>()) {
        throw std::invalid_argument("FlowMap entries must be non-negative");
    }
}

FlowMap::FlowMap(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<int64_t> shape{static_cast<int64_t>(rows.size()),
                               static_cast<int64_t>(rows.begin()->size())};
    std::vector<double> flat;
    flat.reserve(shape[0] * shape[1]);
    for (const auto& row : rows) {
        if (static_cast<int64_t>(row.size()) != shape[1]) {
            throw std::invalid_argument("ragged FlowMap literal");
        }
        flat.insert(flat.end(), row.begin(), row.end());
    }
    *this = FlowMap(torch::tensor(flat, torch::kFloat64).view(shape));
}

std::string check_distribution_invariants(const torch::Tensor& values,
                                          int64_t block_size, double tol) {
    if (values.lt(0).any().item<bool>()) {
        return "distribution entries must be non-negative";
    }
    auto sums = sum_pool(values.to(torch::kFloat64), block_size);
    auto ok = sums.eq(0).logical_or((sums - 1.0).abs().le(tol));
    if (!ok.all().item<bool>()) {
        double worst = (sums - 1.0).abs().max().item<double>();
        return "block sums must be 0 or 1 +/- " + std::to_string(tol) +
               " (worst deviation " + std::to_string(worst) + ")";
    }
    return {};
}

void DistributionMap::validate(double tol) const {
    auto msg = check_distribution_invariants(values, block_size, tol);
    if (!msg.empty()) throw std::invalid_argument("DistributionMap: " + msg);
}

FlowMap coarsen(const FlowMap& fine, int64_t n) {
    if (n == 1) return fine;
    return FlowMap(sum_pool(fine.values(), n));
}

StructuralReport verify_structural(const torch::Tensor& coarse,
                                   const torch::Tensor& fine, int64_t n,
                                   double rel_tol) {
    // block sums in the input's own dtype so that coarse maps derived with
    // coarsen() verify at exactly zero error
    auto c = coarse.to(torch::kFloat64);
    auto block_sums = sum_pool(fine, n).to(torch::kFloat64);
    if (!c.sizes().equals(block_sums.sizes())) {
        throw std::invalid_argument("coarse dims x n must equal fine dims");
    }
    auto rel = (c - block_sums).abs() / c.abs().clamp_min(1.0);
    StructuralReport report;
    report.max_rel_error = rel.max().item<double>();
    report.pass = report.max_rel_error <= rel_tol;
    return report;
}

StructuralReport verify_structural(const FlowMap& coarse, const FlowMap& fine,
                                   int64_t n, double rel_tol) {
    return verify_structural(coarse.values(), fine.values(), n, rel_tol);
}

}  // namespace ufi
