#pragma once

#include <cstdint>
#include <initializer_list>

#include <torch/torch.h>

namespace ufi {

/// A non-negative I×J grid of flow volumes at one timestamp.
class FlowMap {
public:
    FlowMap() = default;

    /// Validates: 2-D, height/width >= 1, every entry >= 0 and finite.
    explicit FlowMap(torch::Tensor values);

    /// Convenience for literals in tests: FlowMap({{1, 2}, {3, 4}}).
    FlowMap(std::initializer_list<std::initializer_list<double>> rows);

    const torch::Tensor& values() const { return values_; }
    int64_t height() const { return values_.size(0); }
    int64_t width() const { return values_.size(1); }
    bool defined() const { return values_.defined(); }

private:
    torch::Tensor values_;
};

/// Per-superregion block distributions over s×s subregions: entries >= 0 and
/// every block sums to 1 (up to the construction epsilon), except blocks that
/// were all-zero at the source, which stay all-zero.
struct DistributionMap {
    torch::Tensor values;  // fine-resolution grid, any leading batch/channel dims
    int64_t block_size = 1;
    double epsilon = 0.0;

    /// Throws std::invalid_argument when an invariant is violated.
    void validate(double tol = 1e-5) const;
};

/// Checks entries >= 0 and per-block sums in {0} ∪ [1−tol, 1+tol].
/// Works on 2-D/3-D/4-D tensors. Returns the offending description or empty.
std::string check_distribution_invariants(const torch::Tensor& values,
                                          int64_t block_size, double tol = 1e-5);

/// Aggregates n×n blocks of a fine map into one coarse cell each.
FlowMap coarsen(const FlowMap& fine, int64_t n);

struct StructuralReport {
    double max_rel_error = 0.0;
    bool pass = false;
};

/// Max over superregions of |coarse - block sum| / max(|coarse|, 1), compared
/// against rel_tol. Computed in float64.
StructuralReport verify_structural(const FlowMap& coarse, const FlowMap& fine,
                                   int64_t n, double rel_tol);

/// Same check on raw (possibly batched) tensors.
StructuralReport verify_structural(const torch::Tensor& coarse,
                                   const torch::Tensor& fine, int64_t n,
                                   double rel_tol);

}  // namespace ufi
