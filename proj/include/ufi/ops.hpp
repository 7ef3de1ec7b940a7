#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace ufi {

// Differentiable structural-constraint operators. All functions accept 2-D
// (H, W), 3-D (C, H, W) or 4-D (N, C, H, W) tensors; spatial dims are the
// trailing two, channels are handled independently.

/// Non-overlapping s×s block sums. Spatial dims must be divisible by s.
torch::Tensor sum_pool(const torch::Tensor& x, int64_t s);

/// Replicates every cell into an s×s block (nearest-neighbor upsampling).
torch::Tensor nn_upsample(const torch::Tensor& x, int64_t s);

/// N2-Normalization: out = x / (upsampled block sums + eps), elementwise.
///
/// Every s×s block of the output sums to sum/(sum+eps), i.e. 1 up to an
/// O(eps) defect that is kept (rather than renormalized away) to match the
/// published layer exactly; all-zero blocks stay all-zero. Requires x ≥ 0
/// elementwise and spatial dims divisible by s. Differentiable everywhere.
torch::Tensor n2_normalize(const torch::Tensor& x, int64_t s, double eps);

/// Fine map = nn_upsample(coarse, s) * dist elementwise. `dist` dims must equal
/// coarse dims × s.
torch::Tensor distributional_upsample(const torch::Tensor& coarse,
                                      const torch::Tensor& dist, int64_t s);

/// Per-superregion |coarse - block sum of fine| summed over superregions.
/// Zero iff the structural constraint holds exactly.
torch::Tensor structural_loss(const torch::Tensor& coarse,
                              const torch::Tensor& fine_pred, int64_t n);

struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
};

/// Compares the autograd gradient of a random linear functional of
/// n2_normalize against float64 central finite differences (step 1e-5).
/// Relative error is measured against the max-norm of the reference
/// gradient. Intended for small shapes (≤ 8×8).
GradCheckReport n2_normalize_grad_check(int64_t height, int64_t width,
                                        int64_t s, double eps, uint64_t seed);

}  // namespace ufi
