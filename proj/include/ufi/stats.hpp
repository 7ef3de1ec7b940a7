#pragma once

#include <span>

namespace ufi {

/// One-sided Wilcoxon signed-rank test of "errors in A are smaller than in
/// B" over paired samples. Zero differences are dropped (ties get average
/// ranks); the p-value is exact (full sign enumeration via counting) for
/// n <= 20 pairs and normal-approximated with continuity and tie corrections
/// above. Throws when lengths differ, fewer than 6 usable pairs remain, or
/// all differences are zero.
double wilcoxon_signed_rank(std::span<const double> errors_a,
                            std::span<const double> errors_b);

}  // namespace ufi
