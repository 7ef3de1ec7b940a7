#include "ufi/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace ufi {

double wilcoxon_signed_rank(std::span<const double> errors_a,
                            std::span<const double> errors_b) {
    if (errors_a.size() != errors_b.size()) {
        throw std::invalid_argument("wilcoxon: paired sequences must have equal length");
    }
    if (errors_a.size() < 6) {
        throw std::invalid_argument("wilcoxon: need at least 6 pairs");
    }

    struct Diff {
        double abs;
        bool positive;
    };
    std::vector<Diff> diffs;
    for (size_t i = 0; i < errors_a.size(); ++i) {
        const double d = errors_a[i] - errors_b[i];
        if (d != 0.0) diffs.push_back({std::abs(d), d > 0});
    }
    if (diffs.empty()) {
        throw std::invalid_argument("wilcoxon: all differences are zero (undefined test)");
    }
    std::sort(diffs.begin(), diffs.end(),
              [](const Diff& x, const Diff& y) { return x.abs < y.abs; });

    const size_t n = diffs.size();
    std::vector<double> ranks(n);
    double tie_correction = 0.0;
    for (size_t i = 0; i < n;) {
        size_t j = i;
        while (j < n && diffs[j].abs == diffs[i].abs) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (size_t k = i; k < j; ++k) ranks[k] = avg_rank;
        const double t = static_cast<double>(j - i);
        tie_correction += (t * t * t - t);
        i = j;
    }

    double w_plus = 0.0;
    for (size_t i = 0; i < n; ++i) {
        if (diffs[i].positive) w_plus += ranks[i];
    }

    if (n <= 20) {
        // exact: count sign assignments with W+ <= observed; doubled ranks
        // keep everything integral under tie-averaged half ranks
        std::vector<int> doubled(n);
        int total = 0;
        for (size_t i = 0; i < n; ++i) {
            doubled[i] = static_cast<int>(std::llround(2.0 * ranks[i]));
            total += doubled[i];
        }
        std::vector<double> count(total + 1, 0.0);
        count[0] = 1.0;
        for (size_t i = 0; i < n; ++i) {
            for (int s = total; s >= doubled[i]; --s) {
                count[s] += count[s - doubled[i]];
            }
        }
        const int w2 = static_cast<int>(std::llround(2.0 * w_plus));
        double below = 0.0;
        for (int s = 0; s <= std::min(w2, total); ++s) below += count[s];
        return below / std::pow(2.0, static_cast<double>(n));
    }

    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_correction / 48.0;
    const double z = (w_plus - mean + 0.5) / std::sqrt(var);
    return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

}  // namespace ufi
