#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "ufi/dataset.hpp"

namespace ufi {

/// One flow regime: a fixed fine-grained block-distribution pattern that
/// applies whenever the sample's hour/weather match. First match wins;
/// samples matching no regime fall back to the first one.
struct Regime {
    int hour_min = 0;
    int hour_max = 23;                // inclusive
    std::vector<int> weather_ids;     // empty = any weather
    torch::Tensor pattern;            // (H_f, W_f) float64, each N×N block sums to 1

    bool matches(int hour, int weather) const;
};

/// Desk-scale stand-in for the real corpora: regime-keyed block
/// distributions, per-superregion random volumes, multiplicative
/// log-normal noise, coarse maps always exact aggregates.
struct SyntheticSpec {
    int64_t fine_height = 32;
    int64_t fine_width = 32;
    int64_t upscale_n = 4;
    int64_t num_samples = 100;
    std::vector<Regime> regimes;
    double volume_min = 50.0;   // total flow per superregion
    double volume_max = 150.0;
    double noise_level = 0.0;   // std of the multiplicative log-normal factor
    uint64_t seed = 0;
    int64_t interval_minutes = 30;
    int weather_vocab = 8;
    int64_t geo_poi_channels = 0;  // > 0 emits smoothed random geo fields
    std::string start_iso8601 = "2013-07-01T00:00:00";

    void validate() const;

    static SyntheticSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Dirichlet(1)-per-block pattern generator for specs and tests.
torch::Tensor random_block_pattern(int64_t height, int64_t width, int64_t n,
                                   uint64_t seed);

/// Uniform pattern (every cell gets 1/n^2 of its block).
torch::Tensor uniform_block_pattern(int64_t height, int64_t width, int64_t n);

/// Fully deterministic given spec.seed.
FlowDataset generate_synthetic(const SyntheticSpec& spec);

/// Closed-form lower bound on the test RMSE of the HA baseline under this
/// spec: sqrt(E[V^2] * mean over cells of the between-regime variance of the
/// pattern). Noise only raises HA's error, so the bound holds for any
/// noise_level.
double ha_rmse_lower_bound(const SyntheticSpec& spec);

}  // namespace ufi
