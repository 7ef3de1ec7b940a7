#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "ufi/flow.hpp"

namespace ufi {

/// Timestamped weather/time/event covariates.
struct ExternalRecord {
    int day_of_week = 0;   // 0 = Monday
    int hour_of_day = 0;   // 0..23
    int weather_id = 0;    // category index within the dataset vocabulary
    double temperature_c = 0.0;
    double wind_speed_mph = 0.0;
    bool is_holiday = false;
    std::optional<double> ticket_price;
};

/// Per-cell POI-category and road-tier densities plus an optional
/// compressed embedding, all at the fine granularity.
struct GeoFeatureStack {
    torch::Tensor poi_density;                 // (C_poi, H, W), >= 0
    torch::Tensor road_density;                // (3, H, W), tier-1/2/3, >= 0
    std::optional<torch::Tensor> embedding;    // (C_g, H, W)

    void validate() const;
    /// Raw stack: poi and road densities concatenated along channels.
    torch::Tensor raw() const;
};

/// Time-ordered fine-granularity flow maps with aligned external factors.
struct FlowDataset {
    std::vector<FlowMap> maps;            // fine granularity, float32
    std::vector<int64_t> timestamps;      // unix seconds, one per map
    int64_t interval_minutes = 30;
    std::vector<ExternalRecord> externals;  // empty or |maps| entries
    std::optional<GeoFeatureStack> geo;
    int weather_vocab = 16;
    bool has_ticket_price = false;
    // Declared covariate ranges; violations warn, they do not fail.
    std::optional<std::pair<double, double>> temperature_range;
    std::optional<std::pair<double, double>> wind_range;

    int64_t size() const { return static_cast<int64_t>(maps.size()); }
    int64_t height() const { return maps.empty() ? 0 : maps.front().height(); }
    int64_t width() const { return maps.empty() ? 0 : maps.front().width(); }
    bool has_externals() const { return !externals.empty(); }

    /// Throws when alignment or shape invariants are violated; emits
    /// range warnings to stderr.
    void validate() const;

    /// All maps stacked as an (T, 1, H, W) float32 tensor.
    torch::Tensor stacked() const;
};

/// Contiguous, time-ordered train/validation/test index ranges.
struct DatasetSplit {
    int64_t train_end = 0;  // [0, train_end)
    int64_t val_end = 0;    // [train_end, val_end)
    int64_t test_end = 0;   // [val_end, test_end)

    int64_t train_size() const { return train_end; }
    int64_t val_size() const { return val_end - train_end; }
    int64_t test_size() const { return test_end - val_end; }
};

/// Partitions [0, |ds|) proportionally to `ratios` (train, val, test);
/// remainder rows go to train. Requires positive ratios and |ds| >= 3.
DatasetSplit split(const FlowDataset& ds, double train_ratio, double val_ratio,
                   double test_ratio);

/// Directory layout: manifest.json + flows.bin (f32le row-major,
/// sample-major) + externals.csv (optional) + geo.bin (optional).
void save_dataset(const FlowDataset& ds, const std::filesystem::path& dir);
FlowDataset load_dataset(const std::filesystem::path& dir);

}  // namespace ufi
