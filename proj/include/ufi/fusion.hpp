#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "ufi/dataset.hpp"

namespace ufi {

struct FusionConfig {
    int64_t embed_dow = 2;
    int64_t embed_hour = 3;
    int64_t embed_weather = 3;
    int64_t weather_vocab = 16;
    int64_t dense_hidden = 128;
    double dropout = 0.3;
    int64_t coarse_height = 0;
    int64_t coarse_width = 0;
    int64_t upsample_blocks = 2;     // n, so fine dims = 2^n × coarse dims
    bool shared_upsampler = false;   // pyramid mode: one block reused per step
    bool has_ticket_price = false;

    int64_t continuous_features() const { return has_ticket_price ? 4 : 3; }
    int64_t categorical_width() const {
        return embed_dow + embed_hour + embed_weather;
    }
    int64_t embedding_width() const {
        return continuous_features() + categorical_width();
    }
    void validate() const;

    nlohmann::json to_json() const;
    static FusionConfig from_json(const nlohmann::json& j);
};

/// Covariates of a batch of records, ready for the embedding tables.
struct ExternalBatch {
    torch::Tensor day_of_week;  // int64 (B)
    torch::Tensor hour_of_day;  // int64 (B)
    torch::Tensor weather_id;   // int64 (B)
    torch::Tensor continuous;   // (B, C_con) float
    int64_t size() const { return day_of_week.size(0); }
};

/// e = [e_con; e_cat] for one record.
struct ExternalEmbedding {
    torch::Tensor e_con;
    torch::Tensor e_cat;
    torch::Tensor e;
};

/// Sub-pixel block: conv 3×3 (C → 4C) → batch norm → depth-to-space ×2 → ReLU.
struct SubPixelBlockImpl : torch::nn::Module {
    explicit SubPixelBlockImpl(int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv{nullptr};
    torch::nn::BatchNorm2d bn{nullptr};
};
TORCH_MODULE(SubPixelBlock);

/// SRResNet-style residual block: conv-BN-ReLU-conv-BN plus identity skip.
struct ResidualBlockImpl : torch::nn::Module {
    explicit ResidualBlockImpl(int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// External factor fusion subnet: categorical embeddings + dense mixing into
/// a coarse spatial map, upsampled to the fine grid by sub-pixel blocks.
/// Continuous features are min-max normalized with train-split statistics
/// held in buffers so they travel inside checkpoints.
struct ExternalFusionImpl : torch::nn::Module {
    explicit ExternalFusionImpl(FusionConfig cfg);

    /// Min-max statistics over the train slice of `records`.
    void fit_normalization(std::span<const ExternalRecord> records);

    ExternalBatch make_batch(std::span<const ExternalRecord> records) const;
    ExternalBatch make_batch(const ExternalRecord& record) const;

    /// Concatenated [e_con; e_cat] rows, (B, embedding_width).
    torch::Tensor embed(const ExternalBatch& batch);

    /// Coarse external map, (B, 1, I, J).
    torch::Tensor forward_coarse(const ExternalBatch& batch);

    /// Fine external map: `steps` sub-pixel doublings of a coarse external map
    /// (defaults to the configured chain length). Output is >= 0.
    torch::Tensor forward_fine(const torch::Tensor& coarse_map,
                               std::optional<int64_t> steps = std::nullopt);

    FusionConfig cfg;
    torch::nn::Embedding dow_table{nullptr}, hour_table{nullptr},
        weather_table{nullptr};
    torch::nn::Linear dense1{nullptr}, dense2{nullptr};
    torch::nn::Dropout drop{nullptr};
    std::vector<SubPixelBlock> upsamplers;
    torch::Tensor cont_min, cont_max;  // buffers
};
TORCH_MODULE(ExternalFusion);

/// Embedding of a single record through the module's tables and
/// normalization. Throws on out-of-vocabulary indices.
ExternalEmbedding embed_external(const ExternalRecord& record,
                                 ExternalFusion& fusion);

}  // namespace ufi
