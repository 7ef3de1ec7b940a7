#pragma once

#include <cstdint>
#include <optional>

#include <json.hpp>
#include <torch/torch.h>

#include "ufi/flow.hpp"
#include "ufi/fusion.hpp"

namespace ufi {

enum class FMVariant {
    Distributional,  // N2-normalized distribution head + Hadamard recovery
    StructuralLoss,  // unconstrained sub-pixel head, trained with L_s
};

struct FMConfig {
    int64_t n_upscale = 4;    // N, power of two in {2,4,8,16}
    int64_t res_blocks = 16;  // M
    int64_t filters = 64;     // F
    int64_t out_channels = 1; // F_o
    bool use_external = true;
    double eps = 1e-7;        // normalization epsilon (float32 training)
    FMVariant variant = FMVariant::Distributional;

    int64_t upsample_steps() const;  // n with N = 2^n
    void validate() const;
    nlohmann::json to_json() const;
    static FMConfig from_json(const nlohmann::json& j);
};

/// Batched forward result. `distribution` is undefined for the
/// structural-loss variant.
struct FMForward {
    torch::Tensor fine_pred;     // (B, F_o, N·I, N·J)
    torch::Tensor distribution;  // (B, F_o, N·I, N·J) or undefined
    torch::Tensor hidden;        // fine feature stack, (B, F, N·I, N·J)
};

/// Single-sample result with domain types.
struct FMOutput {
    FlowMap fine_pred;
    DistributionMap distribution;
    torch::Tensor hidden;
};

/// Single-pass UrbanFM: 9×9 input conv, M residual blocks, post-conv with
/// identity skip, n sub-pixel blocks, 9×9 output conv, then distributional
/// upsampling (abs, block normalization, Hadamard with the coarse input).
/// External maps, when enabled, concatenate with the input before the first
/// conv and with the fine features before the output conv.
struct UrbanFMImpl : torch::nn::Module {
    UrbanFMImpl(FMConfig cfg, int64_t coarse_height, int64_t coarse_width,
                FusionConfig fusion_cfg = {});

    FMForward forward(const torch::Tensor& coarse,
                      const std::optional<ExternalBatch>& ext = std::nullopt);

    FMConfig cfg;
    int64_t coarse_height, coarse_width;
    ExternalFusion fusion{nullptr};
    torch::nn::Conv2d conv_in{nullptr};
    std::vector<ResidualBlock> blocks;
    torch::nn::Conv2d conv_mid{nullptr};
    torch::nn::BatchNorm2d bn_mid{nullptr};
    std::vector<SubPixelBlock> upsample;
    torch::nn::Conv2d conv_out{nullptr};
};
TORCH_MODULE(UrbanFM);

/// Seeded constructor; validates the config.
UrbanFM build_urbanfm(const FMConfig& cfg, int64_t coarse_height,
                      int64_t coarse_width, uint64_t seed,
                      FusionConfig fusion_cfg = {});

int64_t parameter_count(const torch::nn::Module& module);

/// Single-sample inference (eval mode). `record` must be present iff the
/// model was built with use_external.
FMOutput forward_urbanfm(UrbanFM& model, const FlowMap& coarse,
                         const std::optional<ExternalRecord>& record);

}  // namespace ufi
