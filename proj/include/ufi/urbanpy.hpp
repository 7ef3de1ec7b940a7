#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "ufi/flow.hpp"
#include "ufi/fusion.hpp"

namespace ufi {

/// Convolution with one kernel per superregion and stride equal to the
/// kernel width, so each kernel sees exactly its own block. With every
/// kernel tied to the same weights this reduces to an ordinary strided
/// convolution. Output layout: (B, out_channels, grid_h, grid_w).
torch::Tensor nonshared_conv(const torch::Tensor& x, const torch::Tensor& weight,
                             const torch::Tensor& bias, int64_t kernel);

struct NonSharedConv2dImpl : torch::nn::Module {
    NonSharedConv2dImpl(int64_t grid_h, int64_t grid_w, int64_t in_channels,
                        int64_t out_channels, int64_t kernel);
    torch::Tensor forward(const torch::Tensor& x);

    int64_t grid_h, grid_w, in_channels, out_channels, kernel;
    torch::Tensor weight;  // (grid_h·grid_w, out_channels, in_channels, k, k)
    torch::Tensor bias;    // (grid_h·grid_w, out_channels)
};
TORCH_MODULE(NonSharedConv2d);

/// Stacked denoising autoencoder over per-cell geographic features.
/// Layers are affine; corruption masks random input entries to zero and the
/// objective reconstructs the clean features.
struct GeoEncoderConfig {
    int64_t in_channels = 0;   // C_poi + 3
    int64_t code_channels = 8; // C_g
    std::vector<int64_t> hidden;  // intermediate widths for deeper stacks
    double corruption = 0.3;
    int64_t epochs = 200;
    double lr = 1e-2;
    uint64_t seed = 0;

    nlohmann::json to_json() const;
    static GeoEncoderConfig from_json(const nlohmann::json& j);
};

struct GeoEncoderImpl : torch::nn::Module {
    explicit GeoEncoderImpl(const GeoEncoderConfig& cfg);

    /// (C_in, H, W) → (C_g, H, W).
    torch::Tensor encode(const torch::Tensor& geo);
    torch::Tensor decode(const torch::Tensor& code);

    GeoEncoderConfig cfg;
    std::vector<torch::nn::Linear> encoder, decoder;
};
TORCH_MODULE(GeoEncoder);

struct GeoPretrainResult {
    GeoEncoder encoder{nullptr};
    torch::Tensor code;          // H_g at the input resolution
    double reconstruction_mse = 0.0;
};

/// Greedy layer-wise pretraining on (C_in, H, W) raw features.
GeoPretrainResult pretrain_geo_encoder(const torch::Tensor& geo_raw,
                                       GeoEncoderConfig cfg);

/// Mean-pools fine-granularity geo features down to the s_l scale of a
/// pyramid whose final scale is n (densities stay densities).
torch::Tensor geo_at_scale(const torch::Tensor& geo_fine, int64_t scale, int64_t n);

struct PyramidConfig {
    std::vector<int64_t> scales = {2, 4, 8};  // strictly increasing, s_L = N
    int64_t res_blocks_per_level = 4;         // M₂
    int64_t filters = 64;                     // F
    int64_t proposal_depth = 4;               // R
    double loss_alpha = 1e-2;                 // α
    int64_t geo_channels = 8;                 // C_g
    bool use_local_structure = false;
    bool use_distributional_loss = true;
    bool use_external = true;
    double eps = 1e-7;

    int64_t final_scale() const { return scales.empty() ? 1 : scales.back(); }
    void validate() const;
    nlohmann::json to_json() const;
    static PyramidConfig from_json(const nlohmann::json& j);
};

/// Per-level forward state, l = 1..L.
struct LevelState {
    torch::Tensor features_raw;     // residual-stack output at the incoming scale
    torch::Tensor features_highway; // mean-aggregated highway view of the above
    torch::Tensor features_up;      // H_l at s_l scale
    torch::Tensor external_map;     // H^l_e or undefined
    torch::Tensor proposal;         // prototype distribution
    torch::Tensor correction;       // correction distribution
    torch::Tensor distribution;     // D_l
    torch::Tensor flow_pred;        // upsampled coarse flows times distribution
};

struct PyLevelImpl;

/// Progressive pyramid: per-level feature extraction with highway
/// connections, propose-and-correct distribution inference, equal-weight
/// mixture renormalization. D_0 is an all-ones map at the coarse scale.
struct UrbanPyImpl : torch::nn::Module {
    UrbanPyImpl(PyramidConfig cfg, int64_t coarse_height, int64_t coarse_width,
                FusionConfig fusion_cfg = {});

    /// `geo` per-level embedding codes (one tensor per level, at its scale) are
    /// required when use_local_structure is set; pass {} otherwise.
    std::vector<LevelState> forward(
        const torch::Tensor& coarse,
        const std::optional<ExternalBatch>& ext = std::nullopt,
        const std::vector<torch::Tensor>& geo = {});

    /// Precomputes per-level geo codes from a fine-granularity raw stack.
    std::vector<torch::Tensor> geo_codes(const torch::Tensor& geo_fine,
                                         GeoEncoder& encoder) const;

    PyramidConfig cfg;
    int64_t coarse_height, coarse_width;
    ExternalFusion fusion{nullptr};
    torch::nn::Conv2d conv_in{nullptr};
    std::vector<std::shared_ptr<PyLevelImpl>> levels;
};
TORCH_MODULE(UrbanPy);

/// Equal-weight mixture of two distribution maps, renormalized:
/// n2_normalize(proto + corr, block, eps).
torch::Tensor mix_renormalize(const torch::Tensor& proto, const torch::Tensor& corr,
                              int64_t block, double eps);

UrbanPy build_urbanpy(const PyramidConfig& cfg, int64_t coarse_height,
                      int64_t coarse_width, uint64_t seed,
                      FusionConfig fusion_cfg = {});

/// Single-sample inference through every level (eval mode). Local-structure
/// models additionally need the per-level geo codes.
std::vector<LevelState> forward_urbanpy(UrbanPy& model, const FlowMap& coarse,
                                        const std::optional<ExternalRecord>& record,
                                        const std::vector<torch::Tensor>& geo = {});

/// One pyramid level. Exposed for targeted tests (propose/correct paths).
struct PyLevelImpl : torch::nn::Module {
    PyLevelImpl(const PyramidConfig& cfg, int64_t level_index, int64_t coarse_h,
                int64_t coarse_w);

    torch::Tensor extract(const torch::Tensor& prev_features);
    torch::Tensor upsample_features(const torch::Tensor& h_star);  // H_l
    torch::Tensor propose(const torch::Tensor& h_star, const torch::Tensor& ext_map,
                          const torch::Tensor& prev_dist, const torch::Tensor& geo);
    torch::Tensor correct(const torch::Tensor& h_up, const torch::Tensor& ext_map);

    int64_t scale_in, scale_out, ratio;
    bool use_external, use_local_structure;
    double eps;
    std::vector<ResidualBlock> feat_blocks;
    std::vector<SubPixelBlock> feat_up;
    torch::nn::Conv2d prop_in{nullptr};
    std::vector<ResidualBlock> prop_blocks;
    std::vector<SubPixelBlock> prop_up;
    torch::nn::Conv2d prop_out{nullptr};     // plain tail
    torch::nn::Conv2d bottleneck{nullptr};   // local-structure tail
    NonSharedConv2d nsconv{nullptr};
    torch::nn::Conv2d corr_conv{nullptr};
};

}  // namespace ufi
