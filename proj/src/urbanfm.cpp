#include "ufi/urbanfm.hpp"

#include <stdexcept>

#include "ufi/ops.hpp"

namespace ufi {

using nlohmann::json;

int64_t FMConfig::upsample_steps() const {
    int64_t n = 0, v = n_upscale;
    while (v > 1) {
        v >>= 1;
        ++n;
    }
    return n;
}

void FMConfig::validate() const {
    if (n_upscale != 2 && n_upscale != 4 && n_upscale != 8 && n_upscale != 16) {
        throw std::invalid_argument("upscaling factor N must be one of {2,4,8,16}, got " +
                                    std::to_string(n_upscale));
    }
    if (res_blocks < 1 || filters < 1 || out_channels < 1) {
        throw std::invalid_argument("res_blocks, filters and out_channels must be >= 1");
    }
    if (eps < 0) throw std::invalid_argument("eps must be >= 0");
}

json FMConfig::to_json() const {
    return json{{"n_upscale", n_upscale},
                {"res_blocks", res_blocks},
                {"filters", filters},
                {"out_channels", out_channels},
                {"use_external", use_external},
                {"eps", eps},
                {"variant", variant == FMVariant::Distributional ? "distributional"
                                                                 : "structural-loss"}};
}

FMConfig FMConfig::from_json(const json& j) {
    FMConfig cfg;
    cfg.n_upscale = j.value("n_upscale", cfg.n_upscale);
    cfg.res_blocks = j.value("res_blocks", cfg.res_blocks);
    cfg.filters = j.value("filters", cfg.filters);
    cfg.out_channels = j.value("out_channels", cfg.out_channels);
    cfg.use_external = j.value("use_external", cfg.use_external);
    cfg.eps = j.value("eps", cfg.eps);
    const auto variant = j.value("variant", std::string("distributional"));
    if (variant == "distributional") {
        cfg.variant = FMVariant::Distributional;
    } else if (variant == "structural-loss") {
        cfg.variant = FMVariant::StructuralLoss;
    } else {
        throw std::invalid_argument("unknown variant '" + variant + "'");
    }
    return cfg;
}

UrbanFMImpl::UrbanFMImpl(FMConfig cfg_in, int64_t h, int64_t w,
                         FusionConfig fusion_cfg)
    : cfg(cfg_in), coarse_height(h), coarse_width(w) {
    cfg.validate();
    if (h < 1 || w < 1) throw std::invalid_argument("coarse dims must be positive");

    int64_t in_channels = 1;
    if (cfg.use_external) {
        fusion_cfg.coarse_height = h;
        fusion_cfg.coarse_width = w;
        fusion_cfg.upsample_blocks = cfg.upsample_steps();
        fusion = register_module("fusion", ExternalFusion(fusion_cfg));
        in_channels += 1;
    }

    conv_in = register_module(
        "conv_in", torch::nn::Conv2d(
                       torch::nn::Conv2dOptions(in_channels, cfg.filters, 9).padding(4)));
    for (int64_t i = 0; i < cfg.res_blocks; ++i) {
        blocks.push_back(ResidualBlock(cfg.filters));
        register_module("res_block" + std::to_string(i), blocks.back());
    }
    conv_mid = register_module(
        "conv_mid", torch::nn::Conv2d(
                        torch::nn::Conv2dOptions(cfg.filters, cfg.filters, 3).padding(1)));
    bn_mid = register_module("bn_mid", torch::nn::BatchNorm2d(cfg.filters));
    for (int64_t i = 0; i < cfg.upsample_steps(); ++i) {
        upsample.push_back(SubPixelBlock(cfg.filters));
        register_module("subpixel" + std::to_string(i), upsample.back());
    }
    const int64_t out_in = cfg.filters + (cfg.use_external ? 1 : 0);
    conv_out = register_module(
        "conv_out", torch::nn::Conv2d(
                        torch::nn::Conv2dOptions(out_in, cfg.out_channels, 9).padding(4)));
}

FMForward UrbanFMImpl::forward(const torch::Tensor& coarse,
                               const std::optional<ExternalBatch>& ext) {
    if (coarse.dim() != 4 || coarse.size(2) != coarse_height ||
        coarse.size(3) != coarse_width) {
        throw std::invalid_argument("coarse input must be (B,1," +
                                    std::to_string(coarse_height) + "," +
                                    std::to_string(coarse_width) + ")");
    }
    if (cfg.use_external != ext.has_value()) {
        throw std::invalid_argument(
            cfg.use_external ? "model was built with external fusion: records required"
                             : "model has no external subnet: records must be absent");
    }

    torch::Tensor x = coarse, fine_ext;
    if (ext) {
        auto coarse_ext = fusion->forward_coarse(*ext);
        fine_ext = fusion->forward_fine(coarse_ext);
        x = torch::cat({coarse, coarse_ext}, 1);
    }

    auto low = torch::relu(conv_in(x));
    auto h = low;
    for (auto& block : blocks) h = block->forward(h);
    h = bn_mid(conv_mid(h)) + low;
    for (auto& up : upsample) h = up->forward(h);

    auto pre_out = ext ? torch::cat({h, fine_ext}, 1) : h;
    auto raw = conv_out(pre_out);

    FMForward out;
    out.hidden = h;
    if (cfg.variant == FMVariant::Distributional) {
        out.distribution = n2_normalize(raw.abs(), cfg.n_upscale, cfg.eps);
        out.fine_pred = distributional_upsample(coarse, out.distribution, cfg.n_upscale);
    } else {
        out.fine_pred = raw;
    }
    return out;
}

UrbanFM build_urbanfm(const FMConfig& cfg, int64_t coarse_height,
                      int64_t coarse_width, uint64_t seed,
                      FusionConfig fusion_cfg) {
    cfg.validate();
    torch::manual_seed(seed);
    return UrbanFM(cfg, coarse_height, coarse_width, fusion_cfg);
}

int64_t parameter_count(const torch::nn::Module& module) {
    int64_t total = 0;
    for (const auto& p : module.parameters()) total += p.numel();
    return total;
}

FMOutput forward_urbanfm(UrbanFM& model, const FlowMap& coarse,
                         const std::optional<ExternalRecord>& record) {
    torch::NoGradGuard no_grad;
    model->eval();
    std::optional<ExternalBatch> batch;
    if (record) batch = model->fusion->make_batch(*record);
    auto raw = model->forward(
        coarse.values().to(torch::kFloat32).unsqueeze(0).unsqueeze(0), batch);

    FMOutput out;
    out.hidden = raw.hidden.squeeze(0);
    if (raw.distribution.defined()) {
        out.distribution = DistributionMap{raw.distribution.squeeze(0).squeeze(0),
                                           model->cfg.n_upscale, model->cfg.eps};
        out.fine_pred = FlowMap(raw.fine_pred.squeeze(0).squeeze(0));
    } else {
        // unconstrained head: clamp for the FlowMap contract
        out.fine_pred = FlowMap(raw.fine_pred.squeeze(0).squeeze(0).clamp_min(0));
    }
    return out;
}

}  // namespace ufi
