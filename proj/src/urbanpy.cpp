#include "ufi/urbanpy.hpp"

#include <cmath>
#include <stdexcept>

#include "ufi/ops.hpp"

namespace ufi {

using nlohmann::json;
namespace F = torch::nn::functional;

torch::Tensor nonshared_conv(const torch::Tensor& x, const torch::Tensor& weight,
                             const torch::Tensor& bias, int64_t kernel) {
    if (x.dim() != 4) throw std::invalid_argument("nonshared_conv expects (B,C,H,W)");
    if (weight.dim() != 5) {
        throw std::invalid_argument("nonshared_conv weight must be (L,O,C,k,k)");
    }
    const int64_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    if (h % kernel != 0 || w % kernel != 0) {
        throw std::invalid_argument("input dims must be divisible by the kernel width");
    }
    const int64_t gh = h / kernel, gw = w / kernel;
    const int64_t locations = weight.size(0), out_ch = weight.size(1);
    if (locations != gh * gw || weight.size(2) != c || weight.size(3) != kernel ||
        weight.size(4) != kernel) {
        throw std::invalid_argument(
            "kernel grid mismatch: weight is for " + std::to_string(locations) +
            " superregions of " + std::to_string(weight.size(2)) + " channels, input has " +
            std::to_string(gh * gw) + " superregions of " + std::to_string(c) +
            " channels");
    }
    // unfold enumerates non-overlapping k-by-k patches row-major: (B, C*k*k, L)
    auto patches = F::unfold(x, F::UnfoldFuncOptions(kernel).stride(kernel));
    auto wflat = weight.view({locations, out_ch, c * kernel * kernel});
    // out[b,o,l] = sum_k patches[b,k,l] * weight[l,o,k]
    auto out = torch::einsum("bkl,lok->bol", {patches, wflat});
    if (bias.defined()) {
        out = out + bias.t().unsqueeze(0);  // (L,O) → (1,O,L)
    }
    return out.view({b, out_ch, gh, gw});
}

NonSharedConv2dImpl::NonSharedConv2dImpl(int64_t gh, int64_t gw, int64_t in_ch,
                                         int64_t out_ch, int64_t k)
    : grid_h(gh), grid_w(gw), in_channels(in_ch), out_channels(out_ch), kernel(k) {
    if (gh < 1 || gw < 1 || in_ch < 1 || out_ch < 1 || k < 1) {
        throw std::invalid_argument("NonSharedConv2d dims must be positive");
    }
    // conv-style uniform fan-in init
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * k * k));
    weight = register_parameter(
        "weight",
        torch::empty({gh * gw, out_ch, in_ch, k, k}).uniform_(-bound, bound));
    bias = register_parameter("bias",
                              torch::empty({gh * gw, out_ch}).uniform_(-bound, bound));
}

torch::Tensor NonSharedConv2dImpl::forward(const torch::Tensor& x) {
    return nonshared_conv(x, weight, bias, kernel);
}

json GeoEncoderConfig::to_json() const {
    return json{{"in_channels", in_channels}, {"code_channels", code_channels},
                {"hidden", hidden},           {"corruption", corruption},
                {"epochs", epochs},           {"lr", lr},
                {"seed", seed}};
}

GeoEncoderConfig GeoEncoderConfig::from_json(const json& j) {
    GeoEncoderConfig cfg;
    cfg.in_channels = j.at("in_channels").get<int64_t>();
    cfg.code_channels = j.value("code_channels", cfg.code_channels);
    cfg.hidden = j.value("hidden", cfg.hidden);
    cfg.corruption = j.value("corruption", cfg.corruption);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

GeoEncoderImpl::GeoEncoderImpl(const GeoEncoderConfig& cfg_in) : cfg(cfg_in) {
    if (cfg.in_channels < 1 || cfg.code_channels < 1) {
        throw std::invalid_argument("geo encoder channel counts must be positive");
    }
    std::vector<int64_t> widths;
    widths.push_back(cfg.in_channels);
    for (auto h : cfg.hidden) widths.push_back(h);
    widths.push_back(cfg.code_channels);
    for (size_t i = 0; i + 1 < widths.size(); ++i) {
        encoder.push_back(torch::nn::Linear(widths[i], widths[i + 1]));
        register_module("enc" + std::to_string(i), encoder.back());
        decoder.push_back(torch::nn::Linear(widths[i + 1], widths[i]));
        register_module("dec" + std::to_string(i), decoder.back());
    }
}

torch::Tensor GeoEncoderImpl::encode(const torch::Tensor& geo) {
    if (geo.dim() != 3 || geo.size(0) != cfg.in_channels) {
        throw std::invalid_argument("geo encoder expects (C_in, H, W)");
    }
    const int64_t h = geo.size(1), w = geo.size(2);
    auto cells = geo.permute({1, 2, 0}).reshape({h * w, cfg.in_channels});
    for (auto& layer : encoder) cells = layer(cells);
    return cells.view({h, w, cfg.code_channels}).permute({2, 0, 1}).contiguous();
}

torch::Tensor GeoEncoderImpl::decode(const torch::Tensor& code) {
    const int64_t h = code.size(1), w = code.size(2);
    auto cells = code.permute({1, 2, 0}).reshape({h * w, cfg.code_channels});
    for (auto it = decoder.rbegin(); it != decoder.rend(); ++it) cells = (*it)(cells);
    return cells.view({h, w, cfg.in_channels}).permute({2, 0, 1}).contiguous();
}

GeoPretrainResult pretrain_geo_encoder(const torch::Tensor& geo_raw,
                                       GeoEncoderConfig cfg) {
    if (!geo_raw.defined() || geo_raw.dim() != 3) {
        throw std::invalid_argument("geo pretraining requires a (C,H,W) raw stack");
    }
    if (cfg.in_channels == 0) cfg.in_channels = geo_raw.size(0);
    if (cfg.in_channels != geo_raw.size(0)) {
        throw std::invalid_argument("geo encoder in_channels disagrees with the stack");
    }
    torch::manual_seed(cfg.seed);
    GeoEncoder model(cfg);

    const int64_t h = geo_raw.size(1), w = geo_raw.size(2);
    auto cells = geo_raw.to(torch::kFloat32)
                     .permute({1, 2, 0})
                     .reshape({h * w, cfg.in_channels})
                     .contiguous();

    // greedy layer-wise denoising pretraining
    auto layer_input = cells;
    for (size_t li = 0; li < model->encoder.size(); ++li) {
        std::vector<torch::Tensor> params;
        for (auto& p : model->encoder[li]->parameters()) params.push_back(p);
        for (auto& p : model->decoder[li]->parameters()) params.push_back(p);
        torch::optim::Adam opt(params, torch::optim::AdamOptions(cfg.lr));
        for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            opt.zero_grad();
            auto corrupted = layer_input;
            if (cfg.corruption > 0) {
                auto mask = torch::rand_like(layer_input).ge(cfg.corruption);
                corrupted = layer_input * mask.to(layer_input.dtype());
            }
            auto recon = model->decoder[li](model->encoder[li](corrupted));
            auto loss = torch::mse_loss(recon, layer_input);
            loss.backward();
            opt.step();
        }
        layer_input = model->encoder[li](layer_input).detach();
    }

    GeoPretrainResult result;
    result.encoder = model;
    torch::NoGradGuard no_grad;
    result.code = model->encode(geo_raw.to(torch::kFloat32));
    result.reconstruction_mse =
        torch::mse_loss(model->decode(result.code), geo_raw.to(torch::kFloat32))
            .item<double>();
    return result;
}

torch::Tensor geo_at_scale(const torch::Tensor& geo_fine, int64_t scale, int64_t n) {
    if (n % scale != 0) {
        throw std::invalid_argument("pyramid scale must divide the final scale");
    }
    const int64_t factor = n / scale;
    if (factor == 1) return geo_fine;
    return sum_pool(geo_fine, factor) / static_cast<double>(factor * factor);
}

void PyramidConfig::validate() const {
    if (scales.empty()) throw std::invalid_argument("pyramid needs at least one scale");
    int64_t prev = 1;
    for (auto s : scales) {
        if (s < 2 * prev || s % prev != 0) {
            throw std::invalid_argument(
                "scales must be strictly increasing with integer ratio >= 2");
        }
        int64_t ratio = s / prev;
        while (ratio % 2 == 0) ratio /= 2;
        if (ratio != 1) {
            throw std::invalid_argument(
                "scale ratios must be powers of two (factor-2 sub-pixel chain)");
        }
        prev = s;
    }
    if (res_blocks_per_level < 1 || filters < 1 || proposal_depth < 1) {
        throw std::invalid_argument("M2, F and R must be >= 1");
    }
    if (loss_alpha < 0.0 || loss_alpha > 1.0) {
        throw std::invalid_argument("loss_alpha must be in [0, 1]");
    }
    if (use_local_structure && geo_channels < 1) {
        throw std::invalid_argument("local structure requires geo_channels >= 1");
    }
    if (eps < 0) throw std::invalid_argument("eps must be >= 0");
}

json PyramidConfig::to_json() const {
    return json{{"scales", scales},
                {"res_blocks_per_level", res_blocks_per_level},
                {"filters", filters},
                {"proposal_depth", proposal_depth},
                {"loss_alpha", loss_alpha},
                {"geo_channels", geo_channels},
                {"use_local_structure", use_local_structure},
                {"use_distributional_loss", use_distributional_loss},
                {"use_external", use_external},
                {"eps", eps}};
}

PyramidConfig PyramidConfig::from_json(const json& j) {
    PyramidConfig cfg;
    cfg.scales = j.value("scales", cfg.scales);
    cfg.res_blocks_per_level = j.value("res_blocks_per_level", cfg.res_blocks_per_level);
    cfg.filters = j.value("filters", cfg.filters);
    cfg.proposal_depth = j.value("proposal_depth", cfg.proposal_depth);
    cfg.loss_alpha = j.value("loss_alpha", cfg.loss_alpha);
    cfg.geo_channels = j.value("geo_channels", cfg.geo_channels);
    cfg.use_local_structure = j.value("use_local_structure", cfg.use_local_structure);
    cfg.use_distributional_loss =
        j.value("use_distributional_loss", cfg.use_distributional_loss);
    cfg.use_external = j.value("use_external", cfg.use_external);
    cfg.eps = j.value("eps", cfg.eps);
    return cfg;
}

torch::Tensor mix_renormalize(const torch::Tensor& proto, const torch::Tensor& corr,
                              int64_t block, double eps) {
    if (!proto.sizes().equals(corr.sizes())) {
        throw std::invalid_argument("mixture components must share dimensions");
    }
    return n2_normalize(proto + corr, block, eps);
}

namespace {

int64_t log2_exact(int64_t v) {
    int64_t n = 0;
    while (v > 1) {
        v >>= 1;
        ++n;
    }
    return n;
}

}  // namespace

PyLevelImpl::PyLevelImpl(const PyramidConfig& cfg, int64_t level_index,
                         int64_t coarse_h, int64_t coarse_w) {
    scale_in = level_index == 0 ? 1 : cfg.scales[level_index - 1];
    scale_out = cfg.scales[level_index];
    ratio = scale_out / scale_in;
    use_external = cfg.use_external;
    use_local_structure = cfg.use_local_structure;
    eps = cfg.eps;
    const int64_t f = cfg.filters;

    for (int64_t i = 0; i < cfg.res_blocks_per_level; ++i) {
        feat_blocks.push_back(ResidualBlock(f));
        register_module("feat_block" + std::to_string(i), feat_blocks.back());
    }
    for (int64_t i = 0; i < log2_exact(ratio); ++i) {
        feat_up.push_back(SubPixelBlock(f));
        register_module("feat_up" + std::to_string(i), feat_up.back());
    }

    const int64_t prop_in_ch = f + 1 + (use_external ? 1 : 0);  // + D_{l−1} (+ H_e)
    prop_in = register_module(
        "prop_in",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(prop_in_ch, f, 3).padding(1)));
    for (int64_t i = 0; i < cfg.proposal_depth; ++i) {
        prop_blocks.push_back(ResidualBlock(f));
        register_module("prop_block" + std::to_string(i), prop_blocks.back());
    }
    for (int64_t i = 0; i < log2_exact(ratio); ++i) {
        prop_up.push_back(SubPixelBlock(f));
        register_module("prop_up" + std::to_string(i), prop_up.back());
    }
    if (use_local_structure) {
        bottleneck = register_module(
            "bottleneck", torch::nn::Conv2d(torch::nn::Conv2dOptions(f, 2, 1)));
        nsconv = register_module(
            "nsconv",
            NonSharedConv2d(coarse_h, coarse_w, 2 + cfg.geo_channels,
                            scale_out * scale_out, scale_out));
    } else {
        prop_out = register_module(
            "prop_out", torch::nn::Conv2d(torch::nn::Conv2dOptions(f, 1, 9).padding(4)));
    }

    const int64_t corr_in_ch = f + (use_external ? 1 : 0);
    corr_conv = register_module(
        "corr_conv",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(corr_in_ch, 1, 9).padding(4)));
}

torch::Tensor PyLevelImpl::extract(const torch::Tensor& prev_features) {
    auto h = prev_features;
    for (auto& block : feat_blocks) h = block->forward(h);
    return h;
}

torch::Tensor PyLevelImpl::upsample_features(const torch::Tensor& h_star) {
    auto h = h_star;
    for (auto& up : feat_up) h = up->forward(h);
    return h;
}

torch::Tensor PyLevelImpl::propose(const torch::Tensor& h_star,
                                   const torch::Tensor& ext_map,
                                   const torch::Tensor& prev_dist,
                                   const torch::Tensor& geo) {
    std::vector<torch::Tensor> inputs{h_star, prev_dist};
    if (use_external) inputs.insert(inputs.begin() + 1, ext_map);
    auto q = torch::relu(prop_in(torch::cat(inputs, 1)));
    for (auto& block : prop_blocks) q = block->forward(q);
    for (auto& up : prop_up) q = up->forward(q);

    torch::Tensor z;
    if (use_local_structure) {
        if (!geo.defined()) {
            throw std::invalid_argument(
                "use_local_structure requires geographic features for every level");
        }
        auto compact = bottleneck(q);
        auto geo_b = geo.unsqueeze(0).expand({q.size(0), -1, -1, -1});
        z = torch::pixel_shuffle(nsconv(torch::cat({compact, geo_b}, 1)), scale_out);
    } else {
        z = prop_out(q);
    }
    return n2_normalize(z.abs(), scale_out, eps);
}

torch::Tensor PyLevelImpl::correct(const torch::Tensor& h_up,
                                   const torch::Tensor& ext_map) {
    auto in = use_external ? torch::cat({h_up, ext_map}, 1) : h_up;
    return n2_normalize(corr_conv(in).abs(), scale_out, eps);
}

UrbanPyImpl::UrbanPyImpl(PyramidConfig cfg_in, int64_t h, int64_t w,
                         FusionConfig fusion_cfg)
    : cfg(cfg_in), coarse_height(h), coarse_width(w) {
    cfg.validate();
    if (h < 1 || w < 1) throw std::invalid_argument("coarse dims must be positive");

    int64_t in_channels = 1;
    if (cfg.use_external) {
        fusion_cfg.coarse_height = h;
        fusion_cfg.coarse_width = w;
        fusion_cfg.upsample_blocks = 1;
        fusion_cfg.shared_upsampler = true;  // same weights in each upsampler
        fusion = register_module("fusion", ExternalFusion(fusion_cfg));
        in_channels += 1;
    }
    conv_in = register_module(
        "conv_in", torch::nn::Conv2d(
                       torch::nn::Conv2dOptions(in_channels, cfg.filters, 9).padding(4)));
    for (size_t l = 0; l < cfg.scales.size(); ++l) {
        levels.push_back(std::make_shared<PyLevelImpl>(cfg, static_cast<int64_t>(l), h, w));
        register_module("level" + std::to_string(l + 1), levels.back());
    }
}

std::vector<LevelState> UrbanPyImpl::forward(const torch::Tensor& coarse,
                                             const std::optional<ExternalBatch>& ext,
                                             const std::vector<torch::Tensor>& geo) {
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
    if (cfg.use_local_structure && geo.size() != cfg.scales.size()) {
        throw std::invalid_argument(
            "use_local_structure requires one geo code tensor per level");
    }

    torch::Tensor ext_map;  // H^{l−1}_e, starts at the coarse scale
    torch::Tensor x = coarse;
    if (ext) {
        ext_map = fusion->forward_coarse(*ext);
        x = torch::cat({coarse, ext_map}, 1);
    }
    auto features = torch::relu(conv_in(x));  // H_0

    auto prev_dist = torch::ones_like(coarse);  // D_0
    std::vector<torch::Tensor> raw_history;     // earlier level features, native scales
    std::vector<int64_t> raw_scales;
    std::vector<LevelState> states;

    for (size_t l = 0; l < levels.size(); ++l) {
        auto& level = levels[l];
        LevelState state;

        state.features_raw = level->extract(features);
        // highway: mean of current + all previous representations upsampled
        // to the s_{l−1} scale
        if (raw_history.empty()) {
            state.features_highway = state.features_raw;
        } else {
            auto acc = state.features_raw.clone();
            for (size_t k = 0; k < raw_history.size(); ++k) {
                acc = acc + nn_upsample(raw_history[k], level->scale_in / raw_scales[k]);
            }
            state.features_highway = acc / static_cast<double>(raw_history.size() + 1);
        }
        state.features_up = level->upsample_features(state.features_highway);

        torch::Tensor next_ext_map;
        if (ext) {
            next_ext_map = fusion->forward_fine(ext_map, log2_exact(level->ratio));
        }

        auto geo_l = cfg.use_local_structure ? geo[l] : torch::Tensor();
        state.proposal = level->propose(state.features_highway, ext_map, prev_dist, geo_l);
        state.correction = level->correct(state.features_up, next_ext_map);
        state.distribution = mix_renormalize(state.proposal, state.correction,
                                             level->scale_out, cfg.eps);
        state.flow_pred =
            distributional_upsample(coarse, state.distribution, level->scale_out);
        state.external_map = next_ext_map;

        raw_history.push_back(state.features_raw);
        raw_scales.push_back(level->scale_in);
        prev_dist = state.distribution;
        features = state.features_up;
        ext_map = next_ext_map;
        states.push_back(std::move(state));
    }
    return states;
}

std::vector<torch::Tensor> UrbanPyImpl::geo_codes(const torch::Tensor& geo_fine,
                                                  GeoEncoder& encoder) const {
    std::vector<torch::Tensor> codes;
    for (auto s : cfg.scales) {
        codes.push_back(encoder->encode(geo_at_scale(geo_fine, s, cfg.final_scale())));
    }
    return codes;
}

UrbanPy build_urbanpy(const PyramidConfig& cfg, int64_t coarse_height,
                      int64_t coarse_width, uint64_t seed,
                      FusionConfig fusion_cfg) {
    cfg.validate();
    torch::manual_seed(seed);
    return UrbanPy(cfg, coarse_height, coarse_width, fusion_cfg);
}

}  // namespace ufi
