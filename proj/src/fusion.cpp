#include "ufi/fusion.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace ufi {

using nlohmann::json;

void FusionConfig::validate() const {
    if (embed_dow < 1 || embed_hour < 1 || embed_weather < 1) {
        throw std::invalid_argument("embedding dims must be positive");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw std::invalid_argument("dropout must be in [0, 1)");
    }
    if (coarse_height < 1 || coarse_width < 1) {
        throw std::invalid_argument("fusion coarse dims must be positive");
    }
    if (weather_vocab < 1) throw std::invalid_argument("weather vocabulary empty");
    if (upsample_blocks < 0) throw std::invalid_argument("upsample_blocks < 0");
}

json FusionConfig::to_json() const {
    return json{{"embed_dow", embed_dow},
                {"embed_hour", embed_hour},
                {"embed_weather", embed_weather},
                {"weather_vocab", weather_vocab},
                {"dense_hidden", dense_hidden},
                {"dropout", dropout},
                {"coarse_height", coarse_height},
                {"coarse_width", coarse_width},
                {"upsample_blocks", upsample_blocks},
                {"shared_upsampler", shared_upsampler},
                {"has_ticket_price", has_ticket_price}};
}

FusionConfig FusionConfig::from_json(const json& j) {
    FusionConfig cfg;
    cfg.embed_dow = j.value("embed_dow", cfg.embed_dow);
    cfg.embed_hour = j.value("embed_hour", cfg.embed_hour);
    cfg.embed_weather = j.value("embed_weather", cfg.embed_weather);
    cfg.weather_vocab = j.value("weather_vocab", cfg.weather_vocab);
    cfg.dense_hidden = j.value("dense_hidden", cfg.dense_hidden);
    cfg.dropout = j.value("dropout", cfg.dropout);
    cfg.coarse_height = j.at("coarse_height").get<int64_t>();
    cfg.coarse_width = j.at("coarse_width").get<int64_t>();
    cfg.upsample_blocks = j.value("upsample_blocks", cfg.upsample_blocks);
    cfg.shared_upsampler = j.value("shared_upsampler", cfg.shared_upsampler);
    cfg.has_ticket_price = j.value("has_ticket_price", cfg.has_ticket_price);
    return cfg;
}

SubPixelBlockImpl::SubPixelBlockImpl(int64_t channels) {
    conv = register_module(
        "conv", torch::nn::Conv2d(
                    torch::nn::Conv2dOptions(channels, channels * 4, 3).padding(1)));
    bn = register_module("bn", torch::nn::BatchNorm2d(channels * 4));
}

torch::Tensor SubPixelBlockImpl::forward(const torch::Tensor& x) {
    return torch::relu(torch::pixel_shuffle(bn(conv(x)), 2));
}

ResidualBlockImpl::ResidualBlockImpl(int64_t channels) {
    conv1 = register_module(
        "conv1", torch::nn::Conv2d(
                     torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
    bn1 = register_module("bn1", torch::nn::BatchNorm2d(channels));
    conv2 = register_module(
        "conv2", torch::nn::Conv2d(
                     torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
    bn2 = register_module("bn2", torch::nn::BatchNorm2d(channels));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
    auto h = torch::relu(bn1(conv1(x)));
    return x + bn2(conv2(h));
}

ExternalFusionImpl::ExternalFusionImpl(FusionConfig cfg_in) : cfg(cfg_in) {
    cfg.validate();
    dow_table = register_module("dow_table", torch::nn::Embedding(7, cfg.embed_dow));
    hour_table =
        register_module("hour_table", torch::nn::Embedding(24, cfg.embed_hour));
    weather_table = register_module(
        "weather_table", torch::nn::Embedding(cfg.weather_vocab, cfg.embed_weather));
    dense1 = register_module(
        "dense1", torch::nn::Linear(cfg.embedding_width(), cfg.dense_hidden));
    drop = register_module("drop", torch::nn::Dropout(cfg.dropout));
    dense2 = register_module(
        "dense2",
        torch::nn::Linear(cfg.dense_hidden, cfg.coarse_height * cfg.coarse_width));
    const int64_t blocks = cfg.shared_upsampler ? std::min<int64_t>(1, cfg.upsample_blocks)
                                                : cfg.upsample_blocks;
    for (int64_t i = 0; i < blocks; ++i) {
        upsamplers.push_back(SubPixelBlock(1));
        register_module("upsampler" + std::to_string(i), upsamplers.back());
    }
    cont_min = register_buffer(
        "cont_min", torch::zeros({cfg.continuous_features()}, torch::kFloat32));
    cont_max = register_buffer(
        "cont_max", torch::ones({cfg.continuous_features()}, torch::kFloat32));
}

void ExternalFusionImpl::fit_normalization(std::span<const ExternalRecord> records) {
    if (records.empty()) {
        throw std::invalid_argument("cannot fit normalization on an empty split");
    }
    const int64_t c = cfg.continuous_features();
    auto lo = torch::full({c}, std::numeric_limits<float>::max());
    auto hi = torch::full({c}, std::numeric_limits<float>::lowest());
    auto lacc = lo.accessor<float, 1>();
    auto hacc = hi.accessor<float, 1>();
    for (const auto& r : records) {
        float vals[4] = {static_cast<float>(r.temperature_c),
                         static_cast<float>(r.wind_speed_mph),
                         r.is_holiday ? 1.0f : 0.0f,
                         static_cast<float>(r.ticket_price.value_or(0.0))};
        for (int64_t i = 0; i < c; ++i) {
            lacc[i] = std::min(lacc[i], vals[i]);
            hacc[i] = std::max(hacc[i], vals[i]);
        }
    }
    cont_min.copy_(lo);
    cont_max.copy_(hi);
}

ExternalBatch ExternalFusionImpl::make_batch(
    std::span<const ExternalRecord> records) const {
    const int64_t b = static_cast<int64_t>(records.size());
    const int64_t c = cfg.continuous_features();
    auto dow = torch::empty({b}, torch::kInt64);
    auto hour = torch::empty({b}, torch::kInt64);
    auto weather = torch::empty({b}, torch::kInt64);
    auto cont = torch::empty({b, c}, torch::kFloat32);
    auto lo = cont_min.to(torch::kFloat32);
    auto hi = cont_max.to(torch::kFloat32);
    auto cacc = cont.accessor<float, 2>();
    auto lacc = lo.accessor<float, 1>();
    auto hacc = hi.accessor<float, 1>();
    for (int64_t i = 0; i < b; ++i) {
        const auto& r = records[i];
        if (r.day_of_week < 0 || r.day_of_week > 6) {
            throw std::invalid_argument("day_of_week out of vocabulary");
        }
        if (r.hour_of_day < 0 || r.hour_of_day > 23) {
            throw std::invalid_argument("hour_of_day out of vocabulary");
        }
        if (r.weather_id < 0 || r.weather_id >= cfg.weather_vocab) {
            throw std::invalid_argument("weather_id " + std::to_string(r.weather_id) +
                                        " out of vocabulary of size " +
                                        std::to_string(cfg.weather_vocab));
        }
        dow[i] = r.day_of_week;
        hour[i] = r.hour_of_day;
        weather[i] = r.weather_id;
        float vals[4] = {static_cast<float>(r.temperature_c),
                         static_cast<float>(r.wind_speed_mph),
                         r.is_holiday ? 1.0f : 0.0f,
                         static_cast<float>(r.ticket_price.value_or(0.0))};
        for (int64_t k = 0; k < c; ++k) {
            const float range = hacc[k] - lacc[k];
            cacc[i][k] = range > 0 ? (vals[k] - lacc[k]) / range : 0.0f;
        }
    }
    return {dow, hour, weather, cont};
}

ExternalBatch ExternalFusionImpl::make_batch(const ExternalRecord& record) const {
    return make_batch(std::span<const ExternalRecord>(&record, 1));
}

torch::Tensor ExternalFusionImpl::embed(const ExternalBatch& batch) {
    auto e_cat = torch::cat({dow_table(batch.day_of_week),
                             hour_table(batch.hour_of_day),
                             weather_table(batch.weather_id)},
                            1);
    auto cont = batch.continuous.to(e_cat.dtype());
    return torch::cat({cont, e_cat}, 1);
}

torch::Tensor ExternalFusionImpl::forward_coarse(const ExternalBatch& batch) {
    auto h = drop(torch::relu(dense1(embed(batch))));
    auto flat = dense2(h);
    return flat.view({batch.size(), 1, cfg.coarse_height, cfg.coarse_width});
}

torch::Tensor ExternalFusionImpl::forward_fine(const torch::Tensor& coarse_map,
                                               std::optional<int64_t> steps) {
    const int64_t n = steps.value_or(cfg.upsample_blocks);
    auto h = coarse_map;
    for (int64_t i = 0; i < n; ++i) {
        auto& block = cfg.shared_upsampler ? upsamplers.at(0)
                                           : upsamplers.at(static_cast<size_t>(i));
        h = block->forward(h);
    }
    return h;
}

ExternalEmbedding embed_external(const ExternalRecord& record,
                                 ExternalFusion& fusion) {
    torch::NoGradGuard no_grad;
    auto batch = fusion->make_batch(record);
    auto e_cat = torch::cat({fusion->dow_table(batch.day_of_week),
                             fusion->hour_table(batch.hour_of_day),
                             fusion->weather_table(batch.weather_id)},
                            1)
                     .squeeze(0);
    auto e_con = batch.continuous.squeeze(0).to(e_cat.dtype());
    return {e_con, e_cat, torch::cat({e_con, e_cat})};
}

}  // namespace ufi
