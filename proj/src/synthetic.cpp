#include "ufi/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "ufi/ops.hpp"
#include "ufi/time_util.hpp"

namespace ufi {

using nlohmann::json;

bool Regime::matches(int hour, int weather) const {
    if (hour < hour_min || hour > hour_max) return false;
    if (weather_ids.empty()) return true;
    return std::find(weather_ids.begin(), weather_ids.end(), weather) !=
           weather_ids.end();
}

void SyntheticSpec::validate() const {
    if (fine_height < 1 || fine_width < 1 || num_samples < 1) {
        throw std::invalid_argument("synthetic spec dims/samples must be positive");
    }
    if (upscale_n < 1 || fine_height % upscale_n != 0 || fine_width % upscale_n != 0) {
        throw std::invalid_argument("fine dims must be divisible by upscale_n");
    }
    if (regimes.empty()) throw std::invalid_argument("spec declares no regimes");
    if (volume_min < 0 || volume_max < volume_min) {
        throw std::invalid_argument("volume range must satisfy 0 <= min <= max");
    }
    if (noise_level < 0) throw std::invalid_argument("noise_level must be >= 0");
    for (const auto& r : regimes) {
        if (!r.pattern.defined() || r.pattern.dim() != 2 ||
            r.pattern.size(0) != fine_height || r.pattern.size(1) != fine_width) {
            throw std::invalid_argument("regime pattern dims must match the fine grid");
        }
        if (r.pattern.lt(0).any().item<bool>()) {
            throw std::invalid_argument("regime pattern entries must be non-negative");
        }
        auto sums = sum_pool(r.pattern.to(torch::kFloat64), upscale_n);
        if ((sums - 1.0).abs().max().item<double>() > 1e-9) {
            throw std::invalid_argument("each N×N block of a regime pattern must sum to 1");
        }
        for (int wid : r.weather_ids) {
            if (wid < 0 || wid >= weather_vocab) {
                throw std::invalid_argument("regime weather_id outside vocabulary");
            }
        }
    }
}

torch::Tensor random_block_pattern(int64_t height, int64_t width, int64_t n,
                                   uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::exponential_distribution<double> exp1(1.0);
    auto pattern = torch::empty({height, width}, torch::kFloat64);
    auto acc = pattern.accessor<double, 2>();
    for (int64_t bi = 0; bi < height / n; ++bi) {
        for (int64_t bj = 0; bj < width / n; ++bj) {
            double total = 0.0;
            for (int64_t di = 0; di < n; ++di)
                for (int64_t dj = 0; dj < n; ++dj) {
                    double v = exp1(rng);
                    acc[bi * n + di][bj * n + dj] = v;
                    total += v;
                }
            for (int64_t di = 0; di < n; ++di)
                for (int64_t dj = 0; dj < n; ++dj) acc[bi * n + di][bj * n + dj] /= total;
        }
    }
    return pattern;
}

torch::Tensor uniform_block_pattern(int64_t height, int64_t width, int64_t n) {
    return torch::full({height, width}, 1.0 / static_cast<double>(n * n),
                       torch::kFloat64);
}

namespace {

torch::Tensor pattern_from_json(const json& j, const SyntheticSpec& spec) {
    if (j.is_string()) {
        const auto kind = j.get<std::string>();
        if (kind == "uniform") {
            return uniform_block_pattern(spec.fine_height, spec.fine_width,
                                         spec.upscale_n);
        }
        throw std::invalid_argument("unknown pattern kind '" + kind + "'");
    }
    if (j.is_object()) {
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "uniform") {
            return uniform_block_pattern(spec.fine_height, spec.fine_width,
                                         spec.upscale_n);
        }
        if (kind == "random") {
            return random_block_pattern(spec.fine_height, spec.fine_width,
                                        spec.upscale_n,
                                        j.value("pattern_seed", uint64_t{0}));
        }
        throw std::invalid_argument("unknown pattern kind '" + kind + "'");
    }
    // explicit row-major 2-D array
    auto rows = j.get<std::vector<std::vector<double>>>();
    auto t = torch::empty({static_cast<int64_t>(rows.size()),
                           static_cast<int64_t>(rows.at(0).size())},
                          torch::kFloat64);
    for (size_t i = 0; i < rows.size(); ++i) {
        for (size_t k = 0; k < rows[i].size(); ++k) t[i][k] = rows[i][k];
    }
    return t;
}

}  // namespace

SyntheticSpec SyntheticSpec::from_json(const json& j) {
    SyntheticSpec spec;
    spec.fine_height = j.at("fine_height").get<int64_t>();
    spec.fine_width = j.at("fine_width").get<int64_t>();
    spec.upscale_n = j.at("upscale_n").get<int64_t>();
    spec.num_samples = j.at("num_samples").get<int64_t>();
    if (j.contains("volume_range")) {
        spec.volume_min = j["volume_range"].at("min").get<double>();
        spec.volume_max = j["volume_range"].at("max").get<double>();
    }
    spec.noise_level = j.value("noise_level", 0.0);
    spec.seed = j.value("seed", uint64_t{0});
    spec.interval_minutes = j.value("interval_minutes", int64_t{30});
    spec.weather_vocab = j.value("weather_vocab", 8);
    spec.geo_poi_channels = j.value("geo_poi_channels", int64_t{0});
    spec.start_iso8601 = j.value("start_iso8601", std::string("2013-07-01T00:00:00"));
    for (const auto& rj : j.at("regimes")) {
        Regime r;
        r.hour_min = rj.value("hour_min", 0);
        r.hour_max = rj.value("hour_max", 23);
        if (rj.contains("weather_ids")) {
            r.weather_ids = rj["weather_ids"].get<std::vector<int>>();
        }
        r.pattern = pattern_from_json(rj.at("pattern"), spec);
        spec.regimes.push_back(std::move(r));
    }
    spec.validate();
    return spec;
}

json SyntheticSpec::to_json() const {
    json j;
    j["fine_height"] = fine_height;
    j["fine_width"] = fine_width;
    j["upscale_n"] = upscale_n;
    j["num_samples"] = num_samples;
    j["volume_range"] = {{"min", volume_min}, {"max", volume_max}};
    j["noise_level"] = noise_level;
    j["seed"] = seed;
    j["interval_minutes"] = interval_minutes;
    j["weather_vocab"] = weather_vocab;
    j["geo_poi_channels"] = geo_poi_channels;
    j["start_iso8601"] = start_iso8601;
    j["regimes"] = json::array();
    for (const auto& r : regimes) {
        json rj;
        rj["hour_min"] = r.hour_min;
        rj["hour_max"] = r.hour_max;
        rj["weather_ids"] = r.weather_ids;
        std::vector<std::vector<double>> rows(r.pattern.size(0));
        auto acc = r.pattern.accessor<double, 2>();
        for (int64_t i = 0; i < r.pattern.size(0); ++i) {
            rows[i].resize(r.pattern.size(1));
            for (int64_t k = 0; k < r.pattern.size(1); ++k) rows[i][k] = acc[i][k];
        }
        rj["pattern"] = rows;
        j["regimes"].push_back(std::move(rj));
    }
    return j;
}

namespace {

int pick_regime(const std::vector<Regime>& regimes, int hour, int weather) {
    for (size_t k = 0; k < regimes.size(); ++k) {
        if (regimes[k].matches(hour, weather)) return static_cast<int>(k);
    }
    return 0;  // fallback
}

torch::Tensor smoothed_random_field(std::mt19937_64& rng, int64_t channels,
                                    int64_t h, int64_t w) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    auto field = torch::empty({channels, h, w}, torch::kFloat64);
    auto acc = field.accessor<double, 3>();
    for (int64_t c = 0; c < channels; ++c)
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j) acc[c][i][j] = uni(rng);
    // two passes of 3×3 box blur, replicate padding
    namespace F = torch::nn::functional;
    auto x = field.unsqueeze(1);
    for (int pass = 0; pass < 2; ++pass) {
        x = F::pad(x, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
        x = F::avg_pool2d(x, F::AvgPool2dFuncOptions(3).stride(1));
    }
    return x.squeeze(1).to(torch::kFloat32);
}

}  // namespace

FlowDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::uniform_int_distribution<int> weather_dist(0, spec.weather_vocab - 1);
    std::uniform_real_distribution<double> volume_dist(spec.volume_min,
                                                       spec.volume_max);
    std::uniform_real_distribution<double> temp_dist(-5.0, 35.0);
    std::uniform_real_distribution<double> wind_dist(0.0, 20.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const int64_t n = spec.upscale_n;
    const int64_t ch = spec.fine_height / n;
    const int64_t cw = spec.fine_width / n;
    const int64_t start = parse_iso8601(spec.start_iso8601);

    FlowDataset ds;
    ds.interval_minutes = spec.interval_minutes;
    ds.weather_vocab = spec.weather_vocab;
    ds.temperature_range = {-5.0, 35.0};
    ds.wind_range = {0.0, 20.0};
    ds.maps.reserve(spec.num_samples);

    const double sigma = spec.noise_level;
    for (int64_t t = 0; t < spec.num_samples; ++t) {
        const int64_t ts = start + t * spec.interval_minutes * 60;
        ExternalRecord rec;
        rec.day_of_week = day_of_week(ts);
        rec.hour_of_day = hour_of_day(ts);
        rec.weather_id = weather_dist(rng);
        rec.temperature_c = temp_dist(rng);
        rec.wind_speed_mph = wind_dist(rng);
        rec.is_holiday = rec.day_of_week >= 5;

        const auto& pattern =
            spec.regimes[pick_regime(spec.regimes, rec.hour_of_day, rec.weather_id)]
                .pattern;

        auto volumes = torch::empty({ch, cw}, torch::kFloat64);
        auto vacc = volumes.accessor<double, 2>();
        for (int64_t i = 0; i < ch; ++i)
            for (int64_t j = 0; j < cw; ++j) vacc[i][j] = volume_dist(rng);

        auto fine = nn_upsample(volumes, n) * pattern;
        if (sigma > 0) {
            auto noise = torch::empty_like(fine);
            auto nacc = noise.accessor<double, 2>();
            const double mu = -0.5 * sigma * sigma;  // mean-1 log-normal
            for (int64_t i = 0; i < spec.fine_height; ++i)
                for (int64_t j = 0; j < spec.fine_width; ++j)
                    nacc[i][j] = std::exp(mu + sigma * gauss(rng));
            fine = fine * noise;
        }

        ds.maps.emplace_back(fine.to(torch::kFloat32));
        ds.timestamps.push_back(ts);
        ds.externals.push_back(rec);
    }

    if (spec.geo_poi_channels > 0) {
        GeoFeatureStack geo;
        geo.poi_density = smoothed_random_field(rng, spec.geo_poi_channels,
                                                spec.fine_height, spec.fine_width);
        geo.road_density =
            smoothed_random_field(rng, 3, spec.fine_height, spec.fine_width);
        ds.geo = std::move(geo);
    }

    ds.validate();
    return ds;
}

double ha_rmse_lower_bound(const SyntheticSpec& spec) {
    spec.validate();
    const size_t k = spec.regimes.size();
    const int64_t start = parse_iso8601(spec.start_iso8601);

    // Regime probabilities under the generator's model: hours deterministic
    // from the cadence, weather uniform over the vocabulary, first match wins
    // (with fallback to regime 0).
    std::vector<double> pi(k, 0.0);
    for (int64_t t = 0; t < spec.num_samples; ++t) {
        const int hour = hour_of_day(start + t * spec.interval_minutes * 60);
        for (int w = 0; w < spec.weather_vocab; ++w) {
            pi[pick_regime(spec.regimes, hour, w)] += 1.0;
        }
    }
    const double total = static_cast<double>(spec.num_samples) * spec.weather_vocab;
    for (auto& p : pi) p /= total;

    auto mean_pattern = torch::zeros_like(spec.regimes[0].pattern);
    for (size_t i = 0; i < k; ++i) mean_pattern += pi[i] * spec.regimes[i].pattern;
    auto var = torch::zeros_like(mean_pattern);
    for (size_t i = 0; i < k; ++i) {
        var += pi[i] * (spec.regimes[i].pattern - mean_pattern).pow(2);
    }

    const double a = spec.volume_min, b = spec.volume_max;
    const double second_moment = (a * a + a * b + b * b) / 3.0;
    return std::sqrt(second_moment * var.mean().item<double>());
}

}  // namespace ufi
