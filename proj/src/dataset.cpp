#include "ufi/dataset.hpp"

#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ufi/time_util.hpp"

namespace ufi {

namespace fs = std::filesystem;
using nlohmann::json;

void GeoFeatureStack::validate() const {
    if (!poi_density.defined() || poi_density.dim() != 3 ||
        !road_density.defined() || road_density.dim() != 3 ||
        road_density.size(0) != 3) {
        throw std::invalid_argument(
            "GeoFeatureStack requires (C_poi,H,W) poi and (3,H,W) road tensors");
    }
    if (poi_density.size(1) != road_density.size(1) ||
        poi_density.size(2) != road_density.size(2)) {
        throw std::invalid_argument("geo poi/road spatial dims disagree");
    }
    if (poi_density.lt(0).any().item<bool>() ||
        road_density.lt(0).any().item<bool>()) {
        throw std::invalid_argument("geo densities must be non-negative");
    }
}

torch::Tensor GeoFeatureStack::raw() const {
    return torch::cat({poi_density, road_density}, 0);
}

void FlowDataset::validate() const {
    if (maps.size() != timestamps.size()) {
        throw std::invalid_argument("|maps| must equal |timestamps|");
    }
    if (!externals.empty() && externals.size() != maps.size()) {
        throw std::invalid_argument(
            "externals present but not aligned: " + std::to_string(externals.size()) +
            " rows for " + std::to_string(maps.size()) + " maps");
    }
    for (const auto& m : maps) {
        if (m.height() != height() || m.width() != width()) {
            throw std::invalid_argument("all maps must share identical dims");
        }
    }
    if (geo) {
        geo->validate();
        if (geo->poi_density.size(1) != height() || geo->poi_density.size(2) != width()) {
            throw std::invalid_argument("geo spatial dims must match the fine grid");
        }
    }
    for (const auto& e : externals) {
        if (e.day_of_week < 0 || e.day_of_week > 6 || e.hour_of_day < 0 ||
            e.hour_of_day > 23) {
            throw std::invalid_argument("external record time fields out of range");
        }
        if (e.weather_id < 0 || e.weather_id >= weather_vocab) {
            throw std::invalid_argument("weather_id " + std::to_string(e.weather_id) +
                                        " outside vocabulary of size " +
                                        std::to_string(weather_vocab));
        }
        if (temperature_range && (e.temperature_c < temperature_range->first ||
                                  e.temperature_c > temperature_range->second)) {
            std::cerr << "warning: temperature " << e.temperature_c
                      << " C outside declared range [" << temperature_range->first
                      << ", " << temperature_range->second << "]\n";
        }
        if (wind_range && (e.wind_speed_mph < wind_range->first ||
                           e.wind_speed_mph > wind_range->second)) {
            std::cerr << "warning: wind speed " << e.wind_speed_mph
                      << " mph outside declared range [" << wind_range->first
                      << ", " << wind_range->second << "]\n";
        }
    }
}

torch::Tensor FlowDataset::stacked() const {
    std::vector<torch::Tensor> vs;
    vs.reserve(maps.size());
    for (const auto& m : maps) vs.push_back(m.values().to(torch::kFloat32));
    return torch::stack(vs).unsqueeze(1);
}

DatasetSplit split(const FlowDataset& ds, double train_ratio, double val_ratio,
                   double test_ratio) {
    if (train_ratio <= 0 || val_ratio <= 0 || test_ratio <= 0) {
        throw std::invalid_argument("split ratios must be positive");
    }
    const int64_t total = ds.size();
    if (total < 3) {
        throw std::invalid_argument("need at least 3 samples to split, got " +
                                    std::to_string(total));
    }
    const double sum = train_ratio + val_ratio + test_ratio;
    const int64_t n_val = static_cast<int64_t>(total * val_ratio / sum);
    const int64_t n_test = static_cast<int64_t>(total * test_ratio / sum);
    DatasetSplit s;
    s.train_end = total - n_val - n_test;  // remainder goes to train
    s.val_end = s.train_end + n_val;
    s.test_end = total;
    if (s.train_size() < 1 || n_val < 1 || n_test < 1) {
        throw std::invalid_argument("too few samples for the requested ratios");
    }
    return s;
}

namespace {

constexpr const char* kExternalColumns[] = {
    "timestamp_iso8601", "day_of_week",    "hour_of_day", "weather_id",
    "temperature_c",     "wind_speed_mph", "is_holiday",  "ticket_price"};

void write_f32(std::ostream& out, const torch::Tensor& t) {
    auto c = t.to(torch::kFloat32).contiguous();
    out.write(reinterpret_cast<const char*>(c.data_ptr<float>()),
              c.numel() * sizeof(float));
}

torch::Tensor read_f32(std::istream& in, std::vector<int64_t> shape,
                       const std::string& name) {
    int64_t numel = 1;
    for (auto d : shape) numel *= d;
    auto t = torch::empty(shape, torch::kFloat32);
    in.read(reinterpret_cast<char*>(t.data_ptr<float>()), numel * sizeof(float));
    if (in.gcount() != numel * static_cast<int64_t>(sizeof(float))) {
        throw std::runtime_error(name + ": size mismatch, expected " +
                                 std::to_string(numel * sizeof(float)) +
                                 " bytes of payload");
    }
    return t;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
}

}  // namespace

void save_dataset(const FlowDataset& ds, const fs::path& dir) {
    ds.validate();
    fs::create_directories(dir);

    json manifest;
    manifest["shape"] = {ds.size(), ds.height(), ds.width()};
    manifest["dtype"] = "f32le";
    manifest["order"] = "row-major";
    manifest["interval_minutes"] = ds.interval_minutes;
    manifest["weather_vocab"] = ds.weather_vocab;
    if (!ds.timestamps.empty()) {
        manifest["start_iso8601"] = format_iso8601(ds.timestamps.front());
    }
    json columns = json::array();
    if (ds.has_externals()) {
        for (const auto* c : kExternalColumns) columns.push_back(c);
    }
    manifest["external_columns"] = columns;
    if (ds.geo) {
        auto raw = ds.geo->raw();
        manifest["geo_shape"] = {raw.size(0), raw.size(1), raw.size(2)};
        manifest["geo_poi_channels"] = ds.geo->poi_density.size(0);
    }
    if (ds.temperature_range) {
        manifest["temperature_range"] = {ds.temperature_range->first,
                                         ds.temperature_range->second};
    }
    if (ds.wind_range) {
        manifest["wind_range"] = {ds.wind_range->first, ds.wind_range->second};
    }

    std::ofstream mf(dir / "manifest.json");
    mf << manifest.dump(2) << "\n";

    std::ofstream flows(dir / "flows.bin", std::ios::binary);
    for (const auto& m : ds.maps) write_f32(flows, m.values());

    if (ds.has_externals()) {
        std::ofstream csv(dir / "externals.csv");
        for (size_t i = 0; i < std::size(kExternalColumns); ++i) {
            csv << (i ? "," : "") << kExternalColumns[i];
        }
        csv << "\n";
        for (int64_t i = 0; i < ds.size(); ++i) {
            const auto& e = ds.externals[i];
            csv << format_iso8601(ds.timestamps[i]) << "," << e.day_of_week << ","
                << e.hour_of_day << "," << e.weather_id << "," << e.temperature_c
                << "," << e.wind_speed_mph << "," << (e.is_holiday ? 1 : 0) << ",";
            if (e.ticket_price) csv << *e.ticket_price;
            csv << "\n";
        }
    }

    if (ds.geo) {
        std::ofstream geo(dir / "geo.bin", std::ios::binary);
        write_f32(geo, ds.geo->raw());
    }
}

FlowDataset load_dataset(const fs::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw std::runtime_error("cannot open " + (dir / "manifest.json").string());
    json manifest = json::parse(mf);

    if (manifest.at("dtype").get<std::string>() != "f32le") {
        throw std::runtime_error("unknown dtype tag '" +
                                 manifest.at("dtype").get<std::string>() + "'");
    }
    if (manifest.at("order").get<std::string>() != "row-major") {
        throw std::runtime_error("unknown order tag");
    }
    auto shape = manifest.at("shape").get<std::vector<int64_t>>();
    if (shape.size() != 3) throw std::runtime_error("manifest shape must be [T,H,W]");
    const int64_t t = shape[0], h = shape[1], w = shape[2];

    FlowDataset ds;
    ds.interval_minutes = manifest.at("interval_minutes").get<int64_t>();
    ds.weather_vocab = manifest.value("weather_vocab", 16);
    if (manifest.contains("temperature_range")) {
        auto r = manifest["temperature_range"].get<std::vector<double>>();
        ds.temperature_range = {r.at(0), r.at(1)};
    }
    if (manifest.contains("wind_range")) {
        auto r = manifest["wind_range"].get<std::vector<double>>();
        ds.wind_range = {r.at(0), r.at(1)};
    }

    {
        std::ifstream flows(dir / "flows.bin", std::ios::binary);
        if (!flows) throw std::runtime_error("cannot open flows.bin");
        auto all = read_f32(flows, {t, h, w}, "flows.bin");
        char extra;
        if (flows.read(&extra, 1)) {
            throw std::runtime_error("flows.bin: size mismatch, trailing bytes");
        }
        ds.maps.reserve(t);
        for (int64_t i = 0; i < t; ++i) ds.maps.emplace_back(all[i].clone());
    }

    const int64_t start = manifest.contains("start_iso8601")
                              ? parse_iso8601(manifest["start_iso8601"])
                              : 0;
    auto columns = manifest.at("external_columns").get<std::vector<std::string>>();
    if (!columns.empty()) {
        std::ifstream csv(dir / "externals.csv");
        if (!csv) throw std::runtime_error("manifest declares externals but externals.csv missing");
        std::string line;
        std::getline(csv, line);  // header
        while (std::getline(csv, line)) {
            if (line.empty()) continue;
            auto cells = split_csv_line(line);
            if (cells.size() != std::size(kExternalColumns)) {
                throw std::runtime_error("externals.csv: expected " +
                                         std::to_string(std::size(kExternalColumns)) +
                                         " cells, got " + std::to_string(cells.size()));
            }
            ds.timestamps.push_back(parse_iso8601(cells[0]));
            ExternalRecord e;
            e.day_of_week = std::stoi(cells[1]);
            e.hour_of_day = std::stoi(cells[2]);
            e.weather_id = std::stoi(cells[3]);
            e.temperature_c = std::stod(cells[4]);
            e.wind_speed_mph = std::stod(cells[5]);
            e.is_holiday = std::stoi(cells[6]) != 0;
            if (!cells[7].empty()) {
                e.ticket_price = std::stod(cells[7]);
                ds.has_ticket_price = true;
            }
            ds.externals.push_back(e);
        }
        if (static_cast<int64_t>(ds.externals.size()) != t) {
            throw std::runtime_error(
                "externals.csv row count " + std::to_string(ds.externals.size()) +
                " does not align with " + std::to_string(t) + " dataset samples");
        }
    } else {
        for (int64_t i = 0; i < t; ++i) {
            ds.timestamps.push_back(start + i * ds.interval_minutes * 60);
        }
    }

    if (manifest.contains("geo_shape")) {
        auto gs = manifest["geo_shape"].get<std::vector<int64_t>>();
        if (gs.size() != 3) throw std::runtime_error("geo_shape must be [C,H,W]");
        std::ifstream geo(dir / "geo.bin", std::ios::binary);
        if (!geo) throw std::runtime_error("manifest declares geo but geo.bin missing");
        auto raw = read_f32(geo, gs, "geo.bin");
        const int64_t poi_ch = manifest.value("geo_poi_channels", gs[0] - 3);
        if (poi_ch < 0 || poi_ch + 3 != gs[0]) {
            throw std::runtime_error("geo_poi_channels inconsistent with geo_shape");
        }
        GeoFeatureStack stack;
        stack.poi_density = raw.narrow(0, 0, poi_ch).clone();
        stack.road_density = raw.narrow(0, poi_ch, 3).clone();
        ds.geo = std::move(stack);
    }

    ds.validate();
    return ds;
}

}  // namespace ufi
