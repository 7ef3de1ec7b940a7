#include "ufi/viz.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <png.h>

namespace ufi {

namespace {

constexpr char kMagic[4] = {'U', 'F', 'M', 'P'};

// black → purple → red → orange → white
void heat_color(double v, uint8_t rgb[3]) {
    v = std::min(1.0, std::max(0.0, v));
    const double stops[5][3] = {{0, 0, 0},
                                {80, 0, 120},
                                {220, 30, 30},
                                {255, 165, 0},
                                {255, 255, 255}};
    const double pos = v * 4.0;
    const int lo = std::min(3, static_cast<int>(pos));
    const double t = pos - lo;
    for (int c = 0; c < 3; ++c) {
        rgb[c] = static_cast<uint8_t>(stops[lo][c] + t * (stops[lo + 1][c] - stops[lo][c]));
    }
}

}  // namespace

void save_flow_map(const FlowMap& map, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(kMagic, 4);
    const uint32_t h = static_cast<uint32_t>(map.height());
    const uint32_t w = static_cast<uint32_t>(map.width());
    out.write(reinterpret_cast<const char*>(&h), 4);
    out.write(reinterpret_cast<const char*>(&w), 4);
    auto vals = map.values().to(torch::kFloat32).contiguous();
    out.write(reinterpret_cast<const char*>(vals.data_ptr<float>()),
              vals.numel() * sizeof(float));
}

FlowMap load_flow_map(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error(path.string() + ": not a flow-map file");
    }
    uint32_t h = 0, w = 0;
    in.read(reinterpret_cast<char*>(&h), 4);
    in.read(reinterpret_cast<char*>(&w), 4);
    auto t = torch::empty({static_cast<int64_t>(h), static_cast<int64_t>(w)},
                          torch::kFloat32);
    in.read(reinterpret_cast<char*>(t.data_ptr<float>()),
            static_cast<std::streamsize>(h) * w * sizeof(float));
    if (!in) throw std::runtime_error(path.string() + ": truncated payload");
    return FlowMap(t);
}

void write_error_heatmap(const FlowMap& pred, const FlowMap& truth,
                         const std::filesystem::path& png_path) {
    if (pred.height() != truth.height() || pred.width() != truth.width()) {
        throw std::invalid_argument("heatmap inputs must share dimensions");
    }
    auto err = (pred.values().to(torch::kFloat64) - truth.values().to(torch::kFloat64))
                   .abs();
    const double max_err = err.max().item<double>();
    const int64_t h = pred.height(), w = pred.width();

    std::vector<uint8_t> pixels(static_cast<size_t>(h) * w * 3);
    auto acc = err.accessor<double, 2>();
    for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j < w; ++j) {
            heat_color(max_err > 0 ? acc[i][j] / max_err : 0.0,
                       &pixels[(static_cast<size_t>(i) * w + j) * 3]);
        }
    }

    FILE* fp = std::fopen(png_path.string().c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot open " + png_path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                              nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(fp);
        throw std::runtime_error("libpng failure writing " + png_path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int64_t i = 0; i < h; ++i) {
        png_write_row(png, pixels.data() + static_cast<size_t>(i) * w * 3);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

}  // namespace ufi
