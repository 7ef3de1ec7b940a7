#pragma once

#include <filesystem>

#include "ufi/flow.hpp"

namespace ufi {

/// Single-map binary container: magic "UFMP", u32 height, u32 width,
/// row-major f32le payload.
void save_flow_map(const FlowMap& map, const std::filesystem::path& path);
FlowMap load_flow_map(const std::filesystem::path& path);

/// Absolute-error heatmap |pred − truth| rendered through a heat colormap,
/// normalized by the max error (a max of zero renders all-black).
void write_error_heatmap(const FlowMap& pred, const FlowMap& truth,
                         const std::filesystem::path& png_path);

}  // namespace ufi
