#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>
#include <torch/torch.h>

#include "ufi/urbanfm.hpp"
#include "ufi/urbanpy.hpp"

namespace ufi {

/// Self-describing model container: JSON header (model kind, config echo,
/// fusion/geo settings) followed by named float32 parameter payloads.
/// Loadable without the original config file.
struct Checkpoint {
    std::string model_kind;  // "urbanfm" | "urbanfm-sl" | "urbanpy"
    nlohmann::json header;   // config echo and dims
    std::map<std::string, torch::Tensor> tensors;

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
};

/// Snapshot of every named parameter and buffer (detached clones).
std::map<std::string, torch::Tensor> snapshot_state(const torch::nn::Module& m);
void restore_state(torch::nn::Module& m,
                   const std::map<std::string, torch::Tensor>& state,
                   const std::string& prefix = "");

Checkpoint make_urbanfm_checkpoint(const UrbanFM& model);
Checkpoint make_urbanpy_checkpoint(const UrbanPy& model,
                                   const GeoEncoder& geo_encoder = nullptr);

UrbanFM urbanfm_from_checkpoint(const Checkpoint& ckpt);
UrbanPy urbanpy_from_checkpoint(const Checkpoint& ckpt);
/// Geo encoder stored alongside a pyramid model, or nullptr when absent.
GeoEncoder geo_encoder_from_checkpoint(const Checkpoint& ckpt);

}  // namespace ufi
