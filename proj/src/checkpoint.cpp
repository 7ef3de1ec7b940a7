#include "ufi/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace ufi {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'U', 'F', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");

    json full = header;
    full["model_kind"] = model_kind;
    const std::string head = full.dump();
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod(out, static_cast<uint64_t>(head.size()));
    out.write(head.data(), static_cast<std::streamsize>(head.size()));

    write_pod(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, tensor] : tensors) {
        auto t = tensor.to(torch::kFloat32).contiguous();
        write_pod(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(out, static_cast<uint8_t>(t.dim()));
        for (int64_t d = 0; d < t.dim(); ++d) {
            write_pod(out, static_cast<uint64_t>(t.size(d)));
        }
        const uint64_t bytes = static_cast<uint64_t>(t.numel()) * sizeof(float);
        write_pod(out, bytes);
        out.write(reinterpret_cast<const char*>(t.data_ptr<float>()),
                  static_cast<std::streamsize>(bytes));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed");
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("checkpoint: bad magic");
    }
    const auto version = read_pod<uint32_t>(in);
    if (version != kVersion) {
        throw std::runtime_error("checkpoint: unsupported version " +
                                 std::to_string(version));
    }
    const auto head_len = read_pod<uint64_t>(in);
    std::string head(head_len, '\0');
    in.read(head.data(), static_cast<std::streamsize>(head_len));
    if (!in) throw std::runtime_error("checkpoint: truncated header");

    Checkpoint ckpt;
    ckpt.header = json::parse(head);
    ckpt.model_kind = ckpt.header.at("model_kind").get<std::string>();

    const auto count = read_pod<uint32_t>(in);
    for (uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto ndim = read_pod<uint8_t>(in);
        std::vector<int64_t> shape(ndim);
        int64_t numel = 1;
        for (auto& d : shape) {
            d = static_cast<int64_t>(read_pod<uint64_t>(in));
            numel *= d;
        }
        const auto bytes = read_pod<uint64_t>(in);
        if (bytes != static_cast<uint64_t>(numel) * sizeof(float)) {
            throw std::runtime_error("checkpoint: payload size mismatch for " + name);
        }
        auto t = torch::empty(shape, torch::kFloat32);
        in.read(reinterpret_cast<char*>(t.data_ptr<float>()),
                static_cast<std::streamsize>(bytes));
        if (!in) throw std::runtime_error("checkpoint: truncated payload for " + name);
        ckpt.tensors.emplace(std::move(name), std::move(t));
    }
    return ckpt;
}

std::map<std::string, torch::Tensor> snapshot_state(const torch::nn::Module& m) {
    std::map<std::string, torch::Tensor> state;
    for (const auto& p : m.named_parameters()) {
        state[p.key()] = p.value().detach().clone();
    }
    for (const auto& b : m.named_buffers()) {
        state[b.key()] = b.value().detach().clone();
    }
    return state;
}

void restore_state(torch::nn::Module& m,
                   const std::map<std::string, torch::Tensor>& state,
                   const std::string& prefix) {
    torch::NoGradGuard no_grad;
    for (auto& p : m.named_parameters()) {
        auto it = state.find(prefix + p.key());
        if (it == state.end()) {
            throw std::runtime_error("checkpoint missing parameter " + prefix + p.key());
        }
        p.value().copy_(it->second.to(p.value().dtype()));
    }
    for (auto& b : m.named_buffers()) {
        auto it = state.find(prefix + b.key());
        if (it == state.end()) {
            throw std::runtime_error("checkpoint missing buffer " + prefix + b.key());
        }
        b.value().copy_(it->second.to(b.value().dtype()));
    }
}

Checkpoint make_urbanfm_checkpoint(const UrbanFM& model) {
    Checkpoint ckpt;
    ckpt.model_kind = model->cfg.variant == FMVariant::Distributional ? "urbanfm"
                                                                      : "urbanfm-sl";
    ckpt.header["fm_config"] = model->cfg.to_json();
    ckpt.header["coarse_height"] = model->coarse_height;
    ckpt.header["coarse_width"] = model->coarse_width;
    if (model->cfg.use_external) {
        ckpt.header["fusion_config"] = model->fusion->cfg.to_json();
    }
    ckpt.tensors = snapshot_state(*model);
    return ckpt;
}

Checkpoint make_urbanpy_checkpoint(const UrbanPy& model,
                                   const GeoEncoder& geo_encoder) {
    Checkpoint ckpt;
    ckpt.model_kind = "urbanpy";
    ckpt.header["pyramid_config"] = model->cfg.to_json();
    ckpt.header["coarse_height"] = model->coarse_height;
    ckpt.header["coarse_width"] = model->coarse_width;
    if (model->cfg.use_external) {
        ckpt.header["fusion_config"] = model->fusion->cfg.to_json();
    }
    ckpt.tensors = snapshot_state(*model);
    if (geo_encoder) {
        ckpt.header["geo_encoder"] = geo_encoder->cfg.to_json();
        for (auto& [name, tensor] : snapshot_state(*geo_encoder)) {
            ckpt.tensors["geo_encoder." + name] = tensor;
        }
    }
    return ckpt;
}

UrbanFM urbanfm_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.model_kind != "urbanfm" && ckpt.model_kind != "urbanfm-sl") {
        throw std::runtime_error("checkpoint holds a '" + ckpt.model_kind +
                                 "' model, not urbanfm");
    }
    auto cfg = FMConfig::from_json(ckpt.header.at("fm_config"));
    FusionConfig fusion_cfg;
    if (cfg.use_external) {
        fusion_cfg = FusionConfig::from_json(ckpt.header.at("fusion_config"));
    }
    UrbanFM model(cfg, ckpt.header.at("coarse_height").get<int64_t>(),
                  ckpt.header.at("coarse_width").get<int64_t>(), fusion_cfg);
    restore_state(*model, ckpt.tensors);
    return model;
}

UrbanPy urbanpy_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.model_kind != "urbanpy") {
        throw std::runtime_error("checkpoint holds a '" + ckpt.model_kind +
                                 "' model, not urbanpy");
    }
    auto cfg = PyramidConfig::from_json(ckpt.header.at("pyramid_config"));
    FusionConfig fusion_cfg;
    if (cfg.use_external) {
        fusion_cfg = FusionConfig::from_json(ckpt.header.at("fusion_config"));
    }
    UrbanPy model(cfg, ckpt.header.at("coarse_height").get<int64_t>(),
                  ckpt.header.at("coarse_width").get<int64_t>(), fusion_cfg);
    restore_state(*model, ckpt.tensors);
    return model;
}

GeoEncoder geo_encoder_from_checkpoint(const Checkpoint& ckpt) {
    if (!ckpt.header.contains("geo_encoder")) return nullptr;
    auto cfg = GeoEncoderConfig::from_json(ckpt.header["geo_encoder"]);
    GeoEncoder encoder(cfg);
    restore_state(*encoder, ckpt.tensors, "geo_encoder.");
    return encoder;
}

}  // namespace ufi
