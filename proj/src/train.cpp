#include "ufi/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "ufi/baselines.hpp"
#include "ufi/ops.hpp"

namespace ufi {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

void TrainConfig::validate() const {
    if (lr <= 0) throw std::invalid_argument("lr must be positive");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (early_stop_patience < 1) throw std::invalid_argument("patience must be >= 1");
    if (lr_halve_every < 1) throw std::invalid_argument("lr_halve_every must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
}

json TrainConfig::to_json() const {
    return json{{"lr", lr},
                {"batch_size", batch_size},
                {"lr_halve_every", lr_halve_every},
                {"early_stop_patience", early_stop_patience},
                {"max_epochs", max_epochs},
                {"seed", seed},
                {"use_external", use_external},
                {"use_structural_loss_variant", use_structural_loss_variant},
                {"structural_loss_weight", structural_loss_weight},
                {"local_structure", local_structure},
                {"distributional_loss", distributional_loss},
                {"grad_clip", grad_clip}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig cfg;
    cfg.lr = j.value("lr", cfg.lr);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.lr_halve_every = j.value("lr_halve_every", cfg.lr_halve_every);
    cfg.early_stop_patience = j.value("early_stop_patience", cfg.early_stop_patience);
    cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.use_external = j.value("use_external", cfg.use_external);
    cfg.use_structural_loss_variant =
        j.value("use_structural_loss_variant", cfg.use_structural_loss_variant);
    cfg.structural_loss_weight =
        j.value("structural_loss_weight", cfg.structural_loss_weight);
    cfg.local_structure = j.value("local_structure", cfg.local_structure);
    cfg.distributional_loss = j.value("distributional_loss", cfg.distributional_loss);
    cfg.grad_clip = j.value("grad_clip", cfg.grad_clip);
    cfg.validate();
    return cfg;
}

TrainConfig TrainConfig::defaults_for(const std::string& model_kind) {
    TrainConfig cfg;
    if (model_kind == "urbanpy") {
        cfg.lr = 2e-4;
        cfg.batch_size = 32;
    }
    return cfg;
}

json TrainLog::to_json() const {
    json rows = json::array();
    for (const auto& e : epochs) {
        rows.push_back(json{{"epoch", e.epoch},
                            {"train_loss", e.train_loss},
                            {"val_rmse", e.val_metric},
                            {"lr", e.lr},
                            {"wall_seconds", e.wall_seconds}});
    }
    return json{{"epochs", rows},
                {"best_epoch", best_epoch},
                {"best_val_rmse", best_val_metric},
                {"early_stopped", early_stopped}};
}

TrainLog run_training_loop(const TrainConfig& cfg, const TrainHooks& hooks) {
    cfg.validate();
    TrainLog log;
    for (int64_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const auto t0 = Clock::now();
        const double lr =
            cfg.lr * std::pow(0.5, static_cast<double>(epoch / cfg.lr_halve_every));
        hooks.set_lr(lr);

        const double train_loss = hooks.run_epoch(epoch);
        if (!std::isfinite(train_loss)) {
            throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                                  ": loss = " + std::to_string(train_loss));
        }
        const double val = hooks.validate();

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = train_loss;
        rec.val_metric = val;
        rec.lr = lr;
        rec.wall_seconds =
            std::chrono::duration<double>(Clock::now() - t0).count();
        log.epochs.push_back(rec);

        if (log.best_epoch < 0 || val < log.best_val_metric) {
            log.best_epoch = epoch;
            log.best_val_metric = val;
            hooks.snapshot_best();
        } else if (epoch - log.best_epoch >= cfg.early_stop_patience) {
            log.early_stopped = true;
            break;
        }
    }
    return log;
}

namespace {

struct PreparedData {
    torch::Tensor fine;    // (T,1,H,W) float32
    torch::Tensor coarse;  // (T,1,I,J)
    int64_t n = 1;
};

PreparedData prepare(const FlowDataset& ds, int64_t n) {
    ds.validate();
    if (ds.size() == 0) throw std::invalid_argument("empty dataset");
    if (ds.height() % n != 0 || ds.width() % n != 0) {
        throw std::invalid_argument("fine dims must be divisible by the upscale factor");
    }
    PreparedData d;
    d.fine = ds.stacked();
    d.coarse = sum_pool(d.fine, n);
    d.n = n;
    return d;
}

std::vector<int64_t> shuffled_indices(int64_t begin, int64_t end,
                                      std::mt19937_64& rng) {
    std::vector<int64_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

torch::Tensor gather_rows(const torch::Tensor& t, std::span<const int64_t> idx) {
    auto sel = torch::from_blob(const_cast<int64_t*>(idx.data()),
                                {static_cast<int64_t>(idx.size())}, torch::kInt64);
    return t.index_select(0, sel.clone());
}

std::vector<ExternalRecord> gather_records(const std::vector<ExternalRecord>& recs,
                                           std::span<const int64_t> idx) {
    std::vector<ExternalRecord> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(recs[static_cast<size_t>(i)]);
    return out;
}

void set_adam_lr(torch::optim::Adam& opt, double lr) {
    for (auto& group : opt.param_groups()) {
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    }
}

double clip_gradients(std::vector<torch::Tensor> params, double max_norm) {
    if (max_norm <= 0) return 0.0;
    return torch::nn::utils::clip_grad_norm_(params, max_norm);
}

}  // namespace

TrainResult train_urbanfm(const FlowDataset& ds, const DatasetSplit& split,
                          FMConfig model_cfg, TrainConfig cfg) {
    cfg.validate();
    model_cfg.use_external = cfg.use_external;
    if (cfg.use_structural_loss_variant) model_cfg.variant = FMVariant::StructuralLoss;
    if (model_cfg.use_external && !ds.has_externals()) {
        throw std::invalid_argument(
            "external fusion requested but the dataset has no externals");
    }

    auto data = prepare(ds, model_cfg.n_upscale);
    const int64_t coarse_h = ds.height() / model_cfg.n_upscale;
    const int64_t coarse_w = ds.width() / model_cfg.n_upscale;

    FusionConfig fusion_cfg;
    fusion_cfg.weather_vocab = ds.weather_vocab;
    fusion_cfg.has_ticket_price = ds.has_ticket_price;
    auto model = build_urbanfm(model_cfg, coarse_h, coarse_w, cfg.seed, fusion_cfg);
    if (model_cfg.use_external) {
        model->fusion->fit_normalization(
            std::span(ds.externals.data(), static_cast<size_t>(split.train_end)));
    }

    torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(cfg.lr));
    std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
    const double fine_elems =
        static_cast<double>(ds.height() * ds.width());
    const double coarse_elems = static_cast<double>(coarse_h * coarse_w);

    auto batch_external =
        [&](std::span<const int64_t> idx) -> std::optional<ExternalBatch> {
        if (!model_cfg.use_external) return std::nullopt;
        return model->fusion->make_batch(gather_records(ds.externals, idx));
    };

    auto run_batch = [&](std::span<const int64_t> idx) -> torch::Tensor {
        auto coarse_b = gather_rows(data.coarse, idx);
        auto fine_b = gather_rows(data.fine, idx);
        auto out = model->forward(coarse_b, batch_external(idx));
        const double scale = static_cast<double>(idx.size()) * fine_elems;
        auto loss = mse_loss_sum(out.fine_pred, fine_b) / scale;
        if (model_cfg.variant == FMVariant::StructuralLoss &&
            cfg.structural_loss_weight > 0) {
            auto ls = structural_loss(coarse_b, out.fine_pred, model_cfg.n_upscale);
            loss = loss + cfg.structural_loss_weight * ls /
                              (static_cast<double>(idx.size()) * coarse_elems);
        }
        return loss;
    };

    std::map<std::string, torch::Tensor> best_state;
    TrainHooks hooks;
    hooks.set_lr = [&](double lr) { set_adam_lr(opt, lr); };
    hooks.snapshot_best = [&] { best_state = snapshot_state(*model); };
    hooks.run_epoch = [&](int64_t) {
        model->train();
        auto order = shuffled_indices(0, split.train_end, shuffle_rng);
        double total = 0.0;
        int64_t seen = 0;
        for (int64_t start = 0; start < static_cast<int64_t>(order.size());
             start += cfg.batch_size) {
            const auto count = std::min<int64_t>(cfg.batch_size,
                                                 order.size() - start);
            std::span<const int64_t> idx(order.data() + start,
                                         static_cast<size_t>(count));
            opt.zero_grad();
            auto loss = run_batch(idx);
            loss.backward();
            clip_gradients(model->parameters(), cfg.grad_clip);
            opt.step();
            total += loss.item<double>() * static_cast<double>(count);
            seen += count;
        }
        return total / static_cast<double>(seen);
    };
    hooks.validate = [&] {
        torch::NoGradGuard no_grad;
        model->eval();
        MetricAccumulator acc;
        for (int64_t start = split.train_end; start < split.val_end;
             start += cfg.batch_size) {
            const auto count = std::min<int64_t>(cfg.batch_size, split.val_end - start);
            std::vector<int64_t> idx(count);
            std::iota(idx.begin(), idx.end(), start);
            auto out = model->forward(gather_rows(data.coarse, idx),
                                      batch_external(idx));
            acc.add(out.fine_pred, gather_rows(data.fine, idx));
        }
        return acc.rmse();
    };

    auto log = run_training_loop(cfg, hooks);
    if (!best_state.empty()) restore_state(*model, best_state);

    TrainResult result;
    result.checkpoint = make_urbanfm_checkpoint(model);
    result.checkpoint.header["train_config"] = cfg.to_json();
    result.log = std::move(log);
    return result;
}

TrainResult train_urbanpy(const FlowDataset& ds, const DatasetSplit& split,
                          PyramidConfig model_cfg, TrainConfig cfg) {
    cfg.validate();
    model_cfg.use_external = cfg.use_external;
    model_cfg.use_local_structure = cfg.local_structure;
    model_cfg.use_distributional_loss = cfg.distributional_loss;
    model_cfg.validate();
    if (model_cfg.use_external && !ds.has_externals()) {
        throw std::invalid_argument(
            "external fusion requested but the dataset has no externals");
    }
    if (model_cfg.use_local_structure && !ds.geo) {
        throw std::invalid_argument(
            "local structure requested but the dataset has no geographic features; "
            "disable use_local_structure");
    }

    const int64_t n = model_cfg.final_scale();
    auto data = prepare(ds, n);
    const int64_t coarse_h = ds.height() / n;
    const int64_t coarse_w = ds.width() / n;

    FusionConfig fusion_cfg;
    fusion_cfg.weather_vocab = ds.weather_vocab;
    fusion_cfg.has_ticket_price = ds.has_ticket_price;
    auto model = build_urbanpy(model_cfg, coarse_h, coarse_w, cfg.seed, fusion_cfg);
    if (model_cfg.use_external) {
        model->fusion->fit_normalization(
            std::span(ds.externals.data(), static_cast<size_t>(split.train_end)));
    }

    // Frozen geographic codes from a pretrained denoising autoencoder.
    GeoEncoder geo_encoder{nullptr};
    std::vector<torch::Tensor> geo_codes;
    if (model_cfg.use_local_structure) {
        GeoEncoderConfig gcfg;
        gcfg.in_channels = ds.geo->raw().size(0);
        gcfg.code_channels = model_cfg.geo_channels;
        gcfg.seed = cfg.seed;
        auto pre = pretrain_geo_encoder(ds.geo->raw(), gcfg);
        geo_encoder = pre.encoder;
        torch::NoGradGuard no_grad;
        geo_codes = model->geo_codes(ds.geo->raw(), geo_encoder);
        for (auto& c : geo_codes) c = c.detach();
    }

    // Per-level ground truths.
    std::vector<torch::Tensor> level_fine, level_dist;
    for (auto s : model_cfg.scales) {
        auto fl = sum_pool(data.fine, n / s);
        level_fine.push_back(fl);
        level_dist.push_back(ground_truth_distribution(fl, data.coarse, s));
    }
    const double alpha =
        model_cfg.use_distributional_loss ? model_cfg.loss_alpha : 0.0;

    torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(cfg.lr));
    std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);

    double norm_elems = 0.0;
    for (auto s : model_cfg.scales) {
        norm_elems += static_cast<double>(coarse_h * s * coarse_w * s);
    }

    auto batch_external =
        [&](std::span<const int64_t> idx) -> std::optional<ExternalBatch> {
        if (!model_cfg.use_external) return std::nullopt;
        return model->fusion->make_batch(gather_records(ds.externals, idx));
    };

    auto run_batch = [&](std::span<const int64_t> idx) -> torch::Tensor {
        auto coarse_b = gather_rows(data.coarse, idx);
        auto states = model->forward(coarse_b, batch_external(idx), geo_codes);
        std::vector<LevelPrediction> preds;
        std::vector<LevelTruth> truths;
        for (size_t l = 0; l < states.size(); ++l) {
            preds.push_back({states[l].flow_pred, states[l].distribution,
                             model_cfg.scales[l]});
            truths.push_back({gather_rows(level_fine[l], idx),
                              gather_rows(level_dist[l], idx),
                              model_cfg.scales[l]});
        }
        const double scale = static_cast<double>(idx.size()) * norm_elems;
        return combined_loss(preds, truths, alpha) / scale;
    };

    std::map<std::string, torch::Tensor> best_state;
    TrainHooks hooks;
    hooks.set_lr = [&](double lr) { set_adam_lr(opt, lr); };
    hooks.snapshot_best = [&] { best_state = snapshot_state(*model); };
    hooks.run_epoch = [&](int64_t) {
        model->train();
        auto order = shuffled_indices(0, split.train_end, shuffle_rng);
        double total = 0.0;
        int64_t seen = 0;
        for (int64_t start = 0; start < static_cast<int64_t>(order.size());
             start += cfg.batch_size) {
            const auto count = std::min<int64_t>(cfg.batch_size,
                                                 order.size() - start);
            std::span<const int64_t> idx(order.data() + start,
                                         static_cast<size_t>(count));
            opt.zero_grad();
            auto loss = run_batch(idx);
            loss.backward();
            clip_gradients(model->parameters(), cfg.grad_clip);
            opt.step();
            total += loss.item<double>() * static_cast<double>(count);
            seen += count;
        }
        return total / static_cast<double>(seen);
    };
    hooks.validate = [&] {
        torch::NoGradGuard no_grad;
        model->eval();
        MetricAccumulator acc;
        for (int64_t start = split.train_end; start < split.val_end;
             start += cfg.batch_size) {
            const auto count = std::min<int64_t>(cfg.batch_size, split.val_end - start);
            std::vector<int64_t> idx(count);
            std::iota(idx.begin(), idx.end(), start);
            auto states = model->forward(gather_rows(data.coarse, idx),
                                         batch_external(idx), geo_codes);
            acc.add(states.back().flow_pred, gather_rows(data.fine, idx));
        }
        return acc.rmse();
    };

    auto log = run_training_loop(cfg, hooks);
    if (!best_state.empty()) restore_state(*model, best_state);

    TrainResult result;
    result.checkpoint = make_urbanpy_checkpoint(model, geo_encoder);
    result.checkpoint.header["train_config"] = cfg.to_json();
    result.log = std::move(log);
    return result;
}

MetricReport evaluate(const Checkpoint& ckpt, const FlowDataset& ds,
                      const DatasetSplit& split) {
    torch::NoGradGuard no_grad;
    MetricReport report;
    const int64_t batch = 64;

    if (ckpt.model_kind == "urbanpy") {
        auto model = urbanpy_from_checkpoint(ckpt);
        model->eval();
        const int64_t n = model->cfg.final_scale();
        auto data = prepare(ds, n);
        std::vector<torch::Tensor> geo_codes;
        if (model->cfg.use_local_structure) {
            auto geo_encoder = geo_encoder_from_checkpoint(ckpt);
            if (!geo_encoder || !ds.geo) {
                throw std::invalid_argument(
                    "local-structure model requires geo features in checkpoint and dataset");
            }
            geo_codes = model->geo_codes(ds.geo->raw(), geo_encoder);
        }
        std::vector<torch::Tensor> level_fine;
        for (auto s : model->cfg.scales) level_fine.push_back(sum_pool(data.fine, n / s));

        std::vector<MetricAccumulator> accs(model->cfg.scales.size());
        for (int64_t start = split.val_end; start < split.test_end; start += batch) {
            const auto count = std::min<int64_t>(batch, split.test_end - start);
            std::vector<int64_t> idx(count);
            std::iota(idx.begin(), idx.end(), start);
            std::optional<ExternalBatch> ext;
            if (model->cfg.use_external) {
                ext = model->fusion->make_batch(gather_records(ds.externals, idx));
            }
            auto states = model->forward(gather_rows(data.coarse, idx), ext, geo_codes);
            for (size_t l = 0; l < states.size(); ++l) {
                accs[l].add(states[l].flow_pred, gather_rows(level_fine[l], idx));
            }
        }
        for (size_t l = 0; l < accs.size(); ++l) {
            const auto key = "level_" + std::to_string(model->cfg.scales[l]) + "x";
            report.levels[key] = {{"rmse", accs[l].rmse()},
                                  {"mae", accs[l].mae()},
                                  {"mape", accs[l].mape()}};
        }
        report.rmse = accs.back().rmse();
        report.mae = accs.back().mae();
        report.mape = accs.back().mape();
        return report;
    }

    auto model = urbanfm_from_checkpoint(ckpt);
    model->eval();
    auto data = prepare(ds, model->cfg.n_upscale);
    MetricAccumulator acc;
    for (int64_t start = split.val_end; start < split.test_end; start += batch) {
        const auto count = std::min<int64_t>(batch, split.test_end - start);
        std::vector<int64_t> idx(count);
        std::iota(idx.begin(), idx.end(), start);
        std::optional<ExternalBatch> ext;
        if (model->cfg.use_external) {
            ext = model->fusion->make_batch(gather_records(ds.externals, idx));
        }
        auto out = model->forward(gather_rows(data.coarse, idx), ext);
        acc.add(out.fine_pred, gather_rows(data.fine, idx));
    }
    report.rmse = acc.rmse();
    report.mae = acc.mae();
    report.mape = acc.mape();
    return report;
}

BaselineReports evaluate_baselines(const FlowDataset& ds, const DatasetSplit& split,
                                   int64_t n) {
    std::span<const FlowMap> train(ds.maps.data(), static_cast<size_t>(split.train_end));
    auto ha = fit_ha(train, n);

    MetricAccumulator mean_acc, ha_acc;
    for (int64_t i = split.val_end; i < split.test_end; ++i) {
        auto coarse = coarsen(ds.maps[static_cast<size_t>(i)], n);
        auto truth = ds.maps[static_cast<size_t>(i)].values();
        mean_acc.add(baseline_mean(coarse, n).values(), truth);
        ha_acc.add(predict_ha(ha, coarse).values(), truth);
    }
    BaselineReports reports;
    reports.mean.rmse = mean_acc.rmse();
    reports.mean.mae = mean_acc.mae();
    reports.mean.mape = mean_acc.mape();
    reports.ha.rmse = ha_acc.rmse();
    reports.ha.mae = ha_acc.mae();
    reports.ha.mape = ha_acc.mape();
    return reports;
}

}  // namespace ufi
