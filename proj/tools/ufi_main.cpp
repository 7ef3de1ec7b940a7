// Command-line entry point: generate / train / eval / infer / viz.
// Exit codes: 0 success, 2 validation error, 3 divergence abort.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ufi/baselines.hpp"
#include "ufi/checkpoint.hpp"
#include "ufi/dataset.hpp"
#include "ufi/synthetic.hpp"
#include "ufi/time_util.hpp"
#include "ufi/train.hpp"
#include "ufi/viz.hpp"

namespace {

using nlohmann::json;

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return json::parse(in);
}

// Accepts either a flow-map file or "dataset_dir#index".
ufi::FlowMap resolve_flow_map(const std::string& arg, bool coarse, int64_t n) {
    const auto hash = arg.rfind('#');
    if (hash != std::string::npos &&
        std::filesystem::is_directory(arg.substr(0, hash))) {
        auto ds = ufi::load_dataset(arg.substr(0, hash));
        const auto index = std::stoll(arg.substr(hash + 1));
        if (index < 0 || index >= ds.size()) {
            throw std::invalid_argument("sample index out of range");
        }
        auto fine = ds.maps[static_cast<size_t>(index)];
        return coarse ? ufi::coarsen(fine, n) : fine;
    }
    return ufi::load_flow_map(arg);
}

ufi::ExternalRecord parse_external_row(const std::string& row) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(row);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!row.empty() && row.back() == ',') cells.push_back("");
    if (cells.size() < 7) {
        throw std::invalid_argument(
            "external row needs: timestamp_iso8601,day_of_week,hour_of_day,"
            "weather_id,temperature_c,wind_speed_mph,is_holiday[,ticket_price]");
    }
    ufi::ExternalRecord rec;
    rec.day_of_week = std::stoi(cells[1]);
    rec.hour_of_day = std::stoi(cells[2]);
    rec.weather_id = std::stoi(cells[3]);
    rec.temperature_c = std::stod(cells[4]);
    rec.wind_speed_mph = std::stod(cells[5]);
    rec.is_holiday = std::stoi(cells[6]) != 0;
    if (cells.size() > 7 && !cells[7].empty()) rec.ticket_price = std::stod(cells[7]);
    return rec;
}

int run_generate(const std::string& spec_path, const std::string& out_dir) {
    auto spec = ufi::SyntheticSpec::from_json(read_json_file(spec_path));
    auto ds = ufi::generate_synthetic(spec);
    ufi::save_dataset(ds, out_dir);
    std::cout << "wrote " << ds.size() << " samples (" << ds.height() << "x"
              << ds.width() << " fine, N=" << spec.upscale_n << ") to " << out_dir
              << "\n";
    return 0;
}

int run_train(const std::string& model, const std::string& data_dir,
              const std::string& config_path, const std::string& out_path,
              const std::string& log_path) {
    auto ds = ufi::load_dataset(data_dir);
    json cfg_json = config_path.empty() ? json::object() : read_json_file(config_path);

    const std::string kind = model == "fm-sl" ? "urbanfm" : model;
    auto train_cfg = ufi::TrainConfig::defaults_for(kind);
    {
        auto merged = train_cfg.to_json();
        merged.update(cfg_json);
        train_cfg = ufi::TrainConfig::from_json(merged);
    }
    if (model == "fm-sl") {
        train_cfg.use_structural_loss_variant = true;
        // the -sl variant also drops the external subnet unless asked for
        if (!cfg_json.contains("use_external")) train_cfg.use_external = false;
    }

    ufi::TrainResult result;
    if (model == "urbanpy") {
        auto pcfg = ufi::PyramidConfig::from_json(cfg_json);
        result = ufi::train_urbanpy(ds, ufi::split(ds, 2, 1, 1), pcfg, train_cfg);
    } else if (model == "urbanfm" || model == "fm-sl") {
        auto fcfg = ufi::FMConfig::from_json(cfg_json);
        result = ufi::train_urbanfm(ds, ufi::split(ds, 2, 1, 1), fcfg, train_cfg);
    } else {
        throw std::invalid_argument("unknown model '" + model +
                                    "' (expected urbanfm, urbanpy or fm-sl)");
    }

    result.checkpoint.save(out_path);
    if (!log_path.empty()) {
        std::ofstream log(log_path);
        log << result.log.to_json().dump(2) << "\n";
    }
    const auto& best = result.log.epochs[static_cast<size_t>(result.log.best_epoch)];
    std::cout << "trained " << model << " for " << result.log.epochs.size()
              << " epochs; best validation RMSE " << best.val_metric << " at epoch "
              << best.epoch << "; checkpoint written to " << out_path << "\n";
    return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_dir,
             bool baselines, const std::string& out_path) {
    auto ds = ufi::load_dataset(data_dir);
    auto sp = ufi::split(ds, 2, 1, 1);

    json out;
    int64_t n = 0;
    if (!ckpt_path.empty()) {
        auto ckpt = ufi::Checkpoint::load(ckpt_path);
        auto report = ufi::evaluate(ckpt, ds, sp);
        out["model"] = report.to_json();
        out["model"]["kind"] = ckpt.model_kind;
        if (ckpt.model_kind == "urbanpy") {
            n = ufi::PyramidConfig::from_json(ckpt.header.at("pyramid_config"))
                    .final_scale();
        } else {
            n = ufi::FMConfig::from_json(ckpt.header.at("fm_config")).n_upscale;
        }
    }
    if (baselines) {
        if (n == 0) n = 4;
        auto reports = ufi::evaluate_baselines(ds, sp, n);
        out["mean"] = reports.mean.to_json();
        out["ha"] = reports.ha.to_json();
    }
    const auto text = out.dump(2);
    if (!out_path.empty()) {
        std::ofstream f(out_path);
        f << text << "\n";
    }
    std::cout << text << "\n";
    return 0;
}

int run_infer(const std::string& ckpt_path, const std::string& coarse_arg,
              const std::string& external_row, const std::string& out_path) {
    auto ckpt = ufi::Checkpoint::load(ckpt_path);
    if (ckpt.model_kind == "urbanpy") {
        throw std::invalid_argument(
            "infer currently drives single-pass checkpoints; use eval for pyramid "
            "models");
    }
    auto model = ufi::urbanfm_from_checkpoint(ckpt);
    auto coarse = resolve_flow_map(coarse_arg, /*coarse=*/true, model->cfg.n_upscale);

    std::optional<ufi::ExternalRecord> rec;
    if (!external_row.empty()) rec = parse_external_row(external_row);
    auto out = ufi::forward_urbanfm(model, coarse, rec);
    ufi::save_flow_map(out.fine_pred, out_path);
    std::cout << "inferred " << out.fine_pred.height() << "x" << out.fine_pred.width()
              << " map (total flow " << out.fine_pred.values().sum().item<double>()
              << ") to " << out_path << "\n";
    return 0;
}

int run_viz(const std::string& pred_arg, const std::string& truth_arg,
            const std::string& out_path) {
    auto pred = resolve_flow_map(pred_arg, false, 1);
    auto truth = resolve_flow_map(truth_arg, false, 1);
    ufi::write_error_heatmap(pred, truth, out_path);
    const double max_err =
        (pred.values().to(torch::kFloat64) - truth.values().to(torch::kFloat64))
            .abs()
            .max()
            .item<double>();
    std::cout << "wrote " << out_path << " (max absolute error " << max_err << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fine-grained urban flow inference toolkit"};
    app.require_subcommand(1);

    std::string spec_path, out_arg, model, data_dir, config_path, log_path;
    std::string ckpt_path, coarse_arg, external_row, pred_arg, truth_arg;
    bool baselines = false;

    auto* generate = app.add_subcommand("generate", "Generate a synthetic dataset");
    generate->add_option("--spec", spec_path, "SyntheticSpec JSON")->required();
    generate->add_option("--out", out_arg, "output dataset directory")->required();

    auto* train = app.add_subcommand("train", "Train a model");
    train->add_option("--model", model, "urbanfm | urbanpy | fm-sl")->required();
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--config", config_path, "train/model config JSON");
    train->add_option("--out", out_arg, "checkpoint output path")->required();
    train->add_option("--log", log_path, "training-log JSON output path");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and/or baselines");
    eval->add_option("--ckpt", ckpt_path, "checkpoint path");
    eval->add_option("--data", data_dir, "dataset directory")->required();
    eval->add_flag("--baselines", baselines, "also evaluate Mean and HA");
    eval->add_option("--out", out_arg, "metric report JSON output path");

    auto* infer = app.add_subcommand("infer", "Infer one fine map from a coarse map");
    infer->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    infer->add_option("--coarse", coarse_arg, "flow-map file or dataset_dir#index")
        ->required();
    infer->add_option("--external", external_row,
                      "CSV row matching the externals.csv columns");
    infer->add_option("--out", out_arg, "output flow-map path")->required();

    auto* viz = app.add_subcommand("viz", "Absolute-error heatmap PNG");
    viz->add_option("--pred", pred_arg, "prediction flow-map file")->required();
    viz->add_option("--truth", truth_arg, "ground-truth flow-map file")->required();
    viz->add_option("--out", out_arg, "output PNG path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) return run_generate(spec_path, out_arg);
        if (train->parsed())
            return run_train(model, data_dir, config_path, out_arg, log_path);
        if (eval->parsed()) return run_eval(ckpt_path, data_dir, baselines, out_arg);
        if (infer->parsed())
            return run_infer(ckpt_path, coarse_arg, external_row, out_arg);
        if (viz->parsed()) return run_viz(pred_arg, truth_arg, out_arg);
    } catch (const ufi::DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
