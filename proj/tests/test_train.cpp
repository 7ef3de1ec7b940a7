#include "test_common.hpp"

#include <cmath>
#include <filesystem>
#include <vector>

#include "ufi/checkpoint.hpp"
#include "ufi/synthetic.hpp"
#include "ufi/train.hpp"

using namespace ufi;
namespace fs = std::filesystem;

namespace {

SyntheticSpec train_spec(uint64_t seed = 1) {
    SyntheticSpec spec;
    spec.fine_height = spec.fine_width = 8;
    spec.upscale_n = 2;
    spec.num_samples = 48;
    spec.volume_min = 50;
    spec.volume_max = 150;
    spec.noise_level = 0.05;
    spec.seed = seed;
    Regime r;
    r.pattern = random_block_pattern(8, 8, 2, seed + 40);
    spec.regimes.push_back(r);
    return spec;
}

FMConfig tiny_fm() {
    FMConfig cfg;
    cfg.n_upscale = 2;
    cfg.res_blocks = 1;
    cfg.filters = 4;
    return cfg;
}

TrainConfig tiny_train(int64_t epochs = 2) {
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.batch_size = 8;
    cfg.max_epochs = epochs;
    cfg.seed = 5;
    return cfg;
}

struct TempFile {
    fs::path path;
    explicit TempFile(const char* name) {
        path = fs::temp_directory_path() /
               (std::string(name) + std::to_string(reinterpret_cast<uintptr_t>(this)));
    }
    ~TempFile() { fs::remove(path); }
};

}  // namespace

TEST_CASE("learning rate halves every 20 epochs on a stub objective") {
    TrainConfig cfg;
    cfg.lr = 1e-4;
    cfg.max_epochs = 70;
    cfg.early_stop_patience = 100;

    std::vector<double> lrs;
    double metric = 1000.0;
    TrainHooks hooks;
    hooks.set_lr = [&](double lr) { lrs.push_back(lr); };
    hooks.run_epoch = [&](int64_t) { return 1.0; };
    hooks.validate = [&] { return metric -= 1.0; };  // always improving
    hooks.snapshot_best = [] {};

    auto log = run_training_loop(cfg, hooks);
    REQUIRE(log.epochs.size() == 70);
    CHECK(lrs[0] == doctest::Approx(1e-4));
    CHECK(lrs[19] == doctest::Approx(1e-4));
    CHECK(lrs[20] == doctest::Approx(5e-5));
    CHECK(lrs[39] == doctest::Approx(5e-5));
    CHECK(lrs[40] == doctest::Approx(2.5e-5));
    CHECK(lrs[60] == doctest::Approx(1.25e-5));
    for (const auto& e : log.epochs) {
        CHECK(e.lr == doctest::Approx(1e-4 * std::pow(0.5, e.epoch / 20)));
    }
}

TEST_CASE("training stops after 50 epochs without improvement") {
    TrainConfig cfg;
    cfg.max_epochs = 500;
    cfg.early_stop_patience = 50;

    int64_t snapshots = 0;
    TrainHooks hooks;
    hooks.set_lr = [](double) {};
    hooks.run_epoch = [](int64_t) { return 1.0; };
    hooks.validate = [&] { return 10.0; };  // never improves after epoch 0
    hooks.snapshot_best = [&] { ++snapshots; };

    auto log = run_training_loop(cfg, hooks);
    CHECK(log.early_stopped);
    CHECK(log.best_epoch == 0);
    CHECK(snapshots == 1);
    CHECK(log.epochs.size() == 51);  // epoch 0 best + 50 patience epochs
}

TEST_CASE("non-finite loss aborts with a divergence error") {
    TrainConfig cfg;
    cfg.max_epochs = 10;
    TrainHooks hooks;
    hooks.set_lr = [](double) {};
    hooks.run_epoch = [](int64_t epoch) {
        return epoch < 2 ? 1.0 : std::nan("");
    };
    hooks.validate = [] { return 1.0; };
    hooks.snapshot_best = [] {};
    CHECK_THROWS_AS(run_training_loop(cfg, hooks), DivergenceError);
}

TEST_CASE("urbanfm training is deterministic given the seed") {
    auto ds = generate_synthetic(train_spec(2));
    auto sp = split(ds, 2, 1, 1);
    auto a = train_urbanfm(ds, sp, tiny_fm(), tiny_train(3));
    auto b = train_urbanfm(ds, sp, tiny_fm(), tiny_train(3));
    REQUIRE(a.log.epochs.size() == b.log.epochs.size());
    for (size_t i = 0; i < a.log.epochs.size(); ++i) {
        CHECK(a.log.epochs[i].train_loss == b.log.epochs[i].train_loss);
        CHECK(a.log.epochs[i].val_metric == b.log.epochs[i].val_metric);
        CHECK(a.log.epochs[i].lr == b.log.epochs[i].lr);
    }
}

TEST_CASE("checkpoint round trip preserves the metric report bitwise") {
    auto ds = generate_synthetic(train_spec(3));
    auto sp = split(ds, 2, 1, 1);
    auto trained = train_urbanfm(ds, sp, tiny_fm(), tiny_train(2));

    auto before = evaluate(trained.checkpoint, ds, sp);
    TempFile file("ufi_ckpt_");
    trained.checkpoint.save(file.path);
    auto loaded = Checkpoint::load(file.path);
    auto after = evaluate(loaded, ds, sp);
    CHECK(before.to_json().dump() == after.to_json().dump());
    CHECK(loaded.model_kind == "urbanfm");

    // evaluating twice from the same checkpoint is identical
    auto again = evaluate(loaded, ds, sp);
    CHECK(after.to_json().dump() == again.to_json().dump());
}

TEST_CASE("train loss decreases on the little smoke fixture") {
    auto ds = generate_synthetic(train_spec(4));
    auto sp = split(ds, 2, 1, 1);
    auto cfg = tiny_train(5);
    auto trained = train_urbanfm(ds, sp, tiny_fm(), cfg);
    CHECK(trained.log.epochs[4].train_loss < trained.log.epochs[0].train_loss);
}

TEST_CASE("structural-loss variant trains through the harness") {
    auto ds = generate_synthetic(train_spec(5));
    auto sp = split(ds, 2, 1, 1);
    auto cfg = tiny_train(2);
    cfg.use_structural_loss_variant = true;
    cfg.use_external = false;
    auto trained = train_urbanfm(ds, sp, tiny_fm(), cfg);
    CHECK(trained.checkpoint.model_kind == "urbanfm-sl");
    auto report = evaluate(trained.checkpoint, ds, sp);
    CHECK(std::isfinite(report.rmse));
}

TEST_CASE("urbanpy trains, evaluates per level, and checkpoints with geo") {
    auto spec = train_spec(6);
    spec.geo_poi_channels = 3;
    auto ds = generate_synthetic(spec);
    auto sp = split(ds, 2, 1, 1);

    PyramidConfig pcfg;
    pcfg.scales = {2};
    pcfg.res_blocks_per_level = 1;
    pcfg.filters = 4;
    pcfg.proposal_depth = 1;
    pcfg.geo_channels = 2;

    auto cfg = tiny_train(2);
    cfg.batch_size = 8;
    cfg.local_structure = true;
    auto trained = train_urbanpy(ds, sp, pcfg, cfg);
    CHECK(trained.checkpoint.model_kind == "urbanpy");
    CHECK(trained.checkpoint.header.contains("geo_encoder"));

    TempFile file("ufi_py_ckpt_");
    trained.checkpoint.save(file.path);
    auto loaded = Checkpoint::load(file.path);
    auto report = evaluate(loaded, ds, sp);
    CHECK(report.levels.count("level_2x") == 1);
    CHECK(std::isfinite(report.rmse));
    CHECK(report.rmse == doctest::Approx(report.levels["level_2x"]["rmse"]));
}

TEST_CASE("local structure without geo data is a clear error") {
    auto ds = generate_synthetic(train_spec(7));  // no geo channels
    auto sp = split(ds, 2, 1, 1);
    PyramidConfig pcfg;
    pcfg.scales = {2};
    pcfg.res_blocks_per_level = 1;
    pcfg.filters = 4;
    pcfg.proposal_depth = 1;
    auto cfg = tiny_train(1);
    cfg.local_structure = true;
    CHECK_THROWS_WITH_AS(train_urbanpy(ds, sp, pcfg, cfg),
                         doctest::Contains("disable use_local_structure"),
                         std::invalid_argument);
}

TEST_CASE("baseline evaluation runs without any checkpoint") {
    auto ds = generate_synthetic(train_spec(8));
    auto sp = split(ds, 2, 1, 1);
    auto reports = evaluate_baselines(ds, sp, 2);
    CHECK(reports.mean.rmse > 0.0);
    CHECK(reports.ha.rmse > 0.0);
    CHECK(reports.ha.rmse <= reports.mean.rmse);
}

TEST_CASE("train config JSON round trip") {
    TrainConfig cfg = TrainConfig::defaults_for("urbanpy");
    CHECK(cfg.lr == doctest::Approx(2e-4));
    CHECK(cfg.batch_size == 32);
    cfg.seed = 9;
    cfg.grad_clip = 1.5;
    auto restored = TrainConfig::from_json(cfg.to_json());
    CHECK(restored.seed == 9);
    CHECK(restored.grad_clip == doctest::Approx(1.5));
    CHECK(restored.batch_size == 32);

    auto bad = cfg.to_json();
    bad["lr"] = -1.0;
    CHECK_THROWS_AS(TrainConfig::from_json(bad), std::invalid_argument);
}
