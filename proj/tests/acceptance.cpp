// Acceptance suite: one pass/fail line per criterion. Exit code is the
// number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "ufi/baselines.hpp"
#include "ufi/flow.hpp"
#include "ufi/metrics.hpp"
#include "ufi/ops.hpp"
#include "ufi/stats.hpp"
#include "ufi/synthetic.hpp"
#include "ufi/train.hpp"
#include "ufi/urbanfm.hpp"
#include "ufi/urbanpy.hpp"

using namespace ufi;
using Clock = std::chrono::steady_clock;

namespace {

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& what) {
    if (!cond) throw Failure(what);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

ExternalRecord make_record(int weather, int hour = 9) {
    ExternalRecord r;
    r.day_of_week = 2;
    r.hour_of_day = hour;
    r.weather_id = weather;
    r.temperature_c = 15.0;
    r.wind_speed_mph = 5.0;
    return r;
}

std::vector<ExternalRecord> random_records(int64_t count, std::mt19937_64& rng,
                                           int vocab = 8) {
    std::vector<ExternalRecord> records;
    std::uniform_int_distribution<int> weather(0, vocab - 1);
    std::uniform_int_distribution<int> hour(0, 23);
    for (int64_t i = 0; i < count; ++i) {
        records.push_back(make_record(weather(rng), hour(rng)));
    }
    return records;
}

// The weather-regime dataset shared by the learnability, ablation and
// pyramid criteria: 8x8 coarse -> 32x32 fine, N=4, 2000 samples.
SyntheticSpec learnability_spec() {
    SyntheticSpec spec;
    spec.fine_height = spec.fine_width = 32;
    spec.upscale_n = 4;
    spec.num_samples = 2000;
    spec.volume_min = 50;
    spec.volume_max = 150;
    spec.noise_level = 0.05;
    spec.seed = 2024;
    spec.weather_vocab = 8;
    Regime clear;
    clear.weather_ids = {0, 1, 2, 3};
    clear.pattern = random_block_pattern(32, 32, 4, 11);
    Regime storm;
    storm.weather_ids = {4, 5, 6, 7};
    storm.pattern = random_block_pattern(32, 32, 4, 22);
    spec.regimes = {clear, storm};
    return spec;
}

FMConfig desk_fm() {
    FMConfig cfg;
    cfg.n_upscale = 4;
    cfg.res_blocks = 4;
    cfg.filters = 32;
    return cfg;
}

// ---------------------------------------------------------------------------

void structural_constraint_suite() {
    torch::manual_seed(99);
    std::mt19937_64 rng(99);
    const int64_t total = 100;

    FMConfig fm_cfg;  // default 16-64
    FusionConfig fusion_cfg;
    fusion_cfg.weather_vocab = 8;
    auto fm = build_urbanfm(fm_cfg, 8, 8, 1, fusion_cfg);
    fm->eval();

    PyramidConfig py_cfg;  // default 4-64-4, scales [2,4,8]
    auto py = build_urbanpy(py_cfg, 8, 8, 2, fusion_cfg);
    py->eval();

    torch::NoGradGuard no_grad;
    for (int64_t start = 0; start < total; start += 25) {
        auto coarse = torch::rand({25, 1, 8, 8}) * 80;
        auto records = random_records(25, rng);
        auto fm_out = fm->forward(coarse, fm->fusion->make_batch(records));
        auto report = verify_structural(coarse, fm_out.fine_pred, 4, 1e-4);
        require(report.pass, "UrbanFM constraint violated: max rel error " +
                                 fmt(report.max_rel_error));

        auto states = py->forward(coarse, py->fusion->make_batch(records));
        for (size_t l = 0; l < states.size(); ++l) {
            auto lvl = verify_structural(coarse, states[l].flow_pred,
                                         py_cfg.scales[l], 1e-4);
            require(lvl.pass, "UrbanPy level " + std::to_string(l + 1) +
                                  " constraint violated: max rel error " +
                                  fmt(lvl.max_rel_error));
        }
    }
}

void n2_normalization_suite() {
    torch::manual_seed(7);
    for (int trial = 0; trial < 1000; ++trial) {
        const int64_t s = trial % 2 ? 2 : 4;
        const int64_t h = s * (1 + trial % 3);
        const int64_t w = s * (1 + (trial / 3) % 3);
        auto x = torch::rand({h, w}, torch::kFloat64) + 1e-4;
        auto mine = n2_normalize(x, s, 1e-9);
        // per-block explicit division oracle
        auto sums = torch::zeros({h / s, w / s}, torch::kFloat64);
        auto xa = x.accessor<double, 2>();
        auto sa = sums.accessor<double, 2>();
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j) sa[i / s][j / s] += xa[i][j];
        auto ref = torch::zeros_like(x);
        auto ra = ref.accessor<double, 2>();
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j)
                ra[i][j] = xa[i][j] / (sa[i / s][j / s] + 1e-9);
        const double err = (mine - ref).abs().max().item<double>();
        require(err < 1e-7, "oracle deviation " + fmt(err));
    }
    for (uint64_t seed = 0; seed < 20; ++seed) {
        auto report = n2_normalize_grad_check(8, 8, 4, 1e-9, 9000 + seed);
        require(report.max_rel_error <= 1e-3,
                "gradient error " + fmt(report.max_rel_error) + " at seed " +
                    std::to_string(seed));
    }
}

void distribution_invariant_suite() {
    torch::manual_seed(31);
    std::mt19937_64 rng(31);
    int64_t cases = 0;
    auto check = [&](const torch::Tensor& batched, int64_t block) {
        for (int64_t i = 0; i < batched.size(0); ++i) {
            auto msg = check_distribution_invariants(batched[i], block);
            require(msg.empty(), msg);
            ++cases;
        }
    };

    FMConfig fm_cfg;
    fm_cfg.res_blocks = 4;
    fm_cfg.filters = 16;
    FusionConfig fusion_cfg;
    fusion_cfg.weather_vocab = 8;
    auto fm = build_urbanfm(fm_cfg, 8, 8, 3, fusion_cfg);
    fm->eval();

    PyramidConfig py_cfg;
    py_cfg.scales = {2, 4};
    py_cfg.res_blocks_per_level = 2;
    py_cfg.filters = 16;
    py_cfg.proposal_depth = 2;
    auto py = build_urbanpy(py_cfg, 8, 8, 4, fusion_cfg);
    py->eval();

    torch::NoGradGuard no_grad;
    for (int batch = 0; batch < 6; ++batch) {
        auto coarse = torch::rand({50, 1, 8, 8}) * 60;
        auto records = random_records(50, rng);
        check(fm->forward(coarse, fm->fusion->make_batch(records)).distribution, 4);
    }
    for (int batch = 0; batch < 2; ++batch) {
        auto coarse = torch::rand({50, 1, 8, 8}) * 60;
        auto records = random_records(50, rng);
        auto states = py->forward(coarse, py->fusion->make_batch(records));
        for (size_t l = 0; l < states.size(); ++l) {
            check(states[l].proposal, py_cfg.scales[l]);
            check(states[l].correction, py_cfg.scales[l]);
            check(states[l].distribution, py_cfg.scales[l]);
        }
    }
    std::uniform_int_distribution<int> zero_block(0, 3);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<FlowMap> train;
        for (int i = 0; i < 4; ++i) {
            auto m = torch::rand({8, 8}, torch::kFloat64) * 10;
            if (trial % 3 == 0) {
                const int b = zero_block(rng);
                m.slice(0, (b / 2) * 4, (b / 2) * 4 + 4)
                    .slice(1, (b % 2) * 4, (b % 2) * 4 + 4)
                    .zero_();
            }
            train.emplace_back(m);
        }
        auto ha = fit_ha(train, 4);
        auto msg = check_distribution_invariants(ha.fractions.values, 4);
        require(msg.empty(), "HA fractions: " + msg);
        ++cases;
    }
    require(cases >= 1000, "only " + std::to_string(cases) + " cases exercised");
}

void mixture_closure_suite() {
    torch::manual_seed(17);
    for (int trial = 0; trial < 500; ++trial) {
        const int64_t s = trial % 2 ? 2 : 4;
        const int64_t h = s * 4, w = s * 2;
        auto proto = n2_normalize(torch::rand({h, w}, torch::kFloat64) + 1e-3, s, 0.0);
        auto corr = n2_normalize(torch::rand({h, w}, torch::kFloat64) + 1e-3, s, 0.0);
        auto mixed = mix_renormalize(proto, corr, s, 1e-9);
        const double err = (mixed - (proto + corr) / 2.0).abs().max().item<double>();
        require(err < 1e-6, "mixture deviates from (p1+p2)/2 by " + fmt(err));
        auto msg = check_distribution_invariants(mixed, s);
        require(msg.empty(), msg);
    }
}

void nonshared_conv_suite() {
    torch::manual_seed(23);
    for (int trial = 0; trial < 50; ++trial) {
        const int64_t k = (trial % 3 == 0) ? 2 : ((trial % 3 == 1) ? 4 : 8);
        const int64_t gh = 1 + trial % 4;
        const int64_t gw = 1 + (trial / 4) % 4;
        const int64_t cin = 1 + trial % 3;
        const int64_t cout = 1 + (trial / 2) % 5;
        auto opts = torch::TensorOptions().dtype(torch::kFloat64);
        auto x = torch::randn({2, cin, gh * k, gw * k}, opts);
        auto shared = torch::randn({cout, cin, k, k}, opts);
        auto bias = torch::randn({cout}, opts);
        auto mine = nonshared_conv(
            x, shared.unsqueeze(0).repeat({gh * gw, 1, 1, 1, 1}),
            bias.unsqueeze(0).repeat({gh * gw, 1}), k);
        auto ref = torch::conv2d(x, shared, bias, k);
        const double err = (mine - ref).abs().max().item<double>();
        require(err < 1e-6, "tied-kernel deviation " + fmt(err));
    }
}

void baseline_oracle_suite() {
    // Mean on uniform-truth data: exact zero error
    SyntheticSpec uniform_spec;
    uniform_spec.fine_height = uniform_spec.fine_width = 16;
    uniform_spec.upscale_n = 4;
    uniform_spec.num_samples = 80;
    uniform_spec.volume_min = 50;
    uniform_spec.volume_max = 150;
    uniform_spec.seed = 5;
    Regime uniform_regime;
    uniform_regime.pattern = uniform_block_pattern(16, 16, 4);
    uniform_spec.regimes = {uniform_regime};
    auto uniform_ds = generate_synthetic(uniform_spec);
    auto uniform_split = split(uniform_ds, 2, 1, 1);
    MetricAccumulator mean_acc;
    for (int64_t i = uniform_split.val_end; i < uniform_split.test_end; ++i) {
        auto coarse = coarsen(uniform_ds.maps[i], 4);
        mean_acc.add(baseline_mean(coarse, 4).values(), uniform_ds.maps[i].values());
    }
    require(mean_acc.rmse() == 0.0,
            "Mean on uniform truth: RMSE " + fmt(mean_acc.rmse()) + " != 0");

    // HA on stationary noise-free data: RMSE under 1e-6 of the flow scale
    SyntheticSpec ha_spec;
    ha_spec.fine_height = ha_spec.fine_width = 32;
    ha_spec.upscale_n = 4;
    ha_spec.num_samples = 2000;
    ha_spec.volume_min = 50;
    ha_spec.volume_max = 150;
    ha_spec.seed = 6;
    Regime stationary;
    stationary.pattern = random_block_pattern(32, 32, 4, 61);
    ha_spec.regimes = {stationary};
    auto ha_ds = generate_synthetic(ha_spec);
    auto ha_split = split(ha_ds, 2, 1, 1);
    std::span<const FlowMap> train(ha_ds.maps.data(),
                                   static_cast<size_t>(ha_split.train_end));
    auto ha = fit_ha(train, 4);
    MetricAccumulator ha_acc;
    double truth_total = 0.0;
    int64_t truth_cells = 0;
    for (int64_t i = ha_split.val_end; i < ha_split.test_end; ++i) {
        auto coarse = coarsen(ha_ds.maps[i], 4);
        ha_acc.add(predict_ha(ha, coarse).values(), ha_ds.maps[i].values());
        truth_total += ha_ds.maps[i].values().sum().item<double>();
        truth_cells += ha_ds.maps[i].values().numel();
    }
    const double flow_scale = truth_total / static_cast<double>(truth_cells);
    require(ha_acc.rmse() < 1e-6 * flow_scale,
            "HA stationary RMSE " + fmt(ha_acc.rmse()) + " >= 1e-6 x scale " +
                fmt(flow_scale));
}

struct SharedLearnability {
    FlowDataset ds;
    DatasetSplit sp;
    double ha_rmse = 0.0;
    double mean_rmse = 0.0;
};

SharedLearnability& learnability_data() {
    static SharedLearnability shared = [] {
        SharedLearnability s;
        s.ds = generate_synthetic(learnability_spec());
        s.sp = split(s.ds, 2, 1, 1);
        auto reports = evaluate_baselines(s.ds, s.sp, 4);
        s.ha_rmse = reports.ha.rmse;
        s.mean_rmse = reports.mean.rmse;
        return s;
    }();
    return shared;
}

void learnability_suite() {
    auto& shared = learnability_data();

    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.batch_size = 16;
    cfg.max_epochs = 12;  // criterion allows up to 40
    cfg.seed = 7;
    auto trained = train_urbanfm(shared.ds, shared.sp, desk_fm(), cfg);
    auto report = evaluate(trained.checkpoint, shared.ds, shared.sp);

    require(report.rmse < 0.9 * shared.ha_rmse,
            "model RMSE " + fmt(report.rmse) + " not below 0.9 x HA " +
                fmt(shared.ha_rmse));
    require(report.rmse < 0.9 * shared.mean_rmse,
            "model RMSE " + fmt(report.rmse) + " not below 0.9 x Mean " +
                fmt(shared.mean_rmse));
    std::cout << "    model RMSE " << fmt(report.rmse) << " vs HA "
              << fmt(shared.ha_rmse) << " and Mean " << fmt(shared.mean_rmse) << "\n";

    // external-response property: flipping the weather regime moves the
    // argmax inside at least one superregion
    auto model = urbanfm_from_checkpoint(trained.checkpoint);
    model->eval();
    torch::NoGradGuard no_grad;
    auto coarse = coarsen(shared.ds.maps[shared.sp.val_end + 1], 4);
    auto clear = forward_urbanfm(model, coarse, make_record(0));
    auto storm = forward_urbanfm(model, coarse, make_record(7));
    auto argmax_per_block = [](const torch::Tensor& dist) {
        namespace F = torch::nn::functional;
        auto patches =
            F::unfold(dist.unsqueeze(0).unsqueeze(0), F::UnfoldFuncOptions(4).stride(4));
        return patches.squeeze(0).argmax(0);
    };
    auto a = argmax_per_block(clear.distribution.values);
    auto b = argmax_per_block(storm.distribution.values);
    require(!a.equal(b), "weather flip left every block's argmax unchanged");
}

void ablation_direction_suite() {
    auto& shared = learnability_data();
    int wins = 0;
    for (uint64_t seed = 0; seed < 5; ++seed) {
        TrainConfig cfg;
        cfg.lr = 1e-3;
        cfg.batch_size = 16;
        cfg.max_epochs = 6;
        cfg.seed = 100 + seed;
        auto with_ext = train_urbanfm(shared.ds, shared.sp, desk_fm(), cfg);
        auto ext_report = evaluate(with_ext.checkpoint, shared.ds, shared.sp);

        cfg.use_external = false;
        auto without_ext = train_urbanfm(shared.ds, shared.sp, desk_fm(), cfg);
        auto ne_report = evaluate(without_ext.checkpoint, shared.ds, shared.sp);

        std::cout << "    seed " << cfg.seed << ": UrbanFM " << fmt(ext_report.rmse)
                  << " vs UrbanFM-ne " << fmt(ne_report.rmse) << "\n";
        if (ext_report.rmse <= ne_report.rmse) ++wins;
    }
    require(wins >= 4, "external fusion won on only " + std::to_string(wins) +
                           " of 5 seeds");
}

void pyramid_consistency_suite() {
    auto& shared = learnability_data();

    PyramidConfig pcfg;
    pcfg.scales = {2, 4};
    pcfg.res_blocks_per_level = 4;
    pcfg.filters = 32;
    pcfg.proposal_depth = 4;

    TrainConfig cfg = TrainConfig::defaults_for("urbanpy");
    cfg.max_epochs = 5;
    cfg.seed = 7;
    auto trained = train_urbanpy(shared.ds, shared.sp, pcfg, cfg);
    require(trained.log.epochs.size() == 5, "expected 5 epochs");
    const double first = trained.log.epochs.front().train_loss;
    const double last = trained.log.epochs.back().train_loss;
    require(last < first, "combined loss did not decrease: epoch 5 " + fmt(last) +
                              " vs epoch 1 " + fmt(first));
    std::cout << "    combined loss epoch1 " << fmt(first) << " -> epoch5 "
              << fmt(last) << "\n";

    auto report = evaluate(trained.checkpoint, shared.ds, shared.sp);
    for (const auto& [level, metrics] : report.levels) {
        for (const auto& [name, value] : metrics) {
            require(std::isfinite(value), level + " " + name + " is not finite");
        }
    }
    require(report.levels.count("level_4x") == 1, "missing final-level metrics");

    // invariants on a fresh forward pass of the trained model
    auto model = urbanpy_from_checkpoint(trained.checkpoint);
    model->eval();
    torch::NoGradGuard no_grad;
    auto data_fine = shared.ds.stacked().slice(0, shared.sp.val_end,
                                               shared.sp.val_end + 16);
    auto coarse = sum_pool(data_fine, 4);
    std::vector<ExternalRecord> records(
        shared.ds.externals.begin() + shared.sp.val_end,
        shared.ds.externals.begin() + shared.sp.val_end + 16);
    auto states = model->forward(coarse, model->fusion->make_batch(records));
    for (size_t l = 0; l < states.size(); ++l) {
        auto msg = check_distribution_invariants(states[l].distribution,
                                                 pcfg.scales[l]);
        require(msg.empty(), "level " + std::to_string(l + 1) + ": " + msg);
        require(verify_structural(coarse, states[l].flow_pred, pcfg.scales[l], 1e-4)
                    .pass,
                "level " + std::to_string(l + 1) + " violates the constraint");
    }
}

void loss_identity_suite() {
    torch::manual_seed(41);
    // combined loss at alpha 0 equals the summed MSE to 1e-12
    std::vector<LevelPrediction> preds;
    std::vector<LevelTruth> truths;
    double mse_total = 0.0;
    for (int64_t scale : {2, 4}) {
        LevelPrediction p;
        p.flow = torch::rand({3, 1, 8 * scale, 8 * scale}, torch::kFloat64);
        p.scale = scale;
        LevelTruth t;
        t.flow = torch::rand({3, 1, 8 * scale, 8 * scale}, torch::kFloat64);
        t.scale = scale;
        mse_total += (p.flow - t.flow).pow(2).sum().item<double>();
        preds.push_back(p);
        truths.push_back(t);
    }
    const double combined = combined_loss(preds, truths, 0.0).item<double>();
    require(std::abs(combined - mse_total) <= 1e-12 * std::max(1.0, mse_total),
            "alpha=0 identity broken: " + fmt(combined) + " vs " + fmt(mse_total));

    // KL: zero iff equal, non-negative, hand example
    for (int trial = 0; trial < 1000; ++trial) {
        auto a = n2_normalize(torch::rand({4, 4}, torch::kFloat64) + 1e-3, 2, 0.0);
        auto b = n2_normalize(torch::rand({4, 4}, torch::kFloat64) + 1e-3, 2, 0.0);
        const double kl = kl_distributional_loss_t(a, b, 2).item<double>();
        require(kl >= 0.0, "negative KL " + fmt(kl));
        require(kl_distributional_loss_t(a, a, 2).item<double>() == 0.0,
                "KL(d,d) != 0");
        if (trial < 10) {
            require(kl > 0.0, "KL of distinct random pair is zero");
        }
    }
    auto pred = torch::tensor({{0.5, 0.5}, {0.0, 0.0}}, torch::kFloat64);
    auto truth = torch::tensor({{0.25, 0.75}, {0.0, 0.0}}, torch::kFloat64);
    const double hand = kl_distributional_loss_t(pred, truth, 2).item<double>();
    const double expected = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
    require(std::abs(hand - expected) < 1e-6,
            "hand example " + fmt(hand) + " vs " + fmt(expected));
}

void schedule_stopping_suite() {
    TrainConfig cfg;
    cfg.lr = 1e-4;
    cfg.max_epochs = 200;
    cfg.early_stop_patience = 50;

    std::vector<double> lrs;
    TrainHooks hooks;
    hooks.set_lr = [&](double lr) { lrs.push_back(lr); };
    hooks.run_epoch = [](int64_t) { return 1.0; };
    // improves for the first 65 epochs, then stalls
    int64_t epoch_counter = 0;
    hooks.validate = [&] {
        const auto e = epoch_counter++;
        return e < 65 ? 1000.0 - static_cast<double>(e) : 10000.0;
    };
    hooks.snapshot_best = [] {};

    auto log = run_training_loop(cfg, hooks);
    require(lrs.at(19) == 1e-4 && lrs.at(20) == 5e-5, "no halving at epoch 20");
    require(lrs.at(39) == 5e-5 && lrs.at(40) == 2.5e-5, "no halving at epoch 40");
    require(lrs.at(59) == 2.5e-5 && lrs.at(60) == 1.25e-5, "no halving at epoch 60");
    require(log.early_stopped, "patience never triggered");
    require(log.best_epoch == 64, "best epoch " + std::to_string(log.best_epoch));
    require(static_cast<int64_t>(log.epochs.size()) == 65 + 50,
            "stopped after " + std::to_string(log.epochs.size()) +
                " epochs, expected 115");
    for (const auto& e : log.epochs) {
        require(e.lr == 1e-4 * std::pow(0.5, e.epoch / 20), "lr schedule invariant");
    }
}

void metric_oracle_suite() {
    std::vector<FlowMap> preds{FlowMap({{1, 2}})};
    std::vector<FlowMap> truths{FlowMap({{2, 4}})};
    require(std::abs(rmse(preds, truths) - std::sqrt(2.5)) < 1e-9, "RMSE hand value");
    require(std::abs(mae(preds, truths) - 1.5) < 1e-9, "MAE hand value");
    require(std::abs(mape(preds, truths) - 0.5) < 1e-9, "MAPE hand value");

    std::vector<double> a(16), b(16);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> uni(2.0, 3.0);
    for (int i = 0; i < 16; ++i) {
        b[i] = uni(rng);
        a[i] = b[i] - 0.5 - 0.02 * i;
    }
    const double p = wilcoxon_signed_rank(a, b);
    require(std::abs(p - 1.0 / 65536.0) < 1e-12,
            "dominance p-value " + fmt(p) + " != 2^-16");
}

struct Criterion {
    const char* name;
    double budget_seconds;  // 0 = unbounded
    std::function<void()> run;
};

}  // namespace

int main() {
    torch::manual_seed(0);
    const std::vector<Criterion> criteria{
        {"structural-constraint", 30, structural_constraint_suite},
        {"n2-normalization", 60, n2_normalization_suite},
        {"distribution-invariants", 0, distribution_invariant_suite},
        {"mixture-closure", 0, mixture_closure_suite},
        {"nonshared-convolution", 0, nonshared_conv_suite},
        {"baseline-oracles", 0, baseline_oracle_suite},
        {"learnability", 900, learnability_suite},
        {"ablation-direction", 0, ablation_direction_suite},
        {"pyramid-consistency", 0, pyramid_consistency_suite},
        {"loss-identities", 0, loss_identity_suite},
        {"schedule-stopping", 10, schedule_stopping_suite},
        {"metric-oracles", 0, metric_oracle_suite},
    };

    int failures = 0;
    for (const auto& criterion : criteria) {
        const auto t0 = Clock::now();
        std::string error;
        try {
            criterion.run();
        } catch (const std::exception& e) {
            error = e.what();
        }
        const double elapsed = std::chrono::duration<double>(Clock::now() - t0).count();
        if (error.empty() && criterion.budget_seconds > 0 &&
            elapsed > criterion.budget_seconds) {
            error = "runtime " + fmt(elapsed) + "s exceeds budget " +
                    fmt(criterion.budget_seconds) + "s";
        }
        if (error.empty()) {
            std::printf("[PASS] %-26s (%.1fs)\n", criterion.name, elapsed);
        } else {
            std::printf("[FAIL] %-26s (%.1fs): %s\n", criterion.name, elapsed,
                        error.c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
    return failures;
}
