// Release gate. Ten checks, each printing one [criterion N] PASS/FAIL line.
// Tolerances and seeds are pinned here on purpose: a change in any of these
// numbers is a behavior change and should look like one in review.
#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "mcnn/mcnn.hpp"
#include "test_util.hpp"

using namespace mcnn;

namespace {

// Seed and dataset size shared by the end-to-end and ablation checks.
// Thresholds below were pinned from an oracle run at exactly this setup.
constexpr std::uint64_t kEndToEndSeed = 42;
constexpr std::size_t kEndToEndSamples = 500;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

AugmentConfig no_augment() {
    AugmentConfig ac;
    ac.enabled = false;
    return ac;
}

void verdict(int criterion, const char* label, const std::string& detail) {
    const bool ok = !::testing::Test::HasFailure();
    std::printf("[criterion %d] %-28s %s%s%s\n", criterion, label, ok ? "PASS" : "FAIL",
                detail.empty() ? "" : "  ", detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), f, a, b, c);
    return buf;
}

TrainConfig end_to_end_train_config() {
    TrainConfig tc;
    tc.epochs = 60;
    tc.batch_size = 32;
    tc.lr = 3e-3;
    tc.weight_decay = 1e-5;
    tc.clip_max_norm = 1.0;
    tc.scheduler_factor = 0.5;
    tc.scheduler_patience = 10;
    tc.early_stop_patience = 20;
    tc.seed = kEndToEndSeed;
    tc.precision = "f32";
    return tc;
}

// Samples, split and score scaling assembled exactly the way a training run
// assembles them: split from the derived stream, scaling fit on train only.
struct EndToEndData {
    std::vector<Sample<float>> samples;
    SplitIndices split;
    NormStats stats;
};

EndToEndData make_end_to_end_data() {
    EndToEndData d;
    auto sd = synth_dataset<float>(kEndToEndSamples, 48, kEndToEndSeed);
    d.samples = std::move(sd.samples);
    Rng split_rng = Rng(kEndToEndSeed).derive(kTagSplit);
    d.split = split_indices(d.samples.size(), 0.2, split_rng);
    d.stats = compute_norm_stats(d.samples, d.split.train);
    apply_score_norm(d.samples, d.stats);
    return d;
}

struct EndToEndResults {
    EvalReport full;      // gate + pyramid
    EvalReport baseline;  // neither
    double train_seconds = 0.0;
};

// Both variants trained once, shared by the end-to-end and ordering checks.
const EndToEndResults& end_to_end() {
    static const EndToEndResults r = [] {
        EndToEndData d = make_end_to_end_data();
        const TrainConfig tc = end_to_end_train_config();
        const AugmentConfig ac = no_augment();
        EndToEndResults out;

        const auto t0 = std::chrono::steady_clock::now();
        Trainer<float> full(make_variant(preset_tiny_config(), 'D'), tc, ac, d.samples,
                            d.split, d.stats);
        full.run();
        out.train_seconds = seconds_since(t0);
        out.full = evaluate(full.model(), full.samples(), full.split().val, full.stats(),
                            tc.batch_size);

        Trainer<float> base(make_variant(preset_tiny_config(), 'A'), tc, ac, d.samples,
                            d.split, d.stats);
        base.run();
        out.baseline = evaluate(base.model(), base.samples(), base.split().val, base.stats(),
                                tc.batch_size);
        return out;
    }();
    return r;
}

}  // namespace

TEST(Acceptance, C01_GradientCorrectness) {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (const char* preset : {"layers", "block", "tiny"}) {
        GradCheckReport rep = gradcheck_preset(preset, 42);
        EXPECT_FALSE(rep.entries.empty()) << preset;
        EXPECT_TRUE(rep.pass(1e-4)) << preset << " worst " << rep.worst();
        worst = std::max(worst, rep.worst());
    }
    const double secs = seconds_since(t0);
    EXPECT_LT(secs, 120.0);
    verdict(1, "gradient correctness", fmt("worst_rel_err=%.3g time=%.1fs", worst, secs));
}

TEST(Acceptance, C02_ShapeLadder) {
    const ModelConfig cfg;  // full-scale defaults
    EXPECT_EQ(cfg.head_input_dim(), 10752u);

    const std::vector<std::array<std::size_t, 3>> want = {
        {64, 56, 56}, {64, 56, 56}, {128, 28, 28}, {256, 14, 14}, {512, 7, 7}};
    EXPECT_EQ(stage_output_shapes(cfg), want);

    Model<float> m(cfg);
    m.init(1);
    Tensor<float> x({1, 3, 224, 224});
    Rng r(2);
    for (std::size_t i = 0; i < x.numel(); ++i)
        x[i] = static_cast<float>(r.uniform(-1.0, 1.0));
    Rng inert(0);
    m.set_train(true);
    m.forward(x, inert);  // seeds the normalization running stats
    m.set_train(false);
    Tensor<float> y = m.forward(x);
    ASSERT_EQ(y.shape(), (std::vector<std::size_t>{1}));
    EXPECT_GT(y[0], 0.0f);
    EXPECT_LT(y[0], 1.0f);
    EXPECT_EQ(m.last_stage_shapes(), want);
    verdict(2, "shape ladder", fmt("pyramid_dim=10752 out=%.4f", y[0]));
}

TEST(Acceptance, C03_MetricOracle) {
    // Hand case first: exact closed-form values.
    const std::vector<double> t{1.0, 2.0, 3.0}, p{1.0, 3.0, 2.0};
    EXPECT_NEAR(mae(p, t), 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(rmse(p, t), std::sqrt(2.0 / 3.0), 1e-12);
    EXPECT_NEAR(pearson(p, t), 0.5, 1e-12);

    // Independent route: uncentered power sums, one pass.
    Rng r(7);
    const std::size_t n = 1000;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
        a[i] = r.uniform(1.0, 5.0);
        b[i] = a[i] + r.uniform(-1.0, 1.0);
    }
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0, sad = 0, sqd = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sa += a[i];
        sb += b[i];
        saa += a[i] * a[i];
        sbb += b[i] * b[i];
        sab += a[i] * b[i];
        sad += std::fabs(a[i] - b[i]);
        sqd += (a[i] - b[i]) * (a[i] - b[i]);
    }
    const double nn = static_cast<double>(n);
    const double ref_mae = sad / nn;
    const double ref_rmse = std::sqrt(sqd / nn);
    const double ref_pc = (nn * sab - sa * sb) /
                          (std::sqrt(nn * saa - sa * sa) * std::sqrt(nn * sbb - sb * sb));
    EXPECT_NEAR(mae(a, b), ref_mae, 1e-9);
    EXPECT_NEAR(rmse(a, b), ref_rmse, 1e-9);
    EXPECT_NEAR(pearson(a, b), ref_pc, 1e-9);
    verdict(3, "metric oracle", fmt("pc_delta=%.2g", std::fabs(pearson(a, b) - ref_pc)));
}

TEST(Acceptance, C04_OptimizerSemantics) {
    // Zero-gradient step is pure decoupled decay: theta -> theta(1 - lr*wd).
    {
        Tensor<double> w({3});
        w[0] = 1.5;
        w[1] = -2.0;
        w[2] = 0.25;
        Parameter<double> p("w", w, true);
        AdamWConfig oc;
        oc.lr = 0.05;
        oc.weight_decay = 0.1;
        AdamW<double> opt({&p}, oc);
        p.grad.fill(0.0);
        opt.step();
        for (std::size_t i = 0; i < 3; ++i)
            EXPECT_NEAR(p.value[i], w[i] * (1.0 - 0.05 * 0.1), 1e-12);
    }
    // Decay zero: bitwise equal to a separately written textbook Adam.
    {
        Tensor<double> init({4});
        for (std::size_t i = 0; i < 4; ++i) init[i] = 0.5 * (static_cast<double>(i) - 1.5);
        Parameter<double> p("w", init, true);
        AdamWConfig oc;
        oc.lr = 1e-2;
        oc.weight_decay = 0.0;
        AdamW<double> opt({&p}, oc);

        Tensor<double> ref = init;
        Tensor<double> m({4}), v({4});
        m.fill(0.0);
        v.fill(0.0);
        // (1.0 - b) computed at run time, not written as a decimal literal:
        // 1.0 - 0.9 and 0.1 are different doubles, and this compare is bitwise.
        const double b1 = 0.9, b2 = 0.999, lr = 1e-2, eps = 1e-8;
        Rng r(11);
        for (int t = 1; t <= 20; ++t) {
            Tensor<double> g({4});
            for (std::size_t i = 0; i < 4; ++i) g[i] = r.uniform(-1.0, 1.0);
            p.grad = g;
            opt.step();
            for (std::size_t i = 0; i < 4; ++i) {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                const double mh = m[i] / (1.0 - std::pow(b1, static_cast<double>(t)));
                const double vh = v[i] / (1.0 - std::pow(b2, static_cast<double>(t)));
                ref[i] -= lr * mh / (std::sqrt(vh) + eps);
            }
        }
        for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(p.value[i], ref[i]);
    }
    // Global norm clip: (3,4) at max 1 becomes (0.6, 0.8).
    {
        Tensor<double> w({2});
        w.fill(0.0);
        Parameter<double> p("w", w, true);
        p.grad[0] = 3.0;
        p.grad[1] = 4.0;
        const double scale = clip_grad_norm<double>({&p}, 1.0);
        EXPECT_NEAR(scale, 0.2, 1e-12);
        EXPECT_NEAR(p.grad[0], 0.6, 1e-12);
        EXPECT_NEAR(p.grad[1], 0.8, 1e-12);
    }
    verdict(4, "optimizer semantics", "decay/adam-bitwise/clip");
}

TEST(Acceptance, C05_ControlFlowTraces) {
    // lr halves on exactly the 10th consecutive non-improving epoch.
    PlateauScheduler sched(0.1, 0.5, 10, 0.0);
    sched.step(1.0);  // sets best
    for (int i = 0; i < 9; ++i) EXPECT_EQ(sched.step(1.0), 0.1) << "epoch " << i;
    EXPECT_EQ(sched.step(1.0), 0.05);

    // Early stop fires on exactly the 20th; snapshot stays the best epoch's.
    EarlyStopper<double> stop(20);
    Tensor<double> state({2});
    state[0] = 3.25;
    state[1] = -1.5;
    auto capture = [&] { return std::vector<Tensor<double>>{state}; };
    EXPECT_FALSE(stop.update(1.0, capture));  // improvement at epoch 1
    const Tensor<double> best_state = state;
    for (int i = 0; i < 19; ++i) {
        state[0] += 1.0;  // mutate live state; snapshot must not follow
        EXPECT_FALSE(stop.update(2.0, capture)) << "epoch " << (i + 2);
    }
    state[0] += 1.0;
    EXPECT_TRUE(stop.update(2.0, capture));
    EXPECT_EQ(stop.best_epoch(), 1u);
    ASSERT_TRUE(stop.has_snapshot());
    ASSERT_EQ(stop.snapshot().size(), 1u);
    EXPECT_EQ(stop.snapshot()[0][0], best_state[0]);
    EXPECT_EQ(stop.snapshot()[0][1], best_state[1]);
    verdict(5, "control-flow traces", "halve@10 stop@20 snapshot-bitwise");
}

TEST(Acceptance, C06_Memorization) {
    auto sd = synth_dataset<float>(8, 48, 3);
    SplitIndices split;
    for (std::size_t i = 0; i < 8; ++i) split.train.push_back(i);
    split.val = split.train;  // memorization check: no held-out data

    TrainConfig tc;
    tc.epochs = 500;
    tc.batch_size = 8;
    tc.lr = 1e-2;
    tc.weight_decay = 0.0;
    tc.clip_max_norm = 1.0;
    tc.scheduler_patience = 1000;
    tc.early_stop_patience = 1000;
    tc.seed = 3;
    tc.precision = "f32";

    const auto t0 = std::chrono::steady_clock::now();
    Trainer<float> t(preset_tiny_config(), tc, no_augment(), sd.samples, split, sd.stats);
    double best = 1e30;
    while (!t.done()) {
        t.step_epoch();
        best = std::min(best, t.history().back().train_loss);
        if (best < 1e-3) break;
    }
    const double secs = seconds_since(t0);
    EXPECT_LT(best, 1e-3);
    EXPECT_LE(t.epoch(), 500u);
    EXPECT_LT(secs, 60.0);
    verdict(6, "memorization",
            fmt("mse=%.2e epochs=%.0f time=%.1fs", best, static_cast<double>(t.epoch()), secs));
}

TEST(Acceptance, C07_SyntheticEndToEnd) {
    const EndToEndResults& r = end_to_end();
    ASSERT_TRUE(r.full.pc.has_value());
    EXPECT_GE(*r.full.pc, 0.85);
    EXPECT_LE(r.full.mae, 0.35);
    EXPECT_LT(r.train_seconds, 600.0);
    verdict(7, "synthetic end-to-end",
            fmt("pc=%.4f mae=%.4f time=%.0fs", r.full.pc.value_or(-1.0), r.full.mae,
                r.train_seconds));
}

TEST(Acceptance, C08_AblationOrdering) {
    const EndToEndResults& r = end_to_end();
    ASSERT_TRUE(r.full.pc.has_value());
    ASSERT_TRUE(r.baseline.pc.has_value());
    EXPECT_GE(*r.full.pc, *r.baseline.pc);
    verdict(8, "ablation ordering",
            fmt("full=%.4f baseline=%.4f", r.full.pc.value_or(-1.0),
                r.baseline.pc.value_or(-1.0)));
}

TEST(Acceptance, C09_DeterminismAndPersistence) {
    ModelConfig mc = preset_gradcheck_config();
    TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 4;
    tc.lr = 1e-3;
    tc.seed = 17;
    tc.precision = "f64";
    tc.scheduler_patience = 50;
    tc.early_stop_patience = 100;
    auto sd = synth_dataset<double>(12, mc.input_size, 17);
    Rng sr = Rng(17).derive(kTagSplit);
    SplitIndices split = split_indices(12, 0.25, sr);

    // Same seed, same history.
    Trainer<double> t1(mc, tc, no_augment(), sd.samples, split, sd.stats);
    Trainer<double> t2(mc, tc, no_augment(), sd.samples, split, sd.stats);
    TrainResult r1 = t1.run();
    TrainResult r2 = t2.run();
    ASSERT_EQ(r1.history.size(), r2.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        EXPECT_EQ(r1.history[i].train_loss, r2.history[i].train_loss);
        EXPECT_EQ(r1.history[i].val_loss, r2.history[i].val_loss);
    }

    // Interrupted run equals straight run, loss for loss, weight for weight.
    Trainer<double> tb(mc, tc, no_augment(), sd.samples, split, sd.stats);
    tb.step_epoch();
    tb.step_epoch();
    const std::string path = ::testing::TempDir() + "/acc_resume.mckp";
    tb.save(path);
    Trainer<double> tr(load_checkpoint<double>(path), sd.samples, split);
    while (!tr.done()) tr.step_epoch();
    tr.restore_best();
    ASSERT_EQ(tr.history().size(), r1.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        EXPECT_EQ(tr.history()[i].train_loss, r1.history[i].train_loss);
        EXPECT_EQ(tr.history()[i].val_loss, r1.history[i].val_loss);
    }
    auto e1 = state_entries(t1.model());
    auto er = state_entries(tr.model());
    ASSERT_EQ(e1.size(), er.size());
    for (std::size_t i = 0; i < e1.size(); ++i)
        for (std::size_t k = 0; k < e1[i].second->numel(); ++k)
            ASSERT_EQ((*e1[i].second)[k], (*er[i].second)[k]) << e1[i].first;
    verdict(9, "determinism+persistence", "history/resume bitwise @f64");
}

TEST(Acceptance, C10_StructuralInvariants) {
    // Residual wiring rule, checked over a mixed-shape model.
    ModelConfig mix;
    mix.stage_channels = {4, 4, 8};
    mix.stage_strides = {1, 2};
    mix.blocks_per_stage = {1, 2};
    mix.expansion_factor = 2;
    mix.pyramid_scales = {1};
    mix.head_widths = {8};
    mix.head_dropout = {0.0};
    mix.input_size = 32;
    Model<double> mm(mix);
    mm.init(5);
    for (auto* b : mm.blocks()) {
        const bool want = b->stride() == 1 && b->in_channels() == b->out_channels();
        EXPECT_EQ(b->has_residual(), want) << b->name();
    }

    // Gate range and non-amplification, observed on live activations.
    Model<double> gm(preset_gradcheck_config());
    gm.init(6);
    Tensor<double> x({2, 3, 32, 32});
    Rng r(8);
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = r.uniform(-1.0, 1.0);
    Rng inert(0);
    gm.set_train(true);
    gm.forward(x, inert);
    std::size_t gates_seen = 0;
    for (auto* b : gm.blocks()) {
        if (!b->uses_gate()) continue;
        ++gates_seen;
        const Tensor<double>& g = b->last_gate();
        const Tensor<double>& pre = b->last_pre_gate();
        const Tensor<double>& post = b->last_gated();
        ASSERT_EQ(g.numel(), pre.numel());
        for (std::size_t i = 0; i < g.numel(); ++i) {
            ASSERT_GT(g[i], 0.0);
            ASSERT_LT(g[i], 1.0);
            ASSERT_LE(std::fabs(post[i]), std::fabs(pre[i]));
        }
    }
    EXPECT_GT(gates_seen, 0u);

    // Parameter accounting at full scale: adding gates to the pyramid
    // variant costs exactly the analytic per-block gate parameter sum.
    const ModelConfig base;
    Model<float> with_gate(make_variant(base, 'D'));
    Model<float> without(make_variant(base, 'B'));
    std::size_t expected = 0;
    for (auto* b : with_gate.blocks())
        expected += MambaBlock<float>::gate_param_count(b->in_channels(),
                                                        base.expansion_factor);
    EXPECT_EQ(with_gate.count_parameters() - without.count_parameters(), expected);
    verdict(10, "structural invariants",
            fmt("gate_params=%.0f", static_cast<double>(expected)));
}
