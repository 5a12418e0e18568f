// Acceptance gate: every release criterion runs at its stated tolerance and
// prints one pass/fail line. The determinism criterion re-runs the numeric
// criteria and compares bit-level summaries.

#include <gtest/gtest.h>

#include <chrono>
#include <iomanip>
#include <map>
#include <sstream>

#include "fsloc/train.hpp"
#include "fsloc/verify.hpp"

using fsloc::ModelConfig;
using fsloc::ShapeClass;
using fsloc::SynthConfig;

namespace {

constexpr std::uint64_t kSeed = 20240817;

struct Criterion {
    bool pass = true;
    std::string summary;  // numeric results only, hex floats, no timings
    double seconds = 0.0;
};

std::map<int, std::string>& summaries() {
    static std::map<int, std::string> s;
    return s;
}

std::string hexd(double v) {
    std::ostringstream os;
    os << std::hexfloat << v;
    return os.str();
}

void announce(int index, const char* name, const Criterion& c) {
    std::cout << "[CRITERION " << index << "] " << (c.pass ? "PASS" : "FAIL") << " - " << name
              << " (" << std::fixed << std::setprecision(1) << c.seconds << " s) "
              << c.summary << "\n";
}

template <typename F>
Criterion timed(F&& body) {
    Criterion c;
    const auto t0 = std::chrono::steady_clock::now();
    body(c);
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return c;
}

std::string suite_summary(const fsloc::verify::SuiteResult& s) {
    return s.name + "=" + hexd(s.max_err) + "/" + std::to_string(s.cases) +
           (s.pass ? "" : "[FAIL:" + s.detail + "]");
}

// ---------------------------------------------------------------------------

Criterion criterion1() {
    return timed([](Criterion& c) {
        const auto suite = fsloc::verify::conv_oracle_suite(kSeed, 200);
        c.pass = suite.pass;
        c.summary = suite_summary(suite);
    });
}

Criterion criterion2() {
    return timed([](Criterion& c) {
        const auto suite = fsloc::verify::degenerate_reduction_suite(kSeed, 50);
        c.pass = suite.pass;
        c.summary = suite_summary(suite);
    });
}

Criterion criterion3() {
    return timed([](Criterion& c) {
        const auto tensor = fsloc::verify::tensor_grad_suite(kSeed, 20);
        const auto conv = fsloc::verify::conv_grad_suite(kSeed, 20);
        ModelConfig desk = ModelConfig::desk();  // C=32, 16x16 feature grid
        const auto pipeline = fsloc::verify::pipeline_grad_suite(kSeed, 3, desk);
        c.pass = tensor.pass && conv.pass && pipeline.pass;
        c.summary = suite_summary(tensor) + " " + suite_summary(conv) + " " +
                    suite_summary(pipeline);
    });
}

Criterion criterion4() {
    return timed([](Criterion& c) {
        const auto suite = fsloc::verify::self_query_suite(kSeed, 1000);
        c.pass = suite.pass;
        c.summary = suite_summary(suite);
    });
}

Criterion criterion5() {
    return timed([](Criterion& c) {
        const auto suite = fsloc::verify::locmap_roundtrip_suite(kSeed, 100);
        c.pass = suite.pass;
        c.summary = suite_summary(suite);
        // the decoder constants come from config verbatim
        c.pass = c.pass && fsloc::DecoderConfig{}.threshold == 100.0 / 255.0 &&
                 fsloc::DecoderConfig::dense().threshold == 40.0 / 255.0 &&
                 fsloc::DecoderConfig::sparse().threshold == 60.0 / 255.0 &&
                 fsloc::DecoderConfig{}.floor == 0.06;
    });
}

Criterion criterion6() {
    return timed([](Criterion& c) {
        const auto suite = fsloc::verify::matching_oracle_suite(kSeed, 500);
        c.pass = suite.pass;
        c.summary = suite_summary(suite);
    });
}

Criterion criterion7() {
    return timed([](Criterion& c) {
        const auto suite = fsloc::verify::metric_formula_suite(kSeed, 1000);
        c.pass = suite.pass;
        c.summary = suite_summary(suite);
    });
}

// ---------------------------------------------------------------------------
// The desk-scale one-shot task: 64x64 canvases, 32 training images of discs
// and squares, 8 held-out images of the disjoint triangle class, <= 300
// optimizer steps with the reference optimizer shape scaled to desk lr.
// ---------------------------------------------------------------------------

struct DeskOutcome {
    double train_f1 = 0.0;
    double novel_f1 = 0.0;
    double final_loss = 0.0;
};

DeskOutcome run_desk_task(std::uint64_t seed, bool use_sq, bool use_dfa) {
    SynthConfig scenes;  // 64x64 canvas defaults
    const auto train = fsloc::generate_scenes(scenes, {ShapeClass::Disc, ShapeClass::Square},
                                              32, seed * 1000 + 1, fsloc::Split::Train);
    const auto novel = fsloc::generate_scenes(scenes, {ShapeClass::Triangle}, 8,
                                              seed * 1000 + 777, fsloc::Split::Test);

    ModelConfig cfg = ModelConfig::desk();
    cfg.use_sq = use_sq;
    cfg.use_dc = use_dfa;
    cfg.use_ccdc = use_dfa;
    fsloc::Model<double> model(cfg);
    model.init(seed);

    fsloc::TrainConfig tc;
    tc.epochs = 9;  // 9 * 32 = 288 steps
    tc.lr = 2e-5 * 100.0;
    tc.lr_decay = 0.25;
    tc.lr_decay_every = 80;
    tc.seed = seed;

    const auto result =
        fsloc::train_model<double>(model, train, {}, tc, fsloc::EvalOptions{}, 10.0);

    fsloc::EvalOptions opts;
    opts.sigmas = {10.0};
    DeskOutcome out;
    out.train_f1 = fsloc::evaluate_model(model, train, opts).blocks[0].rates.f1;
    out.novel_f1 = fsloc::evaluate_model(model, novel, opts).blocks[0].rates.f1;
    out.final_loss = result.log.back().mean_loss;
    return out;
}

Criterion criterion8() {
    return timed([](Criterion& c) {
        const auto outcome = run_desk_task(kSeed, true, true);
        c.pass = outcome.train_f1 >= 0.90 && outcome.novel_f1 >= 0.70;
        c.summary = "train_f1=" + hexd(outcome.train_f1) +
                    " novel_f1=" + hexd(outcome.novel_f1) +
                    " final_loss=" + hexd(outcome.final_loss);
    });
}

Criterion criterion9() {
    return timed([](Criterion& c) {
        double full = 0.0, no_sq = 0.0, no_dfa = 0.0;
        for (std::uint64_t s = 0; s < 3; ++s) {
            full += run_desk_task(kSeed + s, true, true).novel_f1;
            no_sq += run_desk_task(kSeed + s, false, true).novel_f1;
            no_dfa += run_desk_task(kSeed + s, true, false).novel_f1;
        }
        full /= 3.0;
        no_sq /= 3.0;
        no_dfa /= 3.0;
        c.pass = full >= no_sq && full >= no_dfa;
        c.summary = "full=" + hexd(full) + " no_sq=" + hexd(no_sq) +
                    " no_dfa=" + hexd(no_dfa);
    });
}

}  // namespace

TEST(Acceptance, C01_KernelOracleEquivalence) {
    const auto c = criterion1();
    announce(1, "kernel oracle equivalence (5 ops, 200 instances, 1e-6)", c);
    summaries()[1] = c.summary;
    EXPECT_TRUE(c.pass) << c.summary;
    EXPECT_LT(c.seconds, 120.0);
}

TEST(Acceptance, C02_DegenerateReductions) {
    const auto c = criterion2();
    announce(2, "degenerate reductions exact to 1e-12", c);
    summaries()[2] = c.summary;
    EXPECT_TRUE(c.pass) << c.summary;
}

TEST(Acceptance, C03_GradientSuite) {
    const auto c = criterion3();
    announce(3, "finite-difference gradients (ops + desk pipeline, 1e-4)", c);
    summaries()[3] = c.summary;
    EXPECT_TRUE(c.pass) << c.summary;
    EXPECT_LT(c.seconds, 300.0);
}

TEST(Acceptance, C04_SelfQueryProperties) {
    const auto c = criterion4();
    announce(4, "self-query bounds, scale invariance, self-similarity", c);
    summaries()[4] = c.summary;
    EXPECT_TRUE(c.pass) << c.summary;
}

TEST(Acceptance, C05_LocationMapRoundtrip) {
    const auto c = criterion5();
    announce(5, "location-map encode/decode roundtrip with paper thresholds", c);
    summaries()[5] = c.summary;
    EXPECT_TRUE(c.pass) << c.summary;
}

TEST(Acceptance, C06_MatchingOracle) {
    const auto c = criterion6();
    announce(6, "gated matching equals brute-force optimum (500 trials)", c);
    summaries()[6] = c.summary;
    EXPECT_TRUE(c.pass) << c.summary;
}

TEST(Acceptance, C07_MetricFormulas) {
    const auto c = criterion7();
    announce(7, "metric formula fixtures and RMSE >= MAE fuzz", c);
    summaries()[7] = c.summary;
    EXPECT_TRUE(c.pass) << c.summary;
}

TEST(Acceptance, C08_DeskScaleLearning) {
    const auto c = criterion8();
    announce(8, "one-shot desk task: train F1 >= 0.90, novel-class F1 >= 0.70", c);
    summaries()[8] = c.summary;
    EXPECT_TRUE(c.pass) << c.summary;
    EXPECT_LT(c.seconds, 600.0);
}

TEST(Acceptance, C09_AblationDirection) {
    const auto c = criterion9();
    announce(9, "full model >= no-SQ and >= no-DFA on novel-class F1 (3 seeds)", c);
    EXPECT_TRUE(c.pass) << c.summary;
}

TEST(Acceptance, C10_Determinism) {
    const auto c = timed([](Criterion& c) {
        const Criterion reruns[8] = {criterion1(), criterion2(), criterion3(), criterion4(),
                                     criterion5(), criterion6(), criterion7(), criterion8()};
        for (int i = 0; i < 8; ++i) {
            if (summaries()[i + 1] != reruns[i].summary) {
                c.pass = false;
                c.summary += " criterion" + std::to_string(i + 1) + " diverged";
            }
        }
        if (c.pass) c.summary = "criteria 1-8 bit-identical across two runs";
    });
    announce(10, "determinism of criteria 1-8 summaries", c);
    EXPECT_TRUE(c.pass) << c.summary;
}
