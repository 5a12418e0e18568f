#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <set>

#include "fsloc/checkpoint.hpp"
#include "fsloc/model.hpp"
#include "fsloc/reference.hpp"
#include "fsloc/verify.hpp"

using fsloc::Box;
using fsloc::Model;
using fsloc::ModelConfig;
using fsloc::Rng;
using fsloc::Tensor;

namespace {

Model<double> desk_model(std::uint64_t seed = 1) {
    Model<double> model(ModelConfig::desk());
    model.init(seed);
    return model;
}

Tensor<double> random_image(Rng& rng, int r) {
    auto img = Tensor<double>::zeros({1, 3, r, r});
    for (long long i = 0; i < img.numel(); ++i) img.data_mut()[i] = rng.uniform(0.0, 1.0);
    return img;
}

}  // namespace

TEST(BackboneTest, DeskShapes) {
    auto model = desk_model();
    Rng rng(2);
    const auto fq = model.extract_features(random_image(rng, 64));
    EXPECT_EQ(fq.shape(), (fsloc::Shape{1, 32, 16, 16}));
}

TEST(BackboneTest, DeterministicForward) {
    auto model = desk_model();
    Rng rng(3);
    const auto img = random_image(rng, 64);
    const auto a = model.extract_features(img);
    const auto b = model.extract_features(img);
    for (long long i = 0; i < a.numel(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
}

TEST(BackboneTest, RejectsIndivisibleResolution) {
    auto model = desk_model();
    auto img = Tensor<double>::zeros({1, 3, 66, 66});
    EXPECT_THROW(model.extract_features(img), fsloc::ValueError);
}

TEST(BackboneTest, ReferenceConfigDimsDocumented) {
    const auto cfg = ModelConfig::reference();
    EXPECT_EQ(cfg.image_size, 512);
    EXPECT_EQ(cfg.channels, 256);
    EXPECT_EQ(cfg.concat_width(), 1792);
    EXPECT_EQ(cfg.image_size / cfg.feature_stride, 128);
    cfg.validate();
}

TEST(BackboneTest, ReferenceScaleFeatureShape) {
    // full-scale run of the feature extractor: 512x512 in, 256x128x128 out
    Model<float> model(ModelConfig::reference());
    model.init(4);
    Rng rng(4);
    auto img = Tensor<float>::zeros({1, 3, 512, 512});
    for (long long i = 0; i < img.numel(); ++i)
        img.data_mut()[i] = static_cast<float>(rng.uniform(0.0, 1.0));
    const auto t0 = std::chrono::steady_clock::now();
    const auto fq = model.extract_features(img);
    const auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0);
    EXPECT_EQ(fq.shape(), (fsloc::Shape{1, 256, 128, 128}));
    std::cout << "reference extract_features took " << secs.count() << " s\n";
}

TEST(CropSupportTest, FullImageBoxPoolsEverything) {
    auto model = desk_model();
    Rng rng(5);
    const auto fq = model.extract_features(random_image(rng, 64));
    const auto fs = model.crop_support(fq, Box{0.0, 0.0, 64.0, 64.0});
    const auto want = fsloc::adaptive_avg_pool(fq, 3, 3);
    EXPECT_LE(fsloc::reference::max_abs_diff(fs, want), 1e-12);
}

TEST(CropSupportTest, ExactThreeByThreeWindowIsIdentity) {
    auto model = desk_model();
    Rng rng(6);
    const auto fq = model.extract_features(random_image(rng, 64));
    // a 12x12-pixel box at stride 4 covers exactly 3x3 feature cells
    const auto fs = model.crop_support(fq, Box{16.0, 20.0, 28.0, 32.0});
    const auto window = fsloc::crop_spatial(fq, 5, 8, 4, 7);
    EXPECT_LE(fsloc::reference::max_abs_diff(fs, window), 1e-12);
}

TEST(CropSupportTest, NarrowBoxExpandsByRoundingRule) {
    auto model = desk_model();
    Rng rng(7);
    const auto fq = model.extract_features(random_image(rng, 64));
    // width-5 box at stride 4: floor(0/4)=0, ceil(5/4)=2 -> two columns
    const auto fs = model.crop_support(fq, Box{0.0, 0.0, 5.0, 5.0});
    EXPECT_EQ(fs.shape(), (fsloc::Shape{1, 32, 3, 3}));
    // bin-average oracle over the 2x2 feature window
    const auto window = fsloc::crop_spatial(fq, 0, 2, 0, 2);
    for (int c = 0; c < 32; ++c) {
        const double whole = fsloc::reference::window_average(window, 0, c, 0, 2, 0, 2);
        EXPECT_NEAR(fs(0, c, 1, 1), whole, 1e-12);
        EXPECT_NEAR(fs(0, c, 0, 0), window(0, c, 0, 0), 1e-12);
    }
}

TEST(CropSupportTest, DegenerateBoxRejectedWithDiagnostic) {
    auto model = desk_model();
    Rng rng(8);
    const auto fq = model.extract_features(random_image(rng, 64));
    try {
        model.crop_support(fq, Box{10.0, 10.0, 10.0, 12.0});
        FAIL() << "expected rejection";
    } catch (const fsloc::ValueError& e) {
        EXPECT_NE(std::string(e.what()).find("10"), std::string::npos);
    }
    EXPECT_THROW(model.crop_support(fq, Box{60.0, 0.0, 70.0, 10.0}), fsloc::ValueError);
}

TEST(DfaTest, ShapesPreserved) {
    auto model = desk_model();
    Rng rng(9);
    const auto fq = model.extract_features(random_image(rng, 64));
    const auto fs = model.crop_support(fq, Box{8.0, 8.0, 24.0, 24.0});
    const auto branches = model.dfa_forward(fq, fs);
    EXPECT_EQ(branches.query_deform.shape(), fq.shape());
    EXPECT_EQ(branches.query_grad.shape(), fq.shape());
    EXPECT_EQ(branches.support_deform.shape(), fs.shape());
    EXPECT_EQ(branches.support_grad.shape(), fs.shape());
}

TEST(DfaTest, SharedLayersAreOrderIndependent) {
    auto model = desk_model();
    Rng rng(10);
    const auto fq = model.extract_features(random_image(rng, 64));
    const auto fs = model.crop_support(fq, Box{8.0, 8.0, 24.0, 24.0});
    const auto first = model.dfa_forward(fq, fs);
    const auto second = model.dfa_forward(fq, fs);
    EXPECT_LE(fsloc::reference::max_abs_diff(first.query_deform, second.query_deform), 0.0);
    EXPECT_LE(fsloc::reference::max_abs_diff(first.support_grad, second.support_grad), 0.0);
}

TEST(ModelTest, ParameterCensusCountsSharedLayersOnce) {
    auto model = desk_model();
    const auto params = model.parameters();
    std::set<const void*> ids;
    std::set<std::string> names;
    for (const auto& p : params) {
        EXPECT_TRUE(ids.insert(p.tensor.id()).second) << p.name << " duplicated";
        EXPECT_TRUE(names.insert(p.name).second);
        EXPECT_TRUE(p.tensor.requires_grad()) << p.name;
    }
}

TEST(ModelTest, AblationSwapsOperators) {
    ModelConfig plain = ModelConfig::desk();
    plain.use_dc = false;
    plain.use_ccdc = false;
    Model<double> baseline(plain);
    baseline.init(1);
    auto has = [](const Model<double>& m, const std::string& name) {
        for (const auto& p : m.parameters())
            if (p.name == name) return true;
        return false;
    };
    EXPECT_TRUE(has(baseline, "dfa.dc_replacement.weight"));
    EXPECT_TRUE(has(baseline, "dfa.ccdc_replacement.weight"));
    EXPECT_FALSE(has(baseline, "dfa.dc.weight"));
    EXPECT_FALSE(has(baseline, "dfa.ccdc.weight"));

    auto full = desk_model();
    EXPECT_TRUE(has(full, "dfa.dc.weight"));
    EXPECT_TRUE(has(full, "dfa.dc_offset.weight"));
    EXPECT_TRUE(has(full, "dfa.ccdc.weight"));

    // the projection dims stay identical; only the operator changes
    Rng rng(11);
    const auto img = random_image(rng, 64);
    EXPECT_EQ(baseline.predict(img, Box{8, 8, 24, 24}).shape(),
              full.predict(img, Box{8, 8, 24, 24}).shape());
}

TEST(SimilarityTest, ShapeAndZeroBranch) {
    auto model = desk_model();
    Rng rng(12);
    const auto fq = model.extract_features(random_image(rng, 64));
    const auto fs = model.crop_support(fq, Box{8.0, 8.0, 24.0, 24.0});
    auto branches = model.dfa_forward(fq, fs);
    const auto sim = model.similarity_forward(branches);
    EXPECT_EQ(sim.shape(), fq.shape());

    // zero gradient branch: similarity equals the deformation correlation
    branches.query_grad = Tensor<double>::zeros(branches.query_grad.shape());
    branches.support_grad = Tensor<double>::zeros(branches.support_grad.shape());
    const auto single = model.similarity_forward(branches);
    const auto want = fsloc::corr2d_depthwise(branches.query_deform, branches.support_deform);
    EXPECT_LE(fsloc::reference::max_abs_diff(single, want), 1e-12);
}

TEST(SelfQueryTest, IdentityInConvSelfSimilarity) {
    auto model = desk_model();
    auto& in_conv = model.sq_in_conv_mut();
    std::fill_n(in_conv.weights.data_mut(), in_conv.weights.numel(), 0.0);
    for (int c = 0; c < 32; ++c)
        in_conv.weights.data_mut()[in_conv.weights.index4(c, c, 0, 0)] = 1.0;
    Rng rng(13);
    const auto fq = model.extract_features(random_image(rng, 64));
    const auto w = model.self_query_weights(fq, fq);
    EXPECT_EQ(w.shape(), (fsloc::Shape{1, 1, 16, 16}));
    for (long long i = 0; i < w.numel(); ++i) EXPECT_NEAR(w.data()[i], 1.0, 1e-12);
}

TEST(SelfQueryTest, ScaleInvarianceAndBounds) {
    auto model = desk_model();
    Rng rng(14);
    const auto fq = model.extract_features(random_image(rng, 64));
    const auto fs = model.crop_support(fq, Box{8.0, 8.0, 24.0, 24.0});
    const auto sim = model.similarity_forward(model.dfa_forward(fq, fs));
    const auto w1 = model.self_query_weights(sim, fq);
    const auto w2 = model.self_query_weights(fsloc::scale(sim, 7.3), fq);
    EXPECT_LE(fsloc::reference::max_abs_diff(w1, w2), 1e-12);
    for (long long i = 0; i < w1.numel(); ++i) EXPECT_LE(std::abs(w1.data()[i]), 1.0 + 1e-12);

    const auto enhanced = model.self_query(sim, fq);
    EXPECT_EQ(enhanced.shape(), sim.shape());
    EXPECT_THROW(model.self_query(fs, fq), fsloc::ShapeError);
}

TEST(SelfQueryTest, RawQueryResidualSwitch) {
    ModelConfig cfg = ModelConfig::desk();
    cfg.sq_add_raw_query = true;
    Model<double> model(cfg);
    model.init(15);
    Rng rng(15);
    const auto fq = model.extract_features(random_image(rng, 64));
    const auto fs = model.crop_support(fq, Box{8.0, 8.0, 24.0, 24.0});
    const auto sim = model.similarity_forward(model.dfa_forward(fq, fs));
    const auto enhanced = model.self_query(sim, fq);
    EXPECT_EQ(enhanced.shape(), sim.shape());
}

TEST(SelfQueryTest, DisabledModulePassesThrough) {
    ModelConfig cfg = ModelConfig::desk();
    cfg.use_sq = false;
    Model<double> model(cfg);
    model.init(16);
    Rng rng(16);
    const auto fq = model.extract_features(random_image(rng, 64));
    const auto fs = model.crop_support(fq, Box{8.0, 8.0, 24.0, 24.0});
    const auto sim = model.similarity_forward(model.dfa_forward(fq, fs));
    const auto enhanced = model.self_query(sim, fq);
    EXPECT_EQ(enhanced.id(), sim.id());
}

TEST(HeadTest, DeskShapeAndUnreachableTarget) {
    auto model = desk_model();
    Rng rng(17);
    auto x = Tensor<double>::randn({1, 32, 16, 16}, rng);
    const auto map = model.regression_head(x, 64, 64);
    EXPECT_EQ(map.shape(), (fsloc::Shape{1, 1, 64, 64}));
    EXPECT_THROW(model.regression_head(x, 48, 48), fsloc::ValueError);
    EXPECT_THROW(model.regression_head(x, 128, 128), fsloc::ValueError);
}

TEST(ModelTest, EndToEndForwardShape) {
    auto model = desk_model();
    Rng rng(18);
    const auto img = random_image(rng, 64);
    const auto features = model.forward(img, Box{8.0, 8.0, 24.0, 24.0});
    EXPECT_EQ(features.query.shape(), (fsloc::Shape{1, 32, 16, 16}));
    EXPECT_EQ(features.support.shape(), (fsloc::Shape{1, 32, 3, 3}));
    EXPECT_EQ(features.similarity.shape(), (fsloc::Shape{1, 32, 16, 16}));
    EXPECT_EQ(features.enhanced.shape(), (fsloc::Shape{1, 32, 16, 16}));
    EXPECT_EQ(features.prediction.shape(), (fsloc::Shape{1, 1, 64, 64}));
}

TEST(ModelTest, PipelineGradientSuite) {
    const auto result = fsloc::verify::pipeline_grad_suite(31, 3);
    EXPECT_TRUE(result.pass) << result.detail;
    EXPECT_LE(result.max_err, 1e-4);
}

TEST(CheckpointTest, RoundTripsBitExactly) {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "fsloc_ckpt";
    fs::create_directories(dir);
    const std::string path = (dir / "model.bin").string();

    Model<float> a(ModelConfig::desk());
    a.init(77);
    fsloc::save_checkpoint<float>(path, a.parameters());

    Model<float> b(ModelConfig::desk());
    b.init(99);
    fsloc::load_checkpoint<float>(path, b.parameters());
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        const auto& pa = a.parameters()[i].tensor;
        const auto& pb = b.parameters()[i].tensor;
        for (long long j = 0; j < pa.numel(); ++j)
            EXPECT_EQ(pa.data()[j], pb.data()[j]);  // bit-exact at 32-bit
    }

    // a second save of the loaded model produces identical bytes
    const std::string path2 = (dir / "model2.bin").string();
    fsloc::save_checkpoint<float>(path2, b.parameters());
    std::ifstream fa(path, std::ios::binary), fb(path2, std::ios::binary);
    const std::string bytes_a((std::istreambuf_iterator<char>(fa)),
                              std::istreambuf_iterator<char>());
    const std::string bytes_b((std::istreambuf_iterator<char>(fb)),
                              std::istreambuf_iterator<char>());
    EXPECT_EQ(bytes_a, bytes_b);
    fs::remove_all(dir);
}

TEST(CheckpointTest, ArchitectureMismatchNamesTheShapeDiff) {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "fsloc_ckpt_diff";
    fs::create_directories(dir);
    const std::string path = (dir / "model.bin").string();

    Model<double> a(ModelConfig::desk());
    a.init(1);
    fsloc::save_checkpoint<double>(path, a.parameters());

    ModelConfig other = ModelConfig::desk();
    other.channels = 16;
    other.stage_widths = {8, 12, 16};
    Model<double> b(other);
    b.init(1);
    try {
        fsloc::load_checkpoint<double>(path, b.parameters());
        FAIL() << "expected shape diff";
    } catch (const fsloc::IoError& e) {
        EXPECT_NE(std::string(e.what()).find("shape"), std::string::npos);
    }
    fs::remove_all(dir);
}
