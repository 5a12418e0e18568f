// fsloc: few-shot object localization workbench.
//
// Subcommands: train, eval, predict, verify, synth. Options mirror config
// keys one-to-one; a --config file provides defaults and explicit flags win.
// Every run writes its fully resolved configuration next to its outputs.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "fsloc/checkpoint.hpp"
#include "fsloc/data.hpp"
#include "fsloc/train.hpp"
#include "fsloc/verify.hpp"

namespace fs = std::filesystem;

namespace {

struct Options {
    std::string out_dir = "out";
    std::string data_root;
    std::string checkpoint;
    std::uint64_t seed = 0;
    std::string precision = "float64";

    // model
    int image_size = 64;
    int channels = 32;
    std::vector<int> stage_widths = {16, 24, 32};
    std::vector<int> head_widths;
    double leaky_slope = 0.01;
    double theta = 0.5;
    bool no_dc = false;
    bool no_ccdc = false;
    bool no_sq = false;
    bool sq_add_raw_query = false;

    // training
    int epochs = 200;
    double lr = 2e-5;
    double lr_decay = 0.25;
    int lr_decay_every = 80;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    // location-map encoder
    std::string encode_kind = "fidt";
    double encode_alpha = 0.02;
    double encode_beta = 0.75;
    double encode_c0 = 1.0;
    double gaussian_sigma = 2.0;

    // decoder
    std::string decoder_preset = "default";
    double decoder_threshold = 100.0 / 255.0;
    double decoder_floor = 0.06;
    bool decoder_absolute = false;

    // evaluation
    std::vector<double> sigmas = {5.0, 10.0};
    int jobs = 1;
    bool dump_maps = false;
    bool dump_points = false;
    std::string eval_split = "test";

    // synthetic data (canvas follows --image-size)
    int train_images = 32;
    int val_images = 8;
    int test_images = 8;
    int min_count = 3;
    int max_count = 6;
    double min_radius = 3.5;
    double max_radius = 5.5;
    double min_center_dist = 12.0;
    double noise = 0.02;
    std::vector<std::string> train_classes = {"disc", "square"};
    std::vector<std::string> test_classes = {"triangle"};

    // dataset splitting
    std::string split_protocol = "class-disjoint";
    double train_frac = 0.6;
    double val_frac = 0.2;
};

void register_options(CLI::App* cmd, Options& o) {
    cmd->set_config("--config", "", "plain-text key=value configuration file");
    cmd->add_option("--out", o.out_dir, "output directory");
    cmd->add_option("--data-root", o.data_root,
                    "dataset directory holding images and annotations.json; "
                    "synthetic episodes are generated when unset");
    cmd->add_option("--checkpoint", o.checkpoint, "checkpoint file");
    cmd->add_option("--seed", o.seed, "RNG seed");
    cmd->add_option("--precision", o.precision, "float32 or float64")
        ->check(CLI::IsMember({"float32", "float64"}));

    cmd->add_option("--image-size", o.image_size, "input resolution R");
    cmd->add_option("--channels", o.channels, "projection width C");
    cmd->add_option("--stage-widths", o.stage_widths, "backbone stage widths")->expected(3);
    cmd->add_option("--head-widths", o.head_widths, "regression head widths");
    cmd->add_option("--leaky-slope", o.leaky_slope, "leaky relu slope");
    cmd->add_option("--theta", o.theta, "gradient/intensity balance in [0,1]");
    cmd->add_flag("--no-dc", o.no_dc, "replace the deformation branch with a vanilla conv");
    cmd->add_flag("--no-ccdc", o.no_ccdc, "replace the gradient branch with a vanilla conv");
    cmd->add_flag("--no-sq", o.no_sq, "bypass the self-query module");
    cmd->add_flag("--sq-add-raw-query", o.sq_add_raw_query,
                  "add self-query weights to the raw query features");

    cmd->add_option("--epochs", o.epochs, "training epochs");
    cmd->add_option("--lr", o.lr, "learning rate");
    cmd->add_option("--lr-decay", o.lr_decay, "lr decay factor");
    cmd->add_option("--lr-decay-every", o.lr_decay_every, "epochs between lr decays");
    cmd->add_option("--beta1", o.beta1, "first moment coefficient");
    cmd->add_option("--beta2", o.beta2, "second moment coefficient");
    cmd->add_option("--adam-eps", o.adam_eps, "optimizer epsilon");

    cmd->add_option("--encode", o.encode_kind, "GT map encoder: fidt or gaussian")
        ->check(CLI::IsMember({"fidt", "gaussian"}));
    cmd->add_option("--encode-alpha", o.encode_alpha, "inverse-distance alpha");
    cmd->add_option("--encode-beta", o.encode_beta, "inverse-distance beta");
    cmd->add_option("--encode-c0", o.encode_c0, "inverse-distance additive constant");
    cmd->add_option("--gaussian-sigma", o.gaussian_sigma, "gaussian encoder sigma");

    cmd->add_option("--decoder-preset", o.decoder_preset,
                    "decoder threshold preset: default (100/255), dense (40/255), "
                    "sparse (60/255), custom")
        ->check(CLI::IsMember({"default", "dense", "sparse", "custom"}));
    cmd->add_option("--decoder-threshold", o.decoder_threshold,
                    "T_a used when --decoder-preset=custom");
    cmd->add_option("--decoder-floor", o.decoder_floor, "absolute candidate floor");
    cmd->add_flag("--decoder-absolute", o.decoder_absolute,
                  "treat T_a as an absolute cutoff instead of relative to the map max");

    cmd->add_option("--sigmas", o.sigmas, "matching thresholds in pixels");
    cmd->add_option("--jobs", o.jobs, "parallel evaluation workers");
    cmd->add_flag("--dump-maps", o.dump_maps, "write predicted maps as 16-bit PGM");
    cmd->add_flag("--dump-points", o.dump_points, "write decoded points as CSV");
    cmd->add_option("--eval-split", o.eval_split, "split to evaluate: train, val or test")
        ->check(CLI::IsMember({"train", "val", "test"}));

    cmd->add_option("--train-images", o.train_images, "synthetic training images");
    cmd->add_option("--val-images", o.val_images, "synthetic validation images");
    cmd->add_option("--test-images", o.test_images, "synthetic test images");
    cmd->add_option("--min-count", o.min_count, "min objects per scene");
    cmd->add_option("--max-count", o.max_count, "max objects per scene");
    cmd->add_option("--min-radius", o.min_radius, "min object radius");
    cmd->add_option("--max-radius", o.max_radius, "max object radius");
    cmd->add_option("--min-center-dist", o.min_center_dist, "min distance between centers");
    cmd->add_option("--noise", o.noise, "background noise amplitude");
    cmd->add_option("--train-classes", o.train_classes, "synthetic training classes");
    cmd->add_option("--test-classes", o.test_classes, "synthetic held-out classes");

    cmd->add_option("--split-protocol", o.split_protocol,
                    "dataset split protocol: class-disjoint or random")
        ->check(CLI::IsMember({"class-disjoint", "random"}));
    cmd->add_option("--train-frac", o.train_frac, "training fraction");
    cmd->add_option("--val-frac", o.val_frac, "validation fraction");
}

fsloc::ShapeClass parse_class(const std::string& name) {
    if (name == "disc") return fsloc::ShapeClass::Disc;
    if (name == "square") return fsloc::ShapeClass::Square;
    if (name == "triangle") return fsloc::ShapeClass::Triangle;
    throw fsloc::ValueError("unknown shape class: " + name);
}

fsloc::ModelConfig model_config(const Options& o) {
    fsloc::ModelConfig cfg;
    cfg.image_size = o.image_size;
    cfg.channels = o.channels;
    cfg.stage_widths = o.stage_widths;
    cfg.head_widths = o.head_widths;
    cfg.leaky_slope = o.leaky_slope;
    cfg.theta = o.theta;
    cfg.use_dc = !o.no_dc;
    cfg.use_ccdc = !o.no_ccdc;
    cfg.use_sq = !o.no_sq;
    cfg.sq_add_raw_query = o.sq_add_raw_query;
    cfg.validate();
    return cfg;
}

fsloc::EncodeConfig encode_config(const Options& o) {
    fsloc::EncodeConfig cfg;
    cfg.kind = o.encode_kind == "gaussian" ? fsloc::EncodeKind::Gaussian
                                           : fsloc::EncodeKind::InverseDistance;
    cfg.alpha = o.encode_alpha;
    cfg.beta = o.encode_beta;
    cfg.c0 = o.encode_c0;
    cfg.gaussian_sigma = o.gaussian_sigma;
    return cfg;
}

fsloc::DecoderConfig decoder_config(const Options& o) {
    fsloc::DecoderConfig cfg;
    if (o.decoder_preset == "dense")
        cfg = fsloc::DecoderConfig::dense();
    else if (o.decoder_preset == "sparse")
        cfg = fsloc::DecoderConfig::sparse();
    else if (o.decoder_preset == "custom")
        cfg.threshold = o.decoder_threshold;
    cfg.floor = o.decoder_floor;
    cfg.relative = !o.decoder_absolute;
    cfg.validate();
    return cfg;
}

struct DataSplits {
    std::vector<fsloc::Episode> train, val, test;
};

DataSplits assemble_dataset(const Options& o) {
    DataSplits splits;
    if (!o.data_root.empty()) {
        auto report = fsloc::load_annotations(o.data_root, o.image_size);
        for (const auto& d : report.diagnostics) std::cerr << "loader: " << d << "\n";
        if (report.skipped > 0)
            std::cerr << "loader: skipped " << report.skipped << " bad record(s), kept "
                      << report.episodes.size() << "\n";
        const auto protocol = o.split_protocol == "random"
                                  ? fsloc::SplitProtocol::RandomByImage
                                  : fsloc::SplitProtocol::ClassDisjoint;
        auto result = fsloc::split_episodes(std::move(report.episodes), protocol, o.train_frac,
                                            o.val_frac, o.seed);
        splits.train = std::move(result.train);
        splits.val = std::move(result.val);
        splits.test = std::move(result.test);
        return splits;
    }

    fsloc::SynthConfig synth;
    synth.canvas = o.image_size;
    synth.min_count = o.min_count;
    synth.max_count = o.max_count;
    synth.min_radius = o.min_radius;
    synth.max_radius = o.max_radius;
    synth.min_center_dist = o.min_center_dist;
    synth.noise = o.noise;
    std::vector<fsloc::ShapeClass> train_classes, test_classes;
    for (const auto& c : o.train_classes) train_classes.push_back(parse_class(c));
    for (const auto& c : o.test_classes) test_classes.push_back(parse_class(c));
    splits.train = fsloc::generate_scenes(synth, train_classes, o.train_images, o.seed + 1,
                                          fsloc::Split::Train);
    splits.val = fsloc::generate_scenes(synth, train_classes, o.val_images, o.seed + 100001,
                                        fsloc::Split::Val);
    splits.test = fsloc::generate_scenes(synth, test_classes, o.test_images, o.seed + 200001,
                                         fsloc::Split::Test);
    return splits;
}

void write_resolved_config(const CLI::App& cmd, const std::string& out_dir) {
    std::ofstream out(out_dir + "/resolved_config.txt");
    out << cmd.config_to_str(true, true);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw fsloc::IoError("cannot write " + path);
    out << text;
}

template <typename T>
void dump_eval_outputs(const Options& o, const std::vector<fsloc::EvalOutput>& outputs) {
    if (o.dump_points) {
        fs::create_directories(o.out_dir + "/points");
        for (const auto& out : outputs) {
            std::ofstream csv(o.out_dir + "/points/" + out.id + ".csv");
            csv << "image_id,x,y\n" << std::setprecision(10);
            for (const auto& p : out.points)
                csv << out.id << "," << p.x << "," << p.y << "\n";
        }
    }
    if (o.dump_maps) {
        fs::create_directories(o.out_dir + "/maps");
        for (const auto& out : outputs)
            fsloc::write_pgm16(o.out_dir + "/maps/" + out.id + ".pgm", out.map);
    }
}

template <typename T>
int run_train(const CLI::App& cmd, const Options& o) {
    fs::create_directories(o.out_dir);
    write_resolved_config(cmd, o.out_dir);
    const auto splits = assemble_dataset(o);
    if (splits.train.empty()) throw fsloc::ValueError("training split is empty");

    fsloc::Model<T> model(model_config(o));
    model.init(o.seed);

    fsloc::TrainConfig train_cfg;
    train_cfg.epochs = o.epochs;
    train_cfg.lr = o.lr;
    train_cfg.lr_decay = o.lr_decay;
    train_cfg.lr_decay_every = o.lr_decay_every;
    train_cfg.beta1 = o.beta1;
    train_cfg.beta2 = o.beta2;
    train_cfg.adam_eps = o.adam_eps;
    train_cfg.seed = o.seed;
    train_cfg.encode = encode_config(o);

    fsloc::EvalOptions eval_opts;
    eval_opts.decoder = decoder_config(o);
    eval_opts.jobs = o.jobs;
    const double sigma_l = o.sigmas.empty() ? 10.0 : o.sigmas.back();

    std::ofstream log(o.out_dir + "/loss_log.txt");
    log << "epoch\tmean_loss\tlr\tval_f1\n" << std::setprecision(12);
    const std::string ckpt_path = o.out_dir + "/checkpoint.bin";

    const auto result = fsloc::train_model<T>(
        model, splits.train, splits.val, train_cfg, eval_opts, sigma_l,
        [&](int, const fsloc::TrainResult&) {
            fsloc::save_checkpoint<T>(ckpt_path, model.parameters());
        },
        [&](const fsloc::EpochLog& e) {
            log << e.epoch << "\t" << e.mean_loss << "\t" << e.lr << "\t" << e.val_f1 << "\n";
            log.flush();
            std::cout << "epoch " << e.epoch << " loss " << e.mean_loss << " lr " << e.lr
                      << " val_f1 " << e.val_f1 << "\n";
        });
    std::cout << "best epoch " << result.best_epoch << " val_f1 " << result.best_f1
              << "; checkpoint: " << ckpt_path << "\n";
    return 0;
}

template <typename T>
int run_eval(const CLI::App& cmd, const Options& o) {
    if (o.checkpoint.empty()) throw fsloc::ValueError("--checkpoint is required for eval");
    fs::create_directories(o.out_dir);
    write_resolved_config(cmd, o.out_dir);
    const auto splits = assemble_dataset(o);
    const auto& episodes = o.eval_split == "train" ? splits.train
                           : o.eval_split == "val" ? splits.val
                                                   : splits.test;
    if (episodes.empty()) throw fsloc::ValueError("evaluation split is empty");

    fsloc::Model<T> model(model_config(o));
    model.init(o.seed);
    fsloc::load_checkpoint<T>(o.checkpoint, model.parameters());

    fsloc::EvalOptions eval_opts;
    eval_opts.decoder = decoder_config(o);
    eval_opts.sigmas = o.sigmas;
    eval_opts.jobs = o.jobs;
    eval_opts.keep_maps = o.dump_maps;

    std::vector<fsloc::EvalOutput> outputs;
    const auto report = fsloc::evaluate_model(model, episodes, eval_opts, &outputs);
    write_text(o.out_dir + "/metrics.txt", fsloc::render_metrics_text(report));
    write_text(o.out_dir + "/metrics.tsv", fsloc::render_metrics_tsv(report));
    dump_eval_outputs<T>(o, outputs);
    std::cout << fsloc::render_metrics_text(report);
    return 0;
}

template <typename T>
int run_predict(const CLI::App& cmd, const Options& o) {
    if (o.checkpoint.empty()) throw fsloc::ValueError("--checkpoint is required for predict");
    fs::create_directories(o.out_dir);
    write_resolved_config(cmd, o.out_dir);
    const auto splits = assemble_dataset(o);
    const auto& episodes = o.eval_split == "train" ? splits.train
                           : o.eval_split == "val" ? splits.val
                                                   : splits.test;
    if (episodes.empty()) throw fsloc::ValueError("prediction split is empty");

    fsloc::Model<T> model(model_config(o));
    model.init(o.seed);
    fsloc::load_checkpoint<T>(o.checkpoint, model.parameters());

    fsloc::EvalOptions eval_opts;
    eval_opts.decoder = decoder_config(o);
    eval_opts.sigmas = o.sigmas;
    eval_opts.jobs = o.jobs;
    eval_opts.keep_maps = true;

    Options dump_all = o;
    dump_all.dump_maps = true;
    dump_all.dump_points = true;
    std::vector<fsloc::EvalOutput> outputs;
    fsloc::evaluate_model(model, episodes, eval_opts, &outputs);
    dump_eval_outputs<T>(dump_all, outputs);
    std::cout << "wrote maps and points for " << outputs.size() << " image(s) to " << o.out_dir
              << "\n";
    return 0;
}

int run_verify(const Options& o) {
    const auto suites = fsloc::verify::run_all(o.seed);
    bool all_pass = true;
    std::cout << std::left;
    for (const auto& s : suites) {
        all_pass = all_pass && s.pass;
        std::cout << std::setw(24) << s.name << (s.pass ? "PASS" : "FAIL") << "  max_err="
                  << std::scientific << std::setprecision(3) << s.max_err << "  cases="
                  << s.cases;
        if (!s.detail.empty()) std::cout << "  [" << s.detail << "]";
        std::cout << "\n" << std::defaultfloat;
    }
    std::cout << (all_pass ? "verification passed" : "verification FAILED") << "\n";
    return all_pass ? 0 : 1;
}

int run_synth(const CLI::App& cmd, const Options& o) {
    fs::create_directories(o.out_dir);
    write_resolved_config(cmd, o.out_dir);
    const auto splits = assemble_dataset(o);
    nlohmann::json doc = nlohmann::json::object();
    auto emit = [&](const std::vector<fsloc::Episode>& eps) {
        for (const auto& ep : eps) {
            const std::string name = ep.id + ".png";
            fsloc::write_png(o.out_dir + "/" + name, ep.image);
            nlohmann::json rec;
            rec["class"] = ep.klass;
            rec["split"] = fsloc::split_name(ep.split);
            rec["points"] = nlohmann::json::array();
            for (const auto& p : ep.points) rec["points"].push_back({p.x, p.y});
            rec["boxes"] = nlohmann::json::array();
            rec["boxes"].push_back(
                {ep.exemplar.x1, ep.exemplar.y1, ep.exemplar.x2, ep.exemplar.y2});
            doc[name] = rec;
        }
    };
    emit(splits.train);
    emit(splits.val);
    emit(splits.test);
    write_text(o.out_dir + "/annotations.json", doc.dump(2) + "\n");
    std::cout << "wrote " << doc.size() << " synthetic episode(s) to " << o.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"few-shot object localization workbench"};
    app.require_subcommand(1);

    Options opts;
    auto* train = app.add_subcommand("train", "train a model and keep the best checkpoint");
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and write metric reports");
    auto* predict = app.add_subcommand("predict", "dump predicted maps and decoded points");
    auto* verify = app.add_subcommand("verify", "run the oracle and gradient suites");
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset on disk");
    for (auto* cmd : {train, eval, predict, verify, synth}) register_options(cmd, opts);

    CLI11_PARSE(app, argc, argv);

    try {
        const bool f32 = opts.precision == "float32";
        if (train->parsed()) return f32 ? run_train<float>(*train, opts)
                                        : run_train<double>(*train, opts);
        if (eval->parsed()) return f32 ? run_eval<float>(*eval, opts)
                                       : run_eval<double>(*eval, opts);
        if (predict->parsed()) return f32 ? run_predict<float>(*predict, opts)
                                          : run_predict<double>(*predict, opts);
        if (verify->parsed()) return run_verify(opts);
        if (synth->parsed()) return run_synth(*synth, opts);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
