#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <thread>
#include <vector>

#include "fsloc/data.hpp"
#include "fsloc/locmap.hpp"
#include "fsloc/metrics.hpp"
#include "fsloc/model.hpp"
#include "fsloc/optim.hpp"

namespace fsloc {

struct TrainConfig {
    int epochs = 200;
    double lr = 2e-5;
    double lr_decay = 0.25;
    int lr_decay_every = 80;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int shots = 1;
    std::uint64_t seed = 0;
    EncodeConfig encode;

    void validate() const {
        if (epochs < 1) throw ValueError("epochs must be >= 1");
        if (shots != 1) throw ValueError("only the one-shot setting is supported");
        if (!(lr > 0.0) && lr != 0.0) throw ValueError("learning rate must be >= 0");
    }
};

// Forward, MSE against the encoded GT map, backward, one optimizer update.
template <typename T>
double train_step(const Model<T>& model, Adam<T>& opt, const Episode& ep,
                  const EncodeConfig& encode, double lr) {
    const Tensor<T> image = image_to_tensor<T>(ep.image);
    const auto gt = encode_location_map<T>(ep.points, ep.image.height, ep.image.width, encode);
    const Tensor<T> target = to_tensor(gt);
    GradTape<T> tape;
    const auto features = model.forward(image, ep.exemplar, &tape);
    const Tensor<T> loss = mse_loss(features.prediction, target, &tape);
    const double loss_value = static_cast<double>(loss.data()[0]);
    if (!std::isfinite(loss_value))
        throw ValueError(detail::msg("non-finite loss on episode ", ep.id));
    backward(loss, tape);
    opt.step(lr);
    opt.zero_grad();
    return loss_value;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalOutput {
    std::string id;
    PointList points;          // decoded predictions
    int gt_count = 0;
    LocationMap<double> map;   // populated only when keep_maps is set
};

struct EvalOptions {
    DecoderConfig decoder;
    std::vector<double> sigmas = {5.0, 10.0};
    int jobs = 1;
    bool keep_maps = false;
};

// Per-image decode -> match -> aggregate over an arbitrary map producer.
// Parallel fan-out is by image with a deterministic index-ordered reduce.
inline MetricsReport evaluate_episodes(
    const std::function<LocationMap<double>(const Episode&)>& predict_map,
    const std::vector<Episode>& episodes, const EvalOptions& opts,
    std::vector<EvalOutput>* outputs = nullptr) {
    opts.decoder.validate();
    std::vector<EvalOutput> results(episodes.size());
    std::vector<std::vector<MatchResult>> matches(episodes.size());

    auto eval_one = [&](std::size_t i) {
        const Episode& ep = episodes[i];
        LocationMap<double> map = predict_map(ep);
        EvalOutput& out = results[i];
        out.id = ep.id;
        out.gt_count = static_cast<int>(ep.points.size());
        out.points = decode_peaks(map, opts.decoder);
        for (double sigma : opts.sigmas)
            matches[i].push_back(match_points(out.points, ep.points, sigma));
        if (opts.keep_maps) out.map = std::move(map);
    };

    const int jobs = std::max(1, opts.jobs);
    if (jobs == 1 || episodes.size() < 2) {
        for (std::size_t i = 0; i < episodes.size(); ++i) eval_one(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        const int workers = std::min<int>(jobs, static_cast<int>(episodes.size()));
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < episodes.size();
                     i = next.fetch_add(1))
                    eval_one(i);
            });
        for (auto& t : pool) t.join();
    }

    MetricsReport report;
    report.images = static_cast<int>(episodes.size());
    std::vector<int> gt_counts, pred_counts;
    for (std::size_t s = 0; s < opts.sigmas.size(); ++s) {
        SigmaBlock block;
        block.sigma = opts.sigmas[s];
        for (std::size_t i = 0; i < episodes.size(); ++i) {
            block.tp += matches[i][s].tp;
            block.fp += matches[i][s].fp;
            block.fn += matches[i][s].fn;
        }
        block.rates = prf1(static_cast<int>(block.tp), static_cast<int>(block.fp),
                           static_cast<int>(block.fn));
        report.blocks.push_back(block);
    }
    for (std::size_t i = 0; i < episodes.size(); ++i) {
        report.per_image.push_back({results[i].id, results[i].gt_count,
                                    static_cast<int>(results[i].points.size())});
        gt_counts.push_back(results[i].gt_count);
        pred_counts.push_back(static_cast<int>(results[i].points.size()));
    }
    if (!gt_counts.empty()) {
        const auto errors = counting_errors(gt_counts, pred_counts);
        report.mae = errors.mae;
        report.rmse = errors.rmse;
    }
    if (outputs) *outputs = std::move(results);
    return report;
}

template <typename T>
MetricsReport evaluate_model(const Model<T>& model, const std::vector<Episode>& episodes,
                             const EvalOptions& opts,
                             std::vector<EvalOutput>* outputs = nullptr) {
    return evaluate_episodes(
        [&model](const Episode& ep) {
            const Tensor<T> image = image_to_tensor<T>(ep.image);
            const LocationMap<T> map = map_from_tensor(model.predict(image, ep.exemplar));
            LocationMap<double> out;
            out.height = map.height;
            out.width = map.width;
            out.values.assign(map.values.begin(), map.values.end());
            return out;
        },
        episodes, opts, outputs);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochLog {
    int epoch = 0;
    double mean_loss = 0.0;
    double lr = 0.0;
    double val_f1 = 0.0;  // at sigma_l, when a validation split is given
};

struct TrainResult {
    std::vector<EpochLog> log;
    int best_epoch = -1;
    double best_f1 = -1.0;
};

// Epoch-based loop over shuffled episodes. When a validation split is
// present the epoch with the highest F1 at sigma_l wins and on_best fires so
// the caller can persist the checkpoint; otherwise the last epoch wins.
template <typename T>
TrainResult train_model(Model<T>& model, const std::vector<Episode>& train_split,
                        const std::vector<Episode>& val_split, const TrainConfig& cfg,
                        const EvalOptions& eval_opts, double sigma_l,
                        const std::function<void(int, const TrainResult&)>& on_best = {},
                        const std::function<void(const EpochLog&)>& on_epoch = {}) {
    cfg.validate();
    if (train_split.empty()) throw ValueError("empty training split");
    std::vector<Tensor<T>> params;
    for (auto& p : model.parameters()) params.push_back(p.tensor);
    Adam<T> opt(params, cfg.beta1, cfg.beta2, cfg.adam_eps);

    TrainResult result;
    std::vector<std::size_t> order(train_split.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(cfg.seed + 0x517cc1b727220a95ull * static_cast<std::uint64_t>(epoch + 1));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
        const double lr = scheduled_lr(cfg.lr, epoch, cfg.lr_decay, cfg.lr_decay_every);
        double loss_sum = 0.0;
        for (std::size_t i : order)
            loss_sum += train_step(model, opt, train_split[i], cfg.encode, lr);

        EpochLog log;
        log.epoch = epoch;
        log.mean_loss = loss_sum / static_cast<double>(train_split.size());
        log.lr = lr;
        if (!val_split.empty()) {
            EvalOptions vopts = eval_opts;
            vopts.sigmas = {sigma_l};
            vopts.keep_maps = false;
            const auto report = evaluate_model(model, val_split, vopts);
            log.val_f1 = report.blocks[0].rates.f1;
        }
        result.log.push_back(log);
        if (val_split.empty() || log.val_f1 > result.best_f1) {
            result.best_f1 = log.val_f1;
            result.best_epoch = epoch;
            if (on_best) on_best(epoch, result);
        }
        if (on_epoch) on_epoch(log);
    }
    return result;
}

}  // namespace fsloc
