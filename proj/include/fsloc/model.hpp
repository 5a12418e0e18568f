#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "fsloc/conv.hpp"
#include "fsloc/ops.hpp"
#include "fsloc/point.hpp"
#include "fsloc/rng.hpp"

namespace fsloc {

// Three-stage strided backbone (strides 4/8/16), stage outputs upsampled to
// the stride-4 grid, concatenated and projected to `channels`. The reference
// preset documents the full-scale dims (stages 256/512/1024, concat 1792,
// projection 256 on 512x512 inputs); the desk preset is the verification
// scale everything in-tree trains at.
struct ModelConfig {
    int image_size = 64;
    int feature_stride = 4;
    int channels = 32;
    std::vector<int> stage_widths = {16, 24, 32};
    std::vector<int> head_widths = {};  // empty: derived as C/2, C/4, C/8
    double leaky_slope = 0.01;
    double theta = 0.5;
    double cosine_eps = 1e-12;
    bool use_dc = true;
    bool use_ccdc = true;
    bool use_sq = true;
    // Alternative residual form for ablation: add the self-query weights to
    // the raw query features instead of their 1x1-projected form.
    bool sq_add_raw_query = false;

    static ModelConfig desk() { return ModelConfig{}; }

    static ModelConfig reference() {
        ModelConfig cfg;
        cfg.image_size = 512;
        cfg.channels = 256;
        cfg.stage_widths = {256, 512, 1024};
        return cfg;
    }

    int concat_width() const {
        int c = 0;
        for (int w : stage_widths) c += w;
        return c;
    }

    std::vector<int> resolved_head_widths() const {
        if (!head_widths.empty()) return head_widths;
        return {std::max(4, channels / 2), std::max(4, channels / 4),
                std::max(4, channels / 8)};
    }

    void validate() const {
        if (feature_stride != 4)
            throw ValueError("the backbone topology realizes a feature stride of 4");
        if (image_size < 16 || image_size % feature_stride != 0)
            throw ValueError(detail::msg("image size ", image_size,
                                         " not divisible by feature stride ", feature_stride));
        if (stage_widths.size() != 3)
            throw ValueError("backbone uses exactly three stages");
        if (channels < 1) throw ValueError("channels must be positive");
        if (resolved_head_widths().size() < 2)
            throw ValueError("regression head needs at least two blocks");
        if (!(theta >= 0.0 && theta <= 1.0))
            throw ValueError(detail::msg("theta must lie in [0,1], got ", theta));
        if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
            throw ValueError(detail::msg("leaky slope must lie in (0,1), got ", leaky_slope));
    }
};

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
};

// The branch-enhanced features of one episode.
template <typename T>
struct EpisodeFeatures {
    Tensor<T> query;          // F_Q:   1 x C x H x W
    Tensor<T> support;        // F_S:   1 x C x 3 x 3
    Tensor<T> query_deform;   // F_Q^D
    Tensor<T> support_deform; // F_S^D
    Tensor<T> query_grad;     // F_Q^C
    Tensor<T> support_grad;   // F_S^C
    Tensor<T> similarity;     // S:     1 x C x H x W
    Tensor<T> enhanced;       // S_SQ
    Tensor<T> prediction;     // location map, 1 x 1 x R x R
};

template <typename T>
class Model {
public:
    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

    const ModelConfig& config() const { return cfg_; }

    void init(std::uint64_t seed) {
        Rng rng(seed);
        const int C = cfg_.channels;
        const auto& sw = cfg_.stage_widths;
        stem1_ = make_conv(rng, 3, sw[0], 3, 2, 1, true);
        stem2_ = make_conv(rng, sw[0], sw[0], 3, 2, 1, true);
        stage2_ = make_conv(rng, sw[0], sw[1], 3, 2, 1, true);
        stage3_ = make_conv(rng, sw[1], sw[2], 3, 2, 1, true);
        proj_ = make_conv(rng, cfg_.concat_width(), C, 1, 1, 0, true);

        if (cfg_.use_dc) {
            dc_weight_ = make_conv(rng, C, C, 3, 1, 1, false);
            // zero offsets and 0.5 masks at the start: the deformation branch
            // opens in the vanilla-conv regime
            dc_offset_ = make_conv(rng, C, 3 * 9, 3, 1, 1, true);
            std::fill_n(dc_offset_.weights.data_mut(), dc_offset_.weights.numel(), T(0));
            std::fill_n(dc_offset_.bias.data_mut(), dc_offset_.bias.numel(), T(0));
        } else {
            dc_replacement_ = make_conv(rng, C, C, 3, 1, 1, false);
        }
        if (cfg_.use_ccdc) {
            ccdc_.weights = he_tensor(rng, {C, C, 5}, C * 5);
            ccdc_.weights.set_requires_grad(true);
            ccdc_.theta = static_cast<T>(cfg_.theta);
        } else {
            ccdc_replacement_ = make_conv(rng, C, C, 3, 1, 1, false);
        }
        if (cfg_.use_sq) {
            sq_in_ = make_conv(rng, C, C, 1, 1, 0, false);
            sq_out_ = make_conv(rng, C, C, 1, 1, 0, false);
        }

        head_.clear();
        int prev = C;
        for (int w : cfg_.resolved_head_widths()) {
            head_.push_back(make_conv(rng, prev, w, 3, 1, 1, true));
            prev = w;
        }
        head_final_ = make_conv(rng, prev, 1, 1, 1, 0, true);
    }

    // Every learnable tensor exactly once; shared layers are shared tensors.
    std::vector<NamedParam<T>> parameters() const {
        std::vector<NamedParam<T>> out;
        auto push_conv = [&](const std::string& name, const ConvSpec<T>& spec) {
            out.push_back({name + ".weight", spec.weights});
            if (spec.bias.defined()) out.push_back({name + ".bias", spec.bias});
        };
        push_conv("backbone.stem1", stem1_);
        push_conv("backbone.stem2", stem2_);
        push_conv("backbone.stage2", stage2_);
        push_conv("backbone.stage3", stage3_);
        push_conv("backbone.proj", proj_);
        if (cfg_.use_dc) {
            push_conv("dfa.dc", dc_weight_);
            push_conv("dfa.dc_offset", dc_offset_);
        } else {
            push_conv("dfa.dc_replacement", dc_replacement_);
        }
        if (cfg_.use_ccdc) {
            out.push_back({"dfa.ccdc.weight", ccdc_.weights});
        } else {
            push_conv("dfa.ccdc_replacement", ccdc_replacement_);
        }
        if (cfg_.use_sq) {
            push_conv("sq.in", sq_in_);
            push_conv("sq.out", sq_out_);
        }
        for (std::size_t i = 0; i < head_.size(); ++i)
            push_conv(detail::msg("head.block", i), head_[i]);
        push_conv("head.final", head_final_);
        return out;
    }

    long long parameter_count() const {
        long long n = 0;
        for (const auto& p : parameters()) n += p.tensor.numel();
        return n;
    }

    void zero_grad() const {
        for (const auto& p : parameters()) p.tensor.zero_grad();
    }

    // Stage outputs aligned to the stride-4 grid, concatenated channelwise,
    // projected to C channels.
    Tensor<T> extract_features(const Tensor<T>& image, GradTape<T>* tape = nullptr) const {
        if (image.ndim() != 4 || image.dim(1) != 3)
            throw ShapeError(detail::msg("expected a 1x3xRxR image tensor, got ",
                                         shape_str(image.shape())));
        if (image.dim(2) % cfg_.feature_stride != 0 || image.dim(3) % cfg_.feature_stride != 0)
            throw ValueError(detail::msg("resolution ", image.dim(2), "x", image.dim(3),
                                         " not divisible by feature stride ",
                                         cfg_.feature_stride));
        const T slope = static_cast<T>(cfg_.leaky_slope);
        Tensor<T> s1 = leaky_relu(conv2d(image, stem1_, tape), slope, tape);
        Tensor<T> f4 = leaky_relu(conv2d(s1, stem2_, tape), slope, tape);   // stride 4
        Tensor<T> f8 = leaky_relu(conv2d(f4, stage2_, tape), slope, tape);  // stride 8
        Tensor<T> f16 = leaky_relu(conv2d(f8, stage3_, tape), slope, tape); // stride 16
        const int H = f4.dim(2), W = f4.dim(3);
        Tensor<T> u8 = bilinear_upsample(f8, H, W, tape);
        Tensor<T> u16 = bilinear_upsample(f16, H, W, tape);
        Tensor<T> cat = concat_channels<T>({f4, u8, u16}, tape);
        return conv2d(cat, proj_, tape);
    }

    // Exemplar box mapped to feature coordinates with floor/ceil rounding,
    // cropped from F_Q and pooled to C x 3 x 3.
    Tensor<T> crop_support(const Tensor<T>& query_features, const Box& box,
                           GradTape<T>* tape = nullptr) const {
        const int s = cfg_.feature_stride;
        const int fh = query_features.dim(2), fw = query_features.dim(3);
        if (!(box.area() > 0.0) || box.x1 < 0 || box.y1 < 0 || box.x2 > fw * s ||
            box.y2 > fh * s)
            throw ValueError(detail::msg("exemplar box (", box.x1, ",", box.y1, ",", box.x2,
                                         ",", box.y2, ") degenerate or outside the ",
                                         fw * s, "x", fh * s, " image"));
        const int x_lo = std::max(0, static_cast<int>(std::floor(box.x1 / s)));
        const int y_lo = std::max(0, static_cast<int>(std::floor(box.y1 / s)));
        const int x_hi = std::min(fw, static_cast<int>(std::ceil(box.x2 / s)));
        const int y_hi = std::min(fh, static_cast<int>(std::ceil(box.y2 / s)));
        if (x_hi <= x_lo || y_hi <= y_lo)
            throw ValueError(detail::msg("exemplar box (", box.x1, ",", box.y1, ",", box.x2,
                                         ",", box.y2, ") maps to an empty feature window"));
        Tensor<T> window = crop_spatial(query_features, y_lo, y_hi, x_lo, x_hi, tape);
        return adaptive_avg_pool(window, 3, 3, tape);
    }

    struct BranchOutputs {
        Tensor<T> query_deform, support_deform, query_grad, support_grad;
    };

    // One deformation layer and one gradient layer, each applied with shared
    // weights to the query and support features.
    BranchOutputs dfa_forward(const Tensor<T>& query, const Tensor<T>& support,
                              GradTape<T>* tape = nullptr) const {
        if (query.dim(1) != cfg_.channels || support.dim(1) != cfg_.channels)
            throw ShapeError(detail::msg("dfa expects ", cfg_.channels, " channels, got ",
                                         query.dim(1), " and ", support.dim(1)));
        BranchOutputs out;
        out.query_deform = deform_branch(query, tape);
        out.support_deform = deform_branch(support, tape);
        out.query_grad = grad_branch(query, tape);
        out.support_grad = grad_branch(support, tape);
        return out;
    }

    Tensor<T> similarity_forward(const BranchOutputs& branches,
                                 GradTape<T>* tape = nullptr) const {
        DualStack<T> stack(branches.query_deform, branches.query_grad,
                           branches.support_deform, branches.support_grad);
        return conv3d_dual(stack, tape);
    }

    Tensor<T> self_query(const Tensor<T>& similarity, const Tensor<T>& query_features,
                         GradTape<T>* tape = nullptr) const {
        if (!cfg_.use_sq) return similarity;
        if (!(similarity.shape() == query_features.shape()))
            throw ShapeError(detail::msg("self_query shape mismatch: ",
                                         shape_str(similarity.shape()), " vs ",
                                         shape_str(query_features.shape())));
        Tensor<T> query_t = conv2d(query_features, sq_in_, tape);
        Tensor<T> sim_t = conv2d(similarity, sq_in_, tape);
        Tensor<T> weights = channel_cosine(sim_t, query_t,
                                           static_cast<T>(cfg_.cosine_eps), tape);
        const Tensor<T>& base = cfg_.sq_add_raw_query ? query_features : query_t;
        Tensor<T> enhanced_t = add(base, weights, tape);
        return conv2d(enhanced_t, sq_out_, tape);
    }

    // Self-query weight plane alone (1 x 1 x H x W); test/inspection hook.
    Tensor<T> self_query_weights(const Tensor<T>& similarity, const Tensor<T>& query_features,
                                 GradTape<T>* tape = nullptr) const {
        Tensor<T> query_t = conv2d(query_features, sq_in_, tape);
        Tensor<T> sim_t = conv2d(similarity, sq_in_, tape);
        return channel_cosine(sim_t, query_t, static_cast<T>(cfg_.cosine_eps), tape);
    }

    // conv + leaky relu blocks with x2 bilinear upsampling after each of the
    // first two blocks, then a final 1-channel conv.
    Tensor<T> regression_head(const Tensor<T>& x, int out_h, int out_w,
                              GradTape<T>* tape = nullptr) const {
        if (out_h != x.dim(2) * 4 || out_w != x.dim(3) * 4)
            throw ValueError(detail::msg("head upsample chain (x2, x2) cannot reach ", out_h,
                                         "x", out_w, " from ", x.dim(2), "x", x.dim(3)));
        const T slope = static_cast<T>(cfg_.leaky_slope);
        Tensor<T> h = x;
        for (std::size_t i = 0; i < head_.size(); ++i) {
            h = leaky_relu(conv2d(h, head_[i], tape), slope, tape);
            if (i < 2) h = bilinear_upsample(h, h.dim(2) * 2, h.dim(3) * 2, tape);
        }
        return conv2d(h, head_final_, tape);
    }

    EpisodeFeatures<T> forward(const Tensor<T>& image, const Box& exemplar,
                               GradTape<T>* tape = nullptr) const {
        EpisodeFeatures<T> f;
        f.query = extract_features(image, tape);
        f.support = crop_support(f.query, exemplar, tape);
        const auto branches = dfa_forward(f.query, f.support, tape);
        f.query_deform = branches.query_deform;
        f.support_deform = branches.support_deform;
        f.query_grad = branches.query_grad;
        f.support_grad = branches.support_grad;
        f.similarity = similarity_forward(branches, tape);
        f.enhanced = self_query(f.similarity, f.query, tape);
        f.prediction = regression_head(f.enhanced, image.dim(2), image.dim(3), tape);
        return f;
    }

    Tensor<T> predict(const Tensor<T>& image, const Box& exemplar) const {
        return forward(image, exemplar, nullptr).prediction;
    }

    // Test hooks.
    const ConvSpec<T>& sq_in_conv() const { return sq_in_; }
    ConvSpec<T>& sq_in_conv_mut() { return sq_in_; }
    const CcdcSpec<T>& ccdc_spec() const { return ccdc_; }

private:
    ConvSpec<T> make_conv(Rng& rng, int in, int out, int k, int stride, int pad,
                          bool with_bias) const {
        ConvSpec<T> spec;
        spec.weights = he_tensor(rng, {out, in, k, k}, in * k * k);
        spec.weights.set_requires_grad(true);
        spec.stride = stride;
        spec.padding = pad;
        if (with_bias) {
            spec.bias = Tensor<T>::zeros({out});
            spec.bias.set_requires_grad(true);
        }
        return spec;
    }

    Tensor<T> he_tensor(Rng& rng, Shape shape, int fan_in) const {
        const T stddev = static_cast<T>(std::sqrt(2.0 / fan_in));
        return Tensor<T>::randn(std::move(shape), rng, stddev);
    }

    Tensor<T> deform_branch(const Tensor<T>& x, GradTape<T>* tape) const {
        if (!cfg_.use_dc) return conv2d(x, dc_replacement_, tape);
        const int N = 9;
        Tensor<T> raw = conv2d(x, dc_offset_, tape);
        DeformField<T> field;
        field.offsets = slice_channels(raw, 0, 2 * N, tape);
        field.masks = sigmoid(slice_channels(raw, 2 * N, 3 * N, tape), tape);
        return deform_conv2d(x, dc_weight_, field, tape);
    }

    Tensor<T> grad_branch(const Tensor<T>& x, GradTape<T>* tape) const {
        if (!cfg_.use_ccdc) return conv2d(x, ccdc_replacement_, tape);
        return ccdc_hv(x, ccdc_, tape);
    }

    ModelConfig cfg_;
    ConvSpec<T> stem1_, stem2_, stage2_, stage3_, proj_;
    ConvSpec<T> dc_weight_, dc_offset_, dc_replacement_;
    CcdcSpec<T> ccdc_;
    ConvSpec<T> ccdc_replacement_;
    ConvSpec<T> sq_in_, sq_out_;
    std::vector<ConvSpec<T>> head_;
    ConvSpec<T> head_final_;
};

}  // namespace fsloc
