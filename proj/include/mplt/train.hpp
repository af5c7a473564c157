#pragma once

// Training pairs cut from sequences and the AdamW training loop.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mplt/attention.hpp"
#include "mplt/model.hpp"
#include "mplt/optim.hpp"
#include "mplt/synth.hpp"

namespace mplt {

struct TrainingPair {
    CropSet crops;
    BBox target;  // ground truth in search-crop pixels
};

struct PairOptions {
    double template_context = 2.0;
    double search_context = 4.0;
    double center_jitter = 0.0;  // max search-centre shift, in units of √(w·h)
    double scale_jitter = 0.0;   // max |log| scale change of the search region
};

/// Template crop around gt[template_frame]; search crop around a jittered
/// gt[search_frame].
inline TrainingPair make_training_pair(const SequenceRecord& seq, std::size_t template_frame,
                                       std::size_t search_frame, const ModelConfig& config,
                                       const PairOptions& options, std::mt19937_64& rng) {
    if (template_frame >= seq.size() || search_frame >= seq.size())
        throw std::out_of_range("make_training_pair: frame index outside sequence " + seq.name);
    const BBox& tb = seq.ground_truth[template_frame];
    const BBox& sb = seq.ground_truth[search_frame];
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double extent = std::sqrt(sb.w * sb.h);
    const double dx = options.center_jitter * extent * u(rng);
    const double dy = options.center_jitter * extent * u(rng);
    const double s = std::exp(options.scale_jitter * u(rng));
    const BBox anchor = BBox::from_center(sb.cx() + dx, sb.cy() + dy, sb.w * s, sb.h * s);

    const Image t_rgb = to_unit(seq.rgb[template_frame]), t_tir = to_unit(seq.tir[template_frame]);
    const Image s_rgb = to_unit(seq.rgb[search_frame]), s_tir = to_unit(seq.tir[search_frame]);
    TrainingPair p;
    p.crops.template_rgb =
        standardize(crop_region(t_rgb, tb, options.template_context, config.template_height, config.template_width).image);
    p.crops.template_tir =
        standardize(crop_region(t_tir, tb, options.template_context, config.template_height, config.template_width).image);
    auto search = crop_region(s_rgb, anchor, options.search_context, config.search_size);
    p.crops.search_rgb = standardize(search.image);
    p.crops.search_tir = standardize(crop_region(s_tir, anchor, options.search_context, config.search_size).image);
    p.target = search.geometry.box_to_crop(sb);
    return p;
}

template <typename Real>
LossTerms<Real> pair_loss(const Model<Real>& model, const TrainingPair& pair) {
    const auto& c = pair.crops;
    auto out = forward(model, c.template_rgb, c.template_tir, c.search_rgb, c.search_tir);
    return compute_loss(out, pair.target, model.config().search_size);
}

/// Backbone parameters (patch embedding, positional tables, encoder) form
/// group 0; prompters, fusion and head form group 1.
inline std::size_t backbone_group(const std::string& name) {
    for (const char* prefix : {"patch_embed.", "pos_embed.", "encoder."})
        if (name.rfind(prefix, 0) == 0) return 0;
    return 1;
}

struct TrainOptions {
    std::size_t steps = 500;
    std::size_t batch_size = 1;
    double lr_backbone = 7.5e-5;
    double lr_other = 7.5e-4;
    double weight_decay = 1e-4;
    std::size_t max_frame_gap = 8;  // |search - template| frame distance
    PairOptions pairs;
    std::uint64_t seed = 0;
    // Called after every step with (step, mean batch loss).
    std::function<void(std::size_t, double)> on_step;
};

struct TrainResult {
    std::vector<double> losses;  // mean batch loss per step, before the update
};

namespace detail {

template <typename Real, typename Sample>
TrainResult run_training(Model<Real>& model, const TrainOptions& options, Sample&& sample) {
    typename AdamW<Real>::Options adam;
    adam.group_lr = {options.lr_backbone, options.lr_other};
    adam.weight_decay = options.weight_decay;
    AdamW<Real> opt(model.parameters(), adam, backbone_group);
    TrainResult result;
    const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
    for (std::size_t step = 0; step < options.steps; ++step) {
        opt.zero_grad();
        double total = 0;
        for (std::size_t b = 0; b < batch; ++b) {
            auto terms = pair_loss(model, sample());
            total += static_cast<double>(terms.total.item());
            scale(terms.total, Real(1) / static_cast<Real>(batch)).backward();
        }
        opt.step();
        result.losses.push_back(total / static_cast<double>(batch));
        if (options.on_step) options.on_step(step, result.losses.back());
    }
    opt.zero_grad();
    return result;
}

}  // namespace detail

/// Repeated updates on a single fixed pair.
template <typename Real>
TrainResult train_on_pair(Model<Real>& model, const TrainingPair& pair, const TrainOptions& options) {
    return detail::run_training(model, options, [&]() -> const TrainingPair& { return pair; });
}

/// Updates on random pairs drawn from `data`: a random sequence, a random
/// template frame and a search frame at most max_frame_gap away.
template <typename Real>
TrainResult train(Model<Real>& model, const std::vector<SequenceRecord>& data, const TrainOptions& options) {
    if (data.empty()) throw std::invalid_argument("train: no sequences");
    std::mt19937_64 rng(options.seed);
    TrainingPair current;
    auto sample = [&]() -> const TrainingPair& {
        const auto& seq = data[std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng)];
        const std::size_t t = std::uniform_int_distribution<std::size_t>(0, seq.size() - 1)(rng);
        const std::size_t lo = t >= options.max_frame_gap ? t - options.max_frame_gap : 0;
        const std::size_t hi = std::min(seq.size() - 1, t + options.max_frame_gap);
        const std::size_t s = std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
        current = make_training_pair(seq, t, s, model.config(), options.pairs, rng);
        return current;
    };
    return detail::run_training(model, options, sample);
}

}  // namespace mplt
