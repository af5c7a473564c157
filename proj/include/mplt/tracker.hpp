#pragma once

// Online tracking loop with confidence-gated template update and Kalman
// correction of low-confidence predictions.
//
// Per frame: crop search regions around the last box, run the network, decode
// a box, correct it with the Kalman prediction when the confidence falls
// below thr_b, record it in the history ring, and re-crop the template when
// the confidence exceeds thr_a.

#include <chrono>
#include <cmath>
#include <deque>
#include <stdexcept>
#include <string>

#include "mplt/config.hpp"
#include "mplt/image.hpp"
#include "mplt/kalman.hpp"
#include "mplt/model.hpp"
#include "mplt/synth.hpp"

namespace mplt {

struct TrackerOptions {
    double thr_a = 0.91;
    double thr_b = 0.25;
    std::size_t history = 16;
    double template_context = 2.0;
    double search_context = 4.0;
    KalmanNoise noise;
    bool use_template_update = true;
    bool use_kalman = true;

    static TrackerOptions from(const RunConfig& c) {
        TrackerOptions o;
        o.thr_a = c.thr_a;
        o.thr_b = c.thr_b;
        o.history = c.history;
        o.template_context = c.template_context;
        o.search_context = c.search_context;
        o.noise = {c.kf_q_pos, c.kf_q_vel, c.kf_r, c.kf_p0};
        o.use_template_update = c.model.use_template_update;
        o.use_kalman = c.model.use_kalman;
        return o;
    }
};

struct HistoryEntry {
    std::size_t frame = 0;
    BBox box;
    double confidence = 0;
    bool measured = false;  // confident enough to feed the Kalman filter
};

struct TrackerState {
    TrackerOptions options;
    std::size_t template_height = 0, template_width = 0;
    Image template_rgb, template_tir;  // standardized crops
    CropGeometry template_geometry;
    std::deque<HistoryEntry> history;  // at most options.history entries
    KalmanState kalman;                // filter behind the most recent correction
    double kf_unit = 1.0;              // boxes are divided by this before filtering
    std::size_t frame_index = 0;
    BBox last_box;
    std::size_t template_updates = 0;
    bool last_corrected = false;
};

/// Frame pair of [0,1] images.
struct FramePair {
    const Image& rgb;
    const Image& tir;
};

inline void recrop_templates(TrackerState& state, FramePair frames, const BBox& box) {
    auto rgb = crop_region(frames.rgb, box, state.options.template_context, state.template_height, state.template_width);
    auto tir = crop_region(frames.tir, box, state.options.template_context, state.template_height, state.template_width);
    state.template_rgb = standardize(rgb.image);
    state.template_tir = standardize(tir.image);
    state.template_geometry = rgb.geometry;
}

inline TrackerState init_track(FramePair frames, const BBox& init_box, const ModelConfig& model_config,
                               const TrackerOptions& options) {
    if (frames.rgb.height != frames.tir.height || frames.rgb.width != frames.tir.width)
        throw std::invalid_argument("init_track: RGB and TIR frames differ in size");
    if (!init_box.valid()) throw std::invalid_argument("init_track: invalid initial box");
    if (!(options.thr_b < options.thr_a) || options.thr_b < 0 || options.thr_a > 1)
        throw ConfigError("init_track: thresholds must satisfy 0 <= thr_b < thr_a <= 1");
    TrackerState s;
    s.options = options;
    s.template_height = model_config.template_height;
    s.template_width = model_config.template_width;
    recrop_templates(s, frames, init_box);
    s.kf_unit = std::sqrt(init_box.w * init_box.h);
    s.kalman = kalman_init(box_to_measurement(init_box, s.kf_unit), options.noise);
    s.last_box = init_box;
    s.last_box.confidence = 1.0;
    return s;
}

/// Replays the measured entries of the history window through a fresh filter
/// and predicts up to `frame`.
inline KalmanState kf_replay(const std::deque<HistoryEntry>& history, std::size_t frame, double unit,
                             const KalmanNoise& noise) {
    auto first = history.begin();
    while (first != history.end() && !first->measured) ++first;
    if (first == history.end()) throw std::logic_error("kf_replay: no measured entries");
    KalmanState k = kalman_init(box_to_measurement(first->box, unit), noise);
    std::size_t t = first->frame;
    for (auto it = std::next(first); it != history.end(); ++it) {
        for (; t < it->frame; ++t) k = kf_predict(k);
        if (it->measured) k = kf_update(k, box_to_measurement(it->box, unit));
    }
    for (; t < frame; ++t) k = kf_predict(k);
    return k;
}

inline std::size_t measured_count(const TrackerState& s) {
    std::size_t n = 0;
    for (const auto& e : s.history) n += e.measured ? 1 : 0;
    return n;
}

/// Kalman-predicted box for the current frame from the history window.
inline BBox kf_predicted_box(TrackerState& state, double confidence) {
    state.kalman = kf_replay(state.history, state.frame_index, state.kf_unit, state.options.noise);
    return measurement_to_box(state.kalman.position(), state.kf_unit, confidence);
}

/// Returns the Kalman prediction when confidence < thr_b (strict) and at least
/// two confident frames are in the history; otherwise the decoded box.
inline BBox kf_correct_gate(TrackerState& state, const BBox& decoded) {
    state.last_corrected = false;
    if (!state.options.use_kalman) return decoded;
    if (decoded.confidence < state.options.thr_b && measured_count(state) >= 2) {
        state.last_corrected = true;
        return kf_predicted_box(state, decoded.confidence);
    }
    return decoded;
}

/// Re-crops both templates when confidence > thr_a (strict).
inline bool template_update_gate(TrackerState& state, FramePair frames, const BBox& box) {
    if (!state.options.use_template_update || !(box.confidence > state.options.thr_a) || !box.valid()) return false;
    recrop_templates(state, frames, box);
    ++state.template_updates;
    return true;
}

/// Gating and bookkeeping for a decoded frame-coordinate box whose confidence
/// is already set. Advances the frame index and returns the final box.
inline BBox finalize_step(TrackerState& state, FramePair frames, const BBox& decoded) {
    ++state.frame_index;
    const BBox out = kf_correct_gate(state, decoded);
    state.history.push_back({state.frame_index, out, decoded.confidence, !(decoded.confidence < state.options.thr_b)});
    while (state.history.size() > state.options.history) state.history.pop_front();
    template_update_gate(state, frames, out);
    if (out.valid()) state.last_box = out;
    return out;
}

/// Network prediction for the next frame: search crops around the last box,
/// forward pass, decode into frame coordinates.
template <typename Real>
BBox predict_box(const TrackerState& state, FramePair frames, const Model<Real>& model) {
    const auto& c = model.config();
    auto rgb = crop_region(frames.rgb, state.last_box, state.options.search_context, c.search_size);
    auto tir = crop_region(frames.tir, state.last_box, state.options.search_context, c.search_size);
    NoGradGuard no_grad;
    auto out = forward(model, state.template_rgb, state.template_tir, standardize(rgb.image), standardize(tir.image));
    return decode_box(out, rgb.geometry, c.search_size, c.hanning_window);
}

template <typename Real>
BBox track_step(TrackerState& state, FramePair frames, const Model<Real>& model) {
    if (frames.rgb.height != frames.tir.height || frames.rgb.width != frames.tir.width)
        throw std::invalid_argument("track_step: RGB and TIR frames differ in size");
    try {
        return finalize_step(state, frames, predict_box(state, frames, model));
    } catch (const std::exception& e) {
        throw std::runtime_error("frame " + std::to_string(state.frame_index + 1) + ": " + e.what());
    }
}

struct TrackResult {
    std::vector<BBox> boxes;  // frame 0 holds the initial box
    std::size_t template_updates = 0;
    std::size_t corrections = 0;
    double seconds = 0;
    double frames_per_second() const {
        return seconds > 0 ? static_cast<double>(boxes.size() > 0 ? boxes.size() - 1 : 0) / seconds : 0.0;
    }
};

/// Initializes on the first ground-truth box and tracks the remaining frames.
template <typename Real>
TrackResult track_sequence(const SequenceRecord& seq, const Model<Real>& model, const TrackerOptions& options) {
    seq.validate();
    if (seq.size() == 0) return {};
    TrackResult r;
    const auto start = std::chrono::steady_clock::now();
    const Image rgb0 = to_unit(seq.rgb[0]), tir0 = to_unit(seq.tir[0]);
    auto state = init_track({rgb0, tir0}, seq.ground_truth[0], model.config(), options);
    r.boxes.push_back(state.last_box);
    for (std::size_t i = 1; i < seq.size(); ++i) {
        const Image rgb = to_unit(seq.rgb[i]), tir = to_unit(seq.tir[i]);
        r.boxes.push_back(track_step(state, {rgb, tir}, model));
        r.corrections += state.last_corrected ? 1 : 0;
    }
    r.template_updates = state.template_updates;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

}  // namespace mplt
