#pragma once

// Deterministic synthetic RGB-T sequences with exact ground truth.
//
// A rectangular target moves over a cluttered background. Each modality has
// its own target/background appearance; degraded segments remove the target
// contrast from one modality (low illumination: RGB, thermal crossover: TIR)
// or blank both frames (frame lost).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mplt/box.hpp"
#include "mplt/image.hpp"

namespace mplt {

enum class Trajectory { fixed, linear, sinusoidal };
enum class Degradation { low_illumination, thermal_crossover, frame_lost };

inline const char* degradation_tag(Degradation d) {
    switch (d) {
        case Degradation::low_illumination: return "LI";
        case Degradation::thermal_crossover: return "TC";
        case Degradation::frame_lost: return "FL";
    }
    return "?";
}

struct DegradedSegment {
    std::size_t begin = 0, end = 0;  // frames [begin, end)
    Degradation kind = Degradation::low_illumination;
};

using Rgb = std::array<double, 3>;

struct SynthSpec {
    std::size_t width = 128, height = 128, frames = 40;
    double target_w = 16, target_h = 16;
    Trajectory trajectory = Trajectory::linear;
    double start_cx = 48, start_cy = 56;  // target centre at frame 0
    double vx = 1.0, vy = 0.5;            // px/frame (linear)
    double amplitude = 20, period = 40;   // sinusoidal: cx += A·sin(2πt/T), cy += vy·t
    Rgb rgb_target{220, 70, 60};
    Rgb rgb_background{80, 100, 90};
    double tir_target = 220;
    double tir_background = 50;
    double low_light_gain = 0.3;  // RGB brightness factor inside LI segments
    double noise = 0;             // Gaussian pixel noise (intensity levels)
    std::size_t clutter = 0;      // static distractor rectangles per modality
    std::vector<DegradedSegment> segments;
    std::string name = "synthetic";

    void validate() const {
        if (width < 8 || height < 8 || frames == 0) throw std::invalid_argument("synth: frame size/count too small");
        if (!(target_w > 0 && target_h > 0)) throw std::invalid_argument("synth: target extent must be positive");
        if (trajectory == Trajectory::sinusoidal && !(period > 0))
            throw std::invalid_argument("synth: sinusoidal period must be positive");
        for (const auto& s : segments)
            if (s.begin >= s.end || s.end > frames) throw std::invalid_argument("synth: invalid degraded segment");
        if (!(low_light_gain > 0 && low_light_gain <= 1)) throw std::invalid_argument("synth: bad low_light_gain");
        if (noise < 0) throw std::invalid_argument("synth: negative noise");
    }
};

struct SequenceRecord {
    std::string name;
    std::vector<ImageU8> rgb, tir;
    std::vector<BBox> ground_truth;
    std::vector<std::string> frame_tags;  // comma-separated attribute tags per frame

    std::size_t size() const { return ground_truth.size(); }

    void validate() const {
        if (rgb.size() != tir.size() || rgb.size() != ground_truth.size())
            throw std::invalid_argument("sequence " + name + ": frame and ground-truth counts differ");
        for (std::size_t i = 0; i < rgb.size(); ++i)
            if (rgb[i].height != rgb[0].height || rgb[i].width != rgb[0].width || tir[i].height != rgb[0].height ||
                tir[i].width != rgb[0].width)
                throw std::invalid_argument("sequence " + name + ": frames differ in size");
    }
};

/// Analytic target box at frame t.
inline BBox synth_box(const SynthSpec& spec, std::size_t t) {
    const double ft = static_cast<double>(t);
    double cx = spec.start_cx, cy = spec.start_cy;
    switch (spec.trajectory) {
        case Trajectory::fixed: break;
        case Trajectory::linear:
            cx += spec.vx * ft;
            cy += spec.vy * ft;
            break;
        case Trajectory::sinusoidal:
            cx += spec.amplitude * std::sin(2 * std::numbers::pi * ft / spec.period);
            cy += spec.vy * ft;
            break;
    }
    return BBox::from_center(cx, cy, spec.target_w, spec.target_h);
}

namespace detail {

struct Blob {
    BBox box;
    Rgb rgb;
    double tir;
};

/// Paints `value` over `box` with per-pixel area coverage.
inline void paint_box(std::vector<double>& plane, std::size_t width, std::size_t height, std::size_t channels,
                      const BBox& box, const double* value) {
    const long x0 = std::max(0L, static_cast<long>(std::floor(box.x)));
    const long y0 = std::max(0L, static_cast<long>(std::floor(box.y)));
    const long x1 = std::min(static_cast<long>(width), static_cast<long>(std::ceil(box.x + box.w)));
    const long y1 = std::min(static_cast<long>(height), static_cast<long>(std::ceil(box.y + box.h)));
    for (long y = y0; y < y1; ++y) {
        const double cy = std::min<double>(y + 1, box.y + box.h) - std::max<double>(y, box.y);
        if (cy <= 0) continue;
        for (long x = x0; x < x1; ++x) {
            const double cx = std::min<double>(x + 1, box.x + box.w) - std::max<double>(x, box.x);
            if (cx <= 0) continue;
            const double a = cx * cy;
            double* px = plane.data() + (static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)) * channels;
            for (std::size_t c = 0; c < channels; ++c) px[c] = (1 - a) * px[c] + a * value[c];
        }
    }
}

inline std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace detail

/// Renders a sequence. Identical spec and seed give identical bytes.
inline SequenceRecord synth_sequence(const SynthSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<detail::Blob> blobs;
    for (std::size_t i = 0; i < spec.clutter; ++i) {
        const double w = spec.target_w * (0.5 + unit(rng)), h = spec.target_h * (0.5 + unit(rng));
        const double x = unit(rng) * (static_cast<double>(spec.width) - w);
        const double y = unit(rng) * (static_cast<double>(spec.height) - h);
        Rgb col{40 + 180 * unit(rng), 40 + 180 * unit(rng), 40 + 180 * unit(rng)};
        blobs.push_back({{x, y, w, h}, col, 60 + 120 * unit(rng)});
    }
    std::normal_distribution<double> noise(0.0, spec.noise > 0 ? spec.noise : 1.0);

    SequenceRecord seq;
    seq.name = spec.name;
    for (std::size_t t = 0; t < spec.frames; ++t) {
        bool low_light = false, crossover = false, lost = false;
        std::string tags;
        for (const auto& s : spec.segments) {
            if (t < s.begin || t >= s.end) continue;
            low_light |= s.kind == Degradation::low_illumination;
            crossover |= s.kind == Degradation::thermal_crossover;
            lost |= s.kind == Degradation::frame_lost;
            if (tags.find(degradation_tag(s.kind)) == std::string::npos)
                tags += (tags.empty() ? "" : ",") + std::string(degradation_tag(s.kind));
        }
        const BBox box = synth_box(spec, t);
        std::vector<double> rgb(spec.width * spec.height * 3), tir(spec.width * spec.height * 3);
        for (std::size_t i = 0; i < spec.width * spec.height; ++i)
            for (std::size_t c = 0; c < 3; ++c) {
                rgb[i * 3 + c] = spec.rgb_background[c];
                tir[i * 3 + c] = spec.tir_background;
            }
        for (const auto& b : blobs) {
            const double tv[3] = {b.tir, b.tir, b.tir};
            detail::paint_box(rgb, spec.width, spec.height, 3, b.box, b.rgb.data());
            detail::paint_box(tir, spec.width, spec.height, 3, b.box, tv);
        }
        const Rgb target_rgb = low_light ? spec.rgb_background : spec.rgb_target;
        const double target_tir = crossover ? spec.tir_background : spec.tir_target;
        const double tv[3] = {target_tir, target_tir, target_tir};
        detail::paint_box(rgb, spec.width, spec.height, 3, box, target_rgb.data());
        detail::paint_box(tir, spec.width, spec.height, 3, box, tv);
        if (low_light)
            for (auto& v : rgb) v *= spec.low_light_gain;

        ImageU8 out_rgb(spec.height, spec.width, 3), out_tir(spec.height, spec.width, 3);
        for (std::size_t i = 0; i < spec.width * spec.height; ++i) {
            const double n_rgb = spec.noise > 0 ? noise(rng) : 0.0;
            const double n_tir = spec.noise > 0 ? noise(rng) : 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                out_rgb.data[i * 3 + c] = lost ? 0 : detail::to_u8(rgb[i * 3 + c] + n_rgb);
                out_tir.data[i * 3 + c] = lost ? 0 : detail::to_u8(tir[i * 3 + c] + n_tir);
            }
        }
        seq.rgb.push_back(std::move(out_rgb));
        seq.tir.push_back(std::move(out_tir));
        seq.ground_truth.push_back(box);
        seq.frame_tags.push_back(tags);
    }
    return seq;
}

/// Random spec for training/evaluation corpora: random appearance, start,
/// velocity and clutter; optionally with a low-illumination segment covering
/// the middle part of the sequence.
inline SynthSpec random_synth_spec(std::mt19937_64& rng, std::size_t frames, bool low_illumination,
                                   std::size_t width = 128, std::size_t height = 128) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SynthSpec s;
    s.width = width;
    s.height = height;
    s.frames = frames;
    s.target_w = 12 + 8 * u(rng);
    s.target_h = 12 + 8 * u(rng);
    s.trajectory = u(rng) < 0.5 ? Trajectory::linear : Trajectory::sinusoidal;
    const double margin = 24;
    s.start_cx = margin + u(rng) * (static_cast<double>(width) - 2 * margin);
    s.start_cy = margin + u(rng) * (static_cast<double>(height) - 2 * margin);
    const double speed = 0.5 + 1.0 * u(rng);
    const double angle = 2 * std::numbers::pi * u(rng);
    s.vx = speed * std::cos(angle);
    s.vy = speed * std::sin(angle);
    // Keep the whole trajectory inside the frame.
    const double travel = static_cast<double>(frames);
    auto fit = [&](double start, double& v, double extent) {
        const double end = start + v * travel;
        if (end < margin || end > extent - margin) v = -v;
        if (start + v * travel < margin || start + v * travel > extent - margin) v = 0;
    };
    fit(s.start_cx, s.vx, static_cast<double>(width));
    fit(s.start_cy, s.vy, static_cast<double>(height));
    s.amplitude = 6 + 10 * u(rng);
    s.period = 20 + 20 * u(rng);
    s.rgb_target = {150 + 100 * u(rng), 40 + 80 * u(rng), 40 + 80 * u(rng)};
    s.rgb_background = {60 + 60 * u(rng), 60 + 60 * u(rng), 60 + 60 * u(rng)};
    s.tir_target = 170 + 70 * u(rng);
    s.tir_background = 30 + 40 * u(rng);
    s.noise = 4;
    s.clutter = 4;
    if (low_illumination) {
        const std::size_t begin = frames / 5;
        s.segments.push_back({begin, frames, Degradation::low_illumination});
    }
    return s;
}

}  // namespace mplt
