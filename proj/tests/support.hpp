#pragma once

// Shared fixtures for the test binaries.

#include <random>
#include <vector>

#include "mplt/mplt.hpp"

namespace mplt::testing {

/// D=16, L=2, 3 template + 9 search tokens.
inline ModelConfig tiny_config() {
    ModelConfig c;
    c.patch_size = 4;
    c.embed_dim = 16;
    c.num_layers = 2;
    c.num_heads = 2;
    c.mlp_ratio = 2;
    c.template_height = 4;
    c.template_width = 12;
    c.search_size = 12;
    c.reduction_ratio = 4;
    c.head_channels = 8;
    return c;
}

/// D=64, L=3, 16 template + 64 search tokens.
inline ModelConfig toy_config() {
    ModelConfig c;
    c.patch_size = 8;
    c.embed_dim = 64;
    c.num_layers = 3;
    c.num_heads = 4;
    c.mlp_ratio = 2;
    c.template_height = 32;
    c.template_width = 32;
    c.search_size = 64;
    c.reduction_ratio = 16;
    c.head_channels = 32;
    return c;
}

inline ModelConfig vitb_config() { return ModelConfig{}; }

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1,
                                    bool requires_grad = true) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = u(rng);
    return Tensor<double>::from(std::move(shape), std::move(v), requires_grad);
}

inline void fill_random(Tensor<double>& t, std::mt19937_64& rng, double amplitude) {
    std::uniform_real_distribution<double> u(-amplitude, amplitude);
    for (auto& x : t.mutable_data()) x = u(rng);
}

/// Gives the zero-initialized prompter stages random values so that every
/// prompter weight influences the output.
inline void randomize_prompters(Model<double>& m, std::uint64_t seed, double amplitude = 0.3) {
    std::mt19937_64 rng(seed);
    for (auto& dir : m.mutable_params().prompters)
        for (auto& pr : dir)
            for (auto& b : pr.branches) {
                fill_random(b.s2_weight, rng, amplitude);
                fill_random(b.s2_bias, rng, amplitude);
                fill_random(b.t_kernel, rng, amplitude);
                fill_random(b.t_bias, rng, amplitude);
            }
}

/// Random standardized-range image.
inline Image random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
    Image img(h, w, 3);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : img.data) v = n(rng);
    return img;
}

inline CropSet random_crops(const ModelConfig& c, std::mt19937_64& rng) {
    return {random_image(c.template_height, c.template_width, rng), random_image(c.template_height, c.template_width, rng),
            random_image(c.search_size, c.search_size, rng), random_image(c.search_size, c.search_size, rng)};
}


namespace naive {

// Plain row-major matrices for the reference filter.
using Mat = std::vector<std::vector<double>>;

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, std::vector<double>(c, 0.0)); }

inline Mat mul(const Mat& a, const Mat& b) {
    Mat out = zeros(a.size(), b[0].size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < b.size(); ++k)
            for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
    return out;
}

inline Mat tr(const Mat& a) {
    Mat out = zeros(a[0].size(), a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[0].size(); ++j) out[j][i] = a[i][j];
    return out;
}

inline Mat add(const Mat& a, const Mat& b, double s = 1.0) {
    Mat out = a;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[0].size(); ++j) out[i][j] += s * b[i][j];
    return out;
}

// Gauss-Jordan with partial pivoting.
inline Mat inverse(Mat a) {
    const std::size_t n = a.size();
    Mat inv = zeros(n, n);
    for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t p = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
        std::swap(a[c], a[p]);
        std::swap(inv[c], inv[p]);
        const double d = a[c][c];
        for (std::size_t j = 0; j < n; ++j) a[c][j] /= d, inv[c][j] /= d;
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c) continue;
            const double f = a[r][c];
            for (std::size_t j = 0; j < n; ++j) a[r][j] -= f * a[c][j], inv[r][j] -= f * inv[c][j];
        }
    }
    return inv;
}

}  // namespace naive

/// Reference Kalman filter on plain matrices.
struct NaiveKf {
    using Mat = naive::Mat;
    Mat x, p, q, r;  // x is 8x1

    static NaiveKf from(const KalmanState& k) {
        NaiveKf n{naive::zeros(8, 1), naive::zeros(8, 8), naive::zeros(8, 8), naive::zeros(4, 4)};
        for (int i = 0; i < 8; ++i) {
            n.x[i][0] = k.mean(i);
            for (int j = 0; j < 8; ++j) n.p[i][j] = k.covariance(i, j), n.q[i][j] = k.process_noise(i, j);
        }
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) n.r[i][j] = k.measurement_noise(i, j);
        return n;
    }

    static Mat f() {
        Mat m = naive::zeros(8, 8);
        for (int i = 0; i < 8; ++i) m[i][i] = 1;
        for (int i = 0; i < 4; ++i) m[i][i + 4] = 1;
        return m;
    }
    static Mat h() {
        Mat m = naive::zeros(4, 8);
        for (int i = 0; i < 4; ++i) m[i][i] = 1;
        return m;
    }

    void predict() {
        x = naive::mul(f(), x);
        p = naive::add(naive::mul(naive::mul(f(), p), naive::tr(f())), q);
    }
    // Textbook gain and the simple covariance form (I - KH) P.
    void update(const std::vector<double>& z) {
        const Mat s = naive::add(naive::mul(naive::mul(h(), p), naive::tr(h())), r);
        const Mat k = naive::mul(naive::mul(p, naive::tr(h())), naive::inverse(s));
        Mat y = naive::zeros(4, 1);
        const Mat hx = naive::mul(h(), x);
        for (int i = 0; i < 4; ++i) y[i][0] = z[i] - hx[i][0];
        x = naive::add(x, naive::mul(k, y));
        Mat ikh = naive::zeros(8, 8);
        for (int i = 0; i < 8; ++i) ikh[i][i] = 1;
        ikh = naive::add(ikh, naive::mul(k, h()), -1.0);
        p = naive::mul(ikh, p);
    }
};

inline Image blank(std::size_t h = 64, std::size_t w = 64) { return Image(h, w, 3, 0.5); }

inline TrackerState state_on_blank(const TrackerOptions& o, const BBox& box = {20, 20, 10, 10}) {
    const Image f = blank();
    return init_track({f, f}, box, tiny_config(), o);
}

inline BBox with_conf(BBox b, double c) {
    b.confidence = c;
    return b;
}

struct CorrectionResult {
    double corrected_error = 0;  // mean centre error of the returned boxes on forced frames
    double raw_error = 0;        // same for the decoded boxes
    std::size_t forced_frames = 0;
};

/// Noiseless linear motion on blank frames. Decoded boxes follow the ground
/// truth with confidence 0.6 except on every k-th frame, where the confidence
/// is forced to 0.1 and the box jumps to a distractor a few widths away.
inline CorrectionResult linear_motion_correction(std::size_t k, std::size_t frames, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(0.0, 6.283185307179586);
    const Image blank(160, 160, 3, 0.5);
    auto gt = [](std::size_t t) { return BBox::from_center(20 + 1.5 * t, 24 + 1.0 * t, 12, 12); };
    auto state = init_track({blank, blank}, gt(0), tiny_config(), TrackerOptions{});
    CorrectionResult r;
    for (std::size_t t = 1; t < frames; ++t) {
        BBox decoded = gt(t);
        decoded.confidence = 0.6;
        const bool forced = t % k == 0;
        if (forced) {
            const double a = angle(rng);
            decoded = BBox::from_center(decoded.cx() + 30 * std::cos(a), decoded.cy() + 30 * std::sin(a), 12, 12, 0.1);
        }
        const BBox out = finalize_step(state, {blank, blank}, decoded);
        if (!forced) continue;
        r.corrected_error += cle(out, gt(t));
        r.raw_error += cle(decoded, gt(t));
        ++r.forced_frames;
    }
    if (r.forced_frames) {
        r.corrected_error /= static_cast<double>(r.forced_frames);
        r.raw_error /= static_cast<double>(r.forced_frames);
    }
    return r;
}

}  // namespace mplt::testing
