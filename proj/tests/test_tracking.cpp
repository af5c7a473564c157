#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace mplt;
using namespace mplt::testing;

TEST(CropRegion, SideIsContextTimesGeometricMeanExtent) {
    Image frame(200, 200, 3, 0.2);
    auto crop = crop_region(frame, BBox{90, 97.5, 20, 5}, 4.0, 32);
    EXPECT_DOUBLE_EQ(crop.geometry.side, 40.0);
    EXPECT_DOUBLE_EQ(crop.geometry.center_x, 100.0);
    EXPECT_DOUBLE_EQ(crop.geometry.center_y, 100.0);
    EXPECT_EQ(crop.image.height, 32u);
    EXPECT_EQ(crop.image.width, 32u);
}

TEST(CropRegion, PointRoundTripWithinHalfPixel) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 300.0);
    for (int i = 0; i < 200; ++i) {
        const BBox box{u(rng), u(rng), 5 + u(rng) / 3, 5 + u(rng) / 3};
        auto g = crop_region(Image(8, 8, 1), box, 4.0, 256).geometry;
        const double fx = u(rng), fy = u(rng);
        const auto c = g.to_crop(fx, fy);
        const auto f = g.to_frame(c[0], c[1]);
        EXPECT_NEAR(f[0], fx, 0.5);
        EXPECT_NEAR(f[1], fy, 0.5);
        const BBox back = g.box_to_frame(g.box_to_crop(box));
        EXPECT_NEAR(back.cx(), box.cx(), 1e-9);
        EXPECT_NEAR(back.w, box.w, 1e-9);
    }
}

TEST(CropRegion, ResamplesLinearRampExactly) {
    // Bilinear sampling reproduces a linear image, so every interior crop
    // pixel must read back the frame coordinate of its centre.
    Image frame(100, 120, 1);
    for (std::size_t y = 0; y < 100; ++y)
        for (std::size_t x = 0; x < 120; ++x) frame.at(y, x, 0) = 2.0 * static_cast<double>(x) + 0.5 * static_cast<double>(y);
    auto crop = crop_region(frame, BBox{50, 40, 12, 9}, 2.0, 16);
    for (std::size_t v = 0; v < 16; ++v)
        for (std::size_t u = 0; u < 16; ++u) {
            const auto f = crop.geometry.to_frame(u + 0.5, v + 0.5);
            EXPECT_NEAR(crop.image.at(v, u, 0), 2.0 * (f[0] - 0.5) + 0.5 * (f[1] - 0.5), 1e-9);
        }
}

TEST(CropRegion, CornerBoxIsPaddedWithChannelMean) {
    Image frame(40, 40, 3);
    for (std::size_t y = 0; y < 40; ++y)
        for (std::size_t x = 0; x < 40; ++x) {
            frame.at(y, x, 0) = 0.25;
            frame.at(y, x, 1) = 0.5;
            frame.at(y, x, 2) = 0.75;
        }
    auto crop = crop_region(frame, BBox{0, 0, 6, 6}, 4.0, 24);
    // Top-left quadrant lies outside the frame.
    EXPECT_DOUBLE_EQ(crop.image.at(0, 0, 0), 0.25);
    EXPECT_DOUBLE_EQ(crop.image.at(0, 0, 2), 0.75);
    for (double v : crop.image.data) EXPECT_TRUE(std::isfinite(v));
}

TEST(CropRegion, DegenerateBoxThrows) {
    EXPECT_THROW(crop_region(blank(), BBox{1, 1, 0, 5}, 4.0, 16), std::invalid_argument);
    EXPECT_THROW(crop_region(blank(), BBox{1, 1, 5, -1}, 4.0, 16), std::invalid_argument);
}

TEST(InitTrack, TemplateCentredOnBoxWithZeroVelocity) {
    TrackerOptions o;
    const BBox box{17.3, 22.8, 9.0, 13.0};
    auto s = state_on_blank(o, box);
    const auto& g = s.template_geometry;
    const auto c = g.to_frame(g.out_width / 2.0, g.out_height / 2.0);
    EXPECT_NEAR(c[0], box.cx(), 0.5);
    EXPECT_NEAR(c[1], box.cy(), 0.5);
    EXPECT_DOUBLE_EQ(g.side, 2.0 * std::sqrt(9.0 * 13.0));
    EXPECT_EQ(s.template_rgb.height, 4u);
    EXPECT_EQ(s.template_rgb.width, 12u);
    for (int i = 4; i < 8; ++i) EXPECT_EQ(s.kalman.mean(i), 0.0);
    EXPECT_EQ(s.frame_index, 0u);
    EXPECT_TRUE(s.history.empty());
    EXPECT_NEAR(measurement_to_box(s.kalman.position(), s.kf_unit).cx(), box.cx(), 1e-12);
}

TEST(InitTrack, RejectsMisalignedFramesAndBadThresholds) {
    const Image a = blank(64, 64), b = blank(64, 60);
    EXPECT_THROW(init_track({a, b}, BBox{5, 5, 5, 5}, tiny_config(), TrackerOptions{}), std::invalid_argument);
    EXPECT_THROW(init_track({a, a}, BBox{5, 5, 0, 5}, tiny_config(), TrackerOptions{}), std::invalid_argument);
    TrackerOptions o;
    o.thr_b = 0.95;
    EXPECT_THROW(init_track({a, a}, BBox{5, 5, 5, 5}, tiny_config(), o), ConfigError);
}

TEST(Kalman, PredictMovesCentreBySingleVelocityStep) {
    KalmanState k = kalman_init(Vector4(0, 0, 10, 10), KalmanNoise{});
    k.mean.tail<4>() << 1, 1, 0, 0;
    auto p = kf_predict(k);
    EXPECT_EQ(p.position(), Vector4(1, 1, 10, 10));
    k.mean.tail<4>().setZero();
    EXPECT_EQ(kf_predict(k).position(), k.position());
}

TEST(Kalman, MatchesNaiveOracleOver100Cycles) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1.0);
    KalmanState k = kalman_init(Vector4(1, 2, 3, 4), KalmanNoise{});
    auto ref = NaiveKf::from(k);
    double worst = 0;
    for (int step = 0; step < 100; ++step) {
        k = kf_predict(k);
        ref.predict();
        const std::vector<double> z{n(rng) + step, n(rng), 3 + 0.1 * n(rng), 4 + 0.1 * n(rng)};
        k = kf_update(k, Vector4(z[0], z[1], z[2], z[3]));
        ref.update(z);
        for (int i = 0; i < 8; ++i) {
            worst = std::max(worst, std::abs(k.mean(i) - ref.x[i][0]));
            for (int j = 0; j < 8; ++j) worst = std::max(worst, std::abs(k.covariance(i, j) - ref.p[i][j]));
        }
    }
    EXPECT_LT(worst, 1e-9);
}

TEST(Kalman, VanishingMeasurementNoiseSnapsToMeasurement) {
    KalmanNoise noise;
    noise.r = 1e-12;
    auto k = kf_predict(kalman_init(Vector4(0, 0, 1, 1), noise));
    k = kf_update(k, Vector4(3.5, -2, 1.5, 0.5));
    EXPECT_LT((k.position() - Vector4(3.5, -2, 1.5, 0.5)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Kalman, NoiselessConstantVelocityExtrapolates) {
    KalmanNoise noise;
    noise.q_pos = noise.q_vel = 0;
    noise.r = 1e-12;
    auto k = kalman_init(Vector4(0, 0, 5, 5), noise);
    k = kf_update(kf_predict(k), Vector4(1, 1, 5, 5));
    k = kf_update(kf_predict(k), Vector4(2, 2, 5, 5));
    const Vector4 p = kf_predict(k).position();
    EXPECT_NEAR(p(0), 3.0, 1e-3);
    EXPECT_NEAR(p(1), 3.0, 1e-3);
}

TEST(Kalman, CovarianceStaysSymmetricPsd) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 5.0);
    std::bernoulli_distribution measure(0.6);
    auto k = kalman_init(Vector4(0, 0, 1, 1), KalmanNoise{});
    for (int step = 0; step < 1000; ++step) {
        k = kf_predict(k);
        if (measure(rng)) k = kf_update(k, Vector4(n(rng), n(rng), 1 + n(rng), 1 + n(rng)));
        ASSERT_LT((k.covariance - k.covariance.transpose()).cwiseAbs().maxCoeff(), 1e-9);
        Eigen::SelfAdjointEigenSolver<Matrix8> eig(k.covariance);
        ASSERT_GE(eig.eigenvalues().minCoeff(), -1e-9);
        ASSERT_GE(k.covariance.diagonal().minCoeff(), 0.0);
    }
}

TEST(Kalman, SingularInnovationIsNumericError) {
    KalmanState k;
    k.covariance.setZero();
    k.measurement_noise.setZero();
    try {
        kf_update(k, Vector4(1, 1, 1, 1));
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("singular"), std::string::npos);
    }
}

TEST(TemplateGate, FiresStrictlyAboveThreshold) {
    TrackerOptions o;
    auto s = state_on_blank(o);
    Image other(64, 64, 3, 0.9);
    for (std::size_t x = 0; x < 64; ++x) other.at(25, x, 0) = 0.0;  // non-constant content
    const auto before = s.template_rgb.data;
    EXPECT_FALSE(template_update_gate(s, {other, other}, with_conf({22, 22, 10, 10}, 0.91)));
    EXPECT_EQ(s.template_rgb.data, before);
    EXPECT_TRUE(template_update_gate(s, {other, other}, with_conf({22, 22, 10, 10}, 0.95)));
    EXPECT_NE(s.template_rgb.data, before);
    EXPECT_EQ(s.template_updates, 1u);
    EXPECT_DOUBLE_EQ(s.template_geometry.center_x, 27.0);
}

TEST(TemplateGate, DisabledFlagNeverReplaces) {
    TrackerOptions o;
    o.use_template_update = false;
    auto s = state_on_blank(o);
    Image other(64, 64, 3, 0.9);
    EXPECT_FALSE(template_update_gate(s, {other, other}, with_conf({22, 22, 10, 10}, 1.0)));
    EXPECT_EQ(s.template_updates, 0u);
}

class KfGate : public ::testing::Test {
protected:
    // Three confident frames moving +2 px per frame.
    void SetUp() override {
        state = state_on_blank(TrackerOptions{});
        for (int t = 1; t <= 3; ++t) finalize_step(state, {frame, frame}, with_conf({20.0 + 2 * t, 20, 10, 10}, 0.6));
    }
    Image frame = blank();
    TrackerState state;
};

TEST_F(KfGate, LowConfidenceReturnsKalmanPrediction) {
    const BBox decoded = with_conf({50, 50, 10, 10}, 0.10);
    auto copy = state;
    copy.frame_index = 4;
    const BBox expected = measurement_to_box(
        kf_replay(copy.history, 4, copy.kf_unit, copy.options.noise).position(), copy.kf_unit, 0.10);
    const BBox out = finalize_step(state, {frame, frame}, decoded);
    EXPECT_TRUE(state.last_corrected);
    EXPECT_NEAR(out.x, expected.x, 1e-12);
    EXPECT_NEAR(out.y, expected.y, 1e-12);
    EXPECT_DOUBLE_EQ(out.confidence, 0.10);
    EXPECT_GT(out.x, 25.0);  // extrapolates the motion
    EXPECT_FALSE(state.history.back().measured);
}

TEST_F(KfGate, ThresholdConfidenceReturnsDecodedBox) {
    const BBox decoded = with_conf({50, 50, 10, 10}, 0.25);
    const BBox out = finalize_step(state, {frame, frame}, decoded);
    EXPECT_FALSE(state.last_corrected);
    EXPECT_TRUE(same_geometry(out, decoded));
    EXPECT_TRUE(state.history.back().measured);
}

TEST_F(KfGate, DisabledFlagPassesDecodedThrough) {
    state.options.use_kalman = false;
    const BBox decoded = with_conf({50, 50, 10, 10}, 0.01);
    EXPECT_TRUE(same_geometry(finalize_step(state, {frame, frame}, decoded), decoded));
}

TEST_F(KfGate, NeedsTwoMeasuredFrames) {
    auto s = state_on_blank(TrackerOptions{});
    finalize_step(s, {frame, frame}, with_conf({22, 20, 10, 10}, 0.6));
    const BBox decoded = with_conf({50, 50, 10, 10}, 0.1);
    EXPECT_TRUE(same_geometry(finalize_step(s, {frame, frame}, decoded), decoded));
    EXPECT_FALSE(s.last_corrected);
}

TEST_F(KfGate, LowConfidenceBoxesNeverReachTheFilter) {
    auto a = state, b = state;
    // Frame 4 is uncertain in both runs but reports different boxes.
    finalize_step(a, {frame, frame}, with_conf({90, 5, 3, 30}, 0.05));
    finalize_step(b, {frame, frame}, with_conf({28, 20, 10, 10}, 0.05));
    finalize_step(a, {frame, frame}, with_conf({30, 20, 10, 10}, 0.7));
    finalize_step(b, {frame, frame}, with_conf({30, 20, 10, 10}, 0.7));
    const BBox pa = finalize_step(a, {frame, frame}, with_conf({0, 0, 4, 4}, 0.1));
    const BBox pb = finalize_step(b, {frame, frame}, with_conf({0, 0, 4, 4}, 0.1));
    EXPECT_EQ(pa.x, pb.x);
    EXPECT_EQ(pa.y, pb.y);
    EXPECT_EQ(a.kalman.mean, b.kalman.mean);
}

TEST(History, RingBufferBoundedAndOnlyRecentFramesMatter) {
    TrackerOptions o;
    o.history = 16;
    const Image f = blank();
    auto a = state_on_blank(o), b = state_on_blank(o);
    for (int t = 1; t <= 40; ++t) {
        BBox box{20.0 + 0.5 * t, 20.0 + 0.25 * t, 10, 10};
        BBox box_b = t == 2 ? BBox{1, 1, 30, 30} : box;  // differs only outside the final window
        finalize_step(a, {f, f}, with_conf(box, 0.6));
        finalize_step(b, {f, f}, with_conf(box_b, 0.6));
        ASSERT_LE(a.history.size(), 16u);
    }
    EXPECT_EQ(a.history.size(), 16u);
    const BBox ca = finalize_step(a, {f, f}, with_conf({0, 0, 5, 5}, 0.1));
    const BBox cb = finalize_step(b, {f, f}, with_conf({0, 0, 5, 5}, 0.1));
    EXPECT_TRUE(a.last_corrected);
    EXPECT_EQ(ca.x, cb.x);
    EXPECT_EQ(ca.y, cb.y);
}

TEST(LinearMotion, CorrectionBeatsRawOnForcedLowConfidenceFrames) {
    const auto r = linear_motion_correction(5, 60, 4);
    EXPECT_GT(r.forced_frames, 0u);
    EXPECT_LT(r.corrected_error, r.raw_error);
}

class Tracking : public ::testing::Test {
protected:
    void SetUp() override {
        std::mt19937_64 rng(5);
        auto spec = random_synth_spec(rng, 6, false, 48, 48);
        seq = synth_sequence(spec, 5);
        model = std::make_unique<Model<double>>(Model<double>::create(tiny_config(), 5));
    }
    SequenceRecord seq;
    std::unique_ptr<Model<double>> model;
};

TEST_F(Tracking, FlagsOffGivesRawDecodedBoxes) {
    TrackerOptions o;
    o.use_template_update = false;
    o.use_kalman = false;
    const Image rgb0 = to_unit(seq.rgb[0]), tir0 = to_unit(seq.tir[0]);
    auto state = init_track({rgb0, tir0}, seq.ground_truth[0], model->config(), o);
    for (std::size_t i = 1; i < seq.size(); ++i) {
        const Image rgb = to_unit(seq.rgb[i]), tir = to_unit(seq.tir[i]);
        const BBox raw = predict_box(state, {rgb, tir}, *model);
        const BBox out = track_step(state, {rgb, tir}, *model);
        EXPECT_TRUE(same_geometry(raw, out));
        EXPECT_EQ(state.history.back().confidence, raw.confidence);
    }
}

TEST_F(Tracking, SequenceRunsAreDeterministic) {
    auto a = track_sequence(seq, *model, TrackerOptions{});
    auto b = track_sequence(seq, *model, TrackerOptions{});
    ASSERT_EQ(a.boxes.size(), seq.size());
    EXPECT_TRUE(same_geometry(a.boxes[0], seq.ground_truth[0]));
    for (std::size_t i = 0; i < a.boxes.size(); ++i) {
        EXPECT_TRUE(same_geometry(a.boxes[i], b.boxes[i]));
        EXPECT_EQ(a.boxes[i].confidence, b.boxes[i].confidence);
    }
}

TEST_F(Tracking, ForwardFailureReportsFrameIndex) {
    const Image rgb0 = to_unit(seq.rgb[0]), tir0 = to_unit(seq.tir[0]);
    auto state = init_track({rgb0, tir0}, seq.ground_truth[0], model->config(), TrackerOptions{});
    state.template_rgb = Image(8, 8, 3);  // wrong template size
    const Image rgb = to_unit(seq.rgb[1]), tir = to_unit(seq.tir[1]);
    try {
        track_step(state, {rgb, tir}, *model);
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("frame 1"), std::string::npos) << e.what();
    }
    const Image small = blank(32, 32);
    EXPECT_THROW(track_step(state, {rgb, small}, *model), std::invalid_argument);
}
