#pragma once

// Constant-velocity Kalman filter over (cx, cy, w, h) and their velocities.

#include <Eigen/Dense>
#include <sstream>

#include "mplt/box.hpp"
#include "mplt/tensor.hpp"

namespace mplt {

using Vector4 = Eigen::Matrix<double, 4, 1>;
using Vector8 = Eigen::Matrix<double, 8, 1>;
using Matrix4 = Eigen::Matrix<double, 4, 4>;
using Matrix8 = Eigen::Matrix<double, 8, 8>;
using Matrix48 = Eigen::Matrix<double, 4, 8>;

struct KalmanNoise {
    double q_pos = 1e-2;  // position/size process variance
    double q_vel = 1e-4;  // velocity process variance
    double r = 1e-1;      // measurement variance
    double p0 = 10.0;     // initial variance, all components
};

struct KalmanState {
    Vector8 mean = Vector8::Zero();
    Matrix8 covariance = Matrix8::Identity();
    Matrix8 process_noise = Matrix8::Identity();
    Matrix4 measurement_noise = Matrix4::Identity();

    Vector4 position() const { return mean.head<4>(); }
};

inline Matrix8 transition_matrix(double dt = 1.0) {
    Matrix8 f = Matrix8::Identity();
    for (int i = 0; i < 4; ++i) f(i, i + 4) = dt;
    return f;
}

inline Matrix48 observation_matrix() {
    Matrix48 h = Matrix48::Zero();
    h.leftCols<4>().setIdentity();
    return h;
}

/// State at `measurement` with zero velocities.
inline KalmanState kalman_init(const Vector4& measurement, const KalmanNoise& noise) {
    KalmanState k;
    k.mean.head<4>() = measurement;
    k.covariance = noise.p0 * Matrix8::Identity();
    k.process_noise.setZero();
    k.process_noise.diagonal() << Vector4::Constant(noise.q_pos), Vector4::Constant(noise.q_vel);
    k.measurement_noise = noise.r * Matrix4::Identity();
    return k;
}

/// x' = F x, P' = F P Fᵀ + Q.
inline KalmanState kf_predict(const KalmanState& k, double dt = 1.0) {
    const Matrix8 f = transition_matrix(dt);
    KalmanState out = k;
    out.mean = f * k.mean;
    out.covariance = f * k.covariance * f.transpose() + k.process_noise;
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
    return out;
}

/// Measurement update with H = [I₄ | 0]; Joseph-form covariance.
inline KalmanState kf_update(const KalmanState& k, const Vector4& z) {
    const Matrix48 h = observation_matrix();
    const Matrix4 s = h * k.covariance * h.transpose() + k.measurement_noise;
    Eigen::LDLT<Matrix4> ldlt(s);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0) {
        std::ostringstream os;
        os << "kf_update: innovation covariance is singular; diagonal = " << s.diagonal().transpose();
        throw NumericError(os.str());
    }
    const Eigen::Matrix<double, 8, 4> gain = ldlt.solve(h * k.covariance.transpose()).transpose();
    KalmanState out = k;
    out.mean = k.mean + gain * (z - h * k.mean);
    const Matrix8 a = Matrix8::Identity() - gain * h;
    out.covariance = a * k.covariance * a.transpose() + gain * k.measurement_noise * gain.transpose();
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
    return out;
}

inline Vector4 box_to_measurement(const BBox& b, double unit) {
    return Vector4(b.cx() / unit, b.cy() / unit, b.w / unit, b.h / unit);
}

inline BBox measurement_to_box(const Vector4& m, double unit, double confidence = 0) {
    return BBox::from_center(m(0) * unit, m(1) * unit, m(2) * unit, m(3) * unit, confidence);
}

}  // namespace mplt
