#pragma once

// Classic fixed-step fourth-order Runge-Kutta integration of the null
// Hamiltonian flow, with no momentum reprojection and no dense output.  Kept
// deliberately plain so it exercises a different integration scheme than the
// library path it cross-checks.

#include "diamond/metric.hpp"

#include <array>
#include <vector>

namespace rk4 {

struct Sample {
    double s;
    diamond::Vec4 x;
    diamond::Vec4 zeta;
};

inline std::array<double, 8> rhs(const diamond::MetricSpec& spec, const std::array<double, 8>& y,
                                 double dirmul) {
    const diamond::Point p{y[0], diamond::Vec3(y[1], y[2], y[3])};
    const diamond::Vec4 zeta(y[4], y[5], y[6], y[7]);
    const diamond::Mat4 ginv = diamond::metric_inverse(spec, p);
    const std::array<diamond::Mat4, 4> dginv = diamond::metric_inverse_derivatives(spec, p);
    const diamond::Vec4 xdot = 2.0 * (ginv * zeta);
    std::array<double, 8> d{};
    for (int i = 0; i < 4; ++i) d[i] = dirmul * xdot[i];
    for (int a = 0; a < 4; ++a) d[4 + a] = -dirmul * zeta.dot(dginv[a] * zeta);
    return d;
}

inline std::vector<Sample> integrate(const diamond::MetricSpec& spec, const diamond::Point& q,
                                     const diamond::Vec4& v, double s_max, int steps,
                                     double dirmul = 1.0) {
    const diamond::Vec4 zeta0 = 0.5 * diamond::flat(spec, q, v);
    std::array<double, 8> y{q.T, q.X[0], q.X[1], q.X[2], zeta0[0], zeta0[1], zeta0[2], zeta0[3]};
    const double h = s_max / steps;

    std::vector<Sample> out;
    out.reserve(steps + 1);
    auto record = [&out](double s, const std::array<double, 8>& yy) {
        out.push_back({s, diamond::Vec4(yy[0], yy[1], yy[2], yy[3]),
                       diamond::Vec4(yy[4], yy[5], yy[6], yy[7])});
    };
    record(0.0, y);
    for (int k = 0; k < steps; ++k) {
        const std::array<double, 8> k1 = rhs(spec, y, dirmul);
        std::array<double, 8> ytmp{};
        for (int i = 0; i < 8; ++i) ytmp[i] = y[i] + 0.5 * h * k1[i];
        const std::array<double, 8> k2 = rhs(spec, ytmp, dirmul);
        for (int i = 0; i < 8; ++i) ytmp[i] = y[i] + 0.5 * h * k2[i];
        const std::array<double, 8> k3 = rhs(spec, ytmp, dirmul);
        for (int i = 0; i < 8; ++i) ytmp[i] = y[i] + h * k3[i];
        const std::array<double, 8> k4 = rhs(spec, ytmp, dirmul);
        for (int i = 0; i < 8; ++i)
            y[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        record((k + 1) * h, y);
    }
    return out;
}

} // namespace rk4
