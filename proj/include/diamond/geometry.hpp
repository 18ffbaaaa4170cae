#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace diamond {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Error taxonomy maps onto process exit codes: config -> 2, numeric -> 3.
enum class errc { config = 2, numeric = 3 };

class error : public std::runtime_error {
public:
    error(errc code, std::string msg) : std::runtime_error(std::move(msg)), code_(code) {}
    errc code() const noexcept { return code_; }

private:
    errc code_;
};

// Event in the global chart (T, X), T in (-1,1), X in R^3.
struct Point {
    double T = 0.0;
    Vec3 X = Vec3::Zero();

    Point() = default;
    Point(double t, const Vec3& x) : T(t), X(x) {}
    Point(double t, double x0, double x1, double x2) : T(t), X(x0, x1, x2) {}

    double r() const { return X.norm(); }
    Vec4 coords() const { return Vec4(T, X[0], X[1], X[2]); }
    static Point from_coords(const Vec4& c) { return Point(c[0], Vec3(c[1], c[2], c[3])); }
};

inline Vec4 spatial_embed(double t_component, const Vec3& x) {
    return Vec4(t_component, x[0], x[1], x[2]);
}

inline Vec3 spatial_part(const Vec4& v) { return Vec3(v[1], v[2], v[3]); }

// Boundary defining functions of the diamond: f_plus vanishes on the future
// null boundary, f_minus on the past one.  Interior iff both are negative.
inline double f_plus(const Point& p) { return p.T + p.r() - 1.0; }
inline double f_minus(const Point& p) { return -p.T + p.r() - 1.0; }

inline std::pair<double, double> boundary_defining(const Point& p) {
    return {f_plus(p), f_minus(p)};
}

inline bool interior(const Point& p, double margin = 0.0) {
    return f_plus(p) < -margin && f_minus(p) < -margin;
}

enum class Side { Splus, Sminus };

inline double boundary_residual(const Point& p, Side side) {
    return side == Side::Splus ? f_plus(p) : f_minus(p);
}

// S+/- membership: defining function vanishes and 0 < |X| < 1 (the tips and
// the spatial-infinity sphere R are excluded).
inline bool on_boundary(const Point& p, Side side, double tol = 1e-10) {
    double r = p.r();
    return std::abs(boundary_residual(p, side)) <= tol && r > tol && r < 1.0 - tol;
}

inline bool on_corner_sphere(const Point& p, double tol = 1e-10) {
    return std::abs(p.T) <= tol && std::abs(p.r() - 1.0) <= tol;
}

enum class CausalType { timelike, null, spacelike };
enum class TimeOrientation { future, past, neither };

struct CausalClass {
    CausalType type;
    TimeOrientation orientation;
};

} // namespace diamond
