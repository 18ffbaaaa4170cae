#pragma once

#include "diamond/metric.hpp"

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

namespace diamond {

enum class TraceDirection { forward, backward };

struct GeodesicState {
    Point x;
    Vec4 zeta; // future-directed momentum covector
};

struct IntegrateOptions {
    double rel_tol = 1e-10;
    double abs_tol = 1e-12;
    double max_step = 0.01;
    double eps_null = 1e-10; // relative null tolerance for seed validation
};

struct TrajectoryNode {
    double s;
    std::array<double, 8> y;    // T, X, zeta
    std::array<double, 8> dyds; // derivative of the stored curve
};

// Null bicharacteristic strand with cubic Hermite dense output.  The affine
// parameter s is nonnegative and increases along the trace direction; zeta is
// the future momentum throughout, so tangent() is future-pointing even on
// backward traces.
class Trajectory {
public:
    const MetricSpec* spec = nullptr;
    TraceDirection direction = TraceDirection::forward;
    Point seed_point;
    Vec4 seed_tangent = Vec4::Zero();
    std::vector<TrajectoryNode> nodes;

    double s_end() const { return nodes.back().s; }
    std::size_t node_below(double s) const;

    GeodesicState state(double s) const;
    Point point(double s) const;
    Vec4 tangent(double s) const;     // future tangent 2 g^{-1} zeta
    double hamiltonian(double s) const;

    // Coordinate 4-position, cheap accessor used by intersection scans.
    Vec4 position4(double s) const { return point(s).coords(); }
};

// Integrates Hamilton's equations for the half-Hamiltonian seed
// zeta0 = (1/2) v^flat (so dx/ds(0) = v), reprojecting the momentum onto the
// null cone after every accepted step.
Trajectory integrate_null(const MetricSpec& spec, const Point& q, const Vec4& v, double s_max,
                          TraceDirection direction = TraceDirection::forward,
                          const IntegrateOptions& opts = {});

// Raw Hamiltonian flow from an explicit momentum covector; used by linearized
// cross-checks that must see the unprojected dynamics.
Trajectory integrate_momentum(const MetricSpec& spec, const Point& q, const Vec4& zeta0,
                              double s_max, TraceDirection direction = TraceDirection::forward,
                              const IntegrateOptions& opts = {}, bool reproject = false);

struct BoundaryHit {
    Side which;
    Point point;
    Vec4 tangent;           // future-pointing at the hit
    double parameter;       // s_hit along the trace
    double transversality;  // g(tangent, future normal); negative = transversal
};

struct TraceResult {
    Trajectory trajectory; // truncated at the hit
    BoundaryHit hit;
};

// Forward traces exit through S+, backward traces through S-.  The crossing
// is bracketed on the dense output and refined by re-integration to eps_hit.
TraceResult trace_to_boundary(const MetricSpec& spec, const Point& q, const Vec4& v,
                              TraceDirection direction = TraceDirection::forward,
                              double s_max = 10.0, const IntegrateOptions& opts = {},
                              double eps_hit = 1e-10, double grazing_tol = 1e-6);

// Transversality pairing g(w, nu) with the future-pointing normal nu of the
// given side; equals -df_plus(w) on S+ and df_minus(w) on S-.
double transversality(const Point& p, Side side, const Vec4& w);

using Mat8 = Eigen::Matrix<double, 8, 8>;

struct JacobiNode {
    double s;
    std::array<double, 8> y;
    std::array<double, 8> dy;
    Mat8 J;
    Mat8 dJ;
};

// Propagator of the linearized Hamiltonian flow along the same seed as the
// trajectory; D(s) = dx(s)/dzeta(0) is the top-right 4x4 block.
class JacobiTransport {
public:
    TraceDirection direction = TraceDirection::forward;
    std::vector<JacobiNode> nodes;

    double s_end() const { return nodes.back().s; }
    Mat8 propagator(double s) const; // cubic Hermite between nodes
    Mat4 D(double s) const;
    GeodesicState base_state(double s) const;
};

JacobiTransport jacobi_transport(const MetricSpec& spec, const Trajectory& trajectory);

// kappa-orthonormal spatial screen pair orthogonal to the spatial direction
// of v, with the covector seeds feeding D(s).
struct ScreenFrame {
    Vec4 u1, u2;
    Vec4 E1, E2;
};

ScreenFrame screen_frame(const MetricSpec& spec, const Point& q, const Vec4& v);

} // namespace diamond
