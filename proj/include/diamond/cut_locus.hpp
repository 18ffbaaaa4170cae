#pragma once

#include "diamond/geodesic.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace diamond {

struct CutOptions {
    int cone_samples = 512;   // shared direction fan per base point
    int targets = 32;         // probe points along the base geodesic
    double eps_connect = 1e-6;
    double exclusion_angle = 1e-3; // radians, rules out the base direction itself
    double prefilter_gate = 0.03;  // coarse polyline distance admitting a candidate
    double s_max = 10.0;
    IntegrateOptions integrate;
};

// Screen-projected position response along a traced null geodesic; M starts
// as s times the identity and degenerates exactly at conjugate parameters.
struct ScreenResponse {
    double s;
    Eigen::Matrix2d M;
};

std::vector<ScreenResponse> screen_response_scan(const MetricSpec& spec, const Trajectory& trace,
                                                 const JacobiTransport& jt);

// First parameter where the screen response degenerates, scanning up to the
// boundary exit (or s_hi when positive and smaller).  Detects simple roots by
// a determinant sign change and double roots by a singular-value collapse.
std::optional<double> first_conjugate(const MetricSpec& spec, const Point& q, const Vec4& v,
                                      double s_hi = 0.0,
                                      TraceDirection direction = TraceDirection::forward,
                                      const CutOptions& opts = {});

struct SecondGeodesic {
    double arrival;       // parameter on the base geodesic of the meeting point
    double alt_parameter; // parameter along the second geodesic
    Vec4 direction;       // seed tangent of the second geodesic at the base point
    double residual;
};

// Earliest point of the base geodesic that a distinct null geodesic from the
// same seed point also reaches, if any before the boundary exit.
std::optional<SecondGeodesic> second_geodesic_search(const MetricSpec& spec, const Point& q,
                                                     const Vec4& v,
                                                     TraceDirection direction = TraceDirection::forward,
                                                     const CutOptions& opts = {});

struct ConnectingSeed {
    Vec4 direction; // null seed tangent at q
    double parameter;
    double residual;
};

// Shooting search for a null geodesic from q through an explicit target,
// excluding a cone of exclusion_angle about the given heading.  Not finding
// one is a normal return.
std::optional<ConnectingSeed> second_geodesic_search(const MetricSpec& spec, const Point& q,
                                                     const Point& target,
                                                     const Vec4& exclusion_direction,
                                                     int cone_samples = 512,
                                                     const CutOptions& opts = {});

enum class CutReason { none, conjugate, second_geodesic };

struct CutResult {
    std::optional<double> parameter; // empty: no cut before the boundary exit
    CutReason reason = CutReason::none;
    Point location;   // meeting point when parameter is set
    double s_exit = 0.0;
};

CutResult null_cut_parameter(const MetricSpec& spec, const Point& q, const Vec4& v,
                             TraceDirection direction = TraceDirection::forward,
                             const CutOptions& opts = {});

struct Region {
    std::function<bool(const Point&)> contains;
};

struct CutCertificate {
    bool certified = false;
    double margin = 0.0;
    std::size_t sample_count = 0;
};

// Scans future null traces from the given base points and certifies that no
// conjugate point and no second-geodesic meeting occurs before each trace
// leaves the region.  margin = min over samples of
// (first unsafe parameter, capped at the domain exit) - (region exit).
CutCertificate no_cut_certificate(const MetricSpec& spec, const Region& region,
                                  const std::vector<Point>& base_points, int directions_per_point,
                                  const CutOptions& opts = {});

} // namespace diamond
