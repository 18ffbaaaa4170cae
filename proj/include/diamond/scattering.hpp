#pragma once

#include "diamond/cut_locus.hpp"
#include "diamond/geodesic.hpp"
#include "diamond/mesh.hpp"
#include "diamond/metric.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace diamond {

// Boundary point paired with a null tangent crossing the sheet: p lies on the
// stated sheet, w is future null, and g(w, nu) < 0 against the sheet's future
// normal. Vectors on the past sheet enter the domain, vectors on the future
// sheet leave it.
struct BoundaryLightVector {
    Point p;
    Vec4 w = Vec4::Zero();
    Side side = Side::Sminus;
};

// Validates the constraints and classifies the sheet; throws on violation.
BoundaryLightVector make_boundary_vector(const MetricSpec& spec, const Point& p, const Vec4& w,
                                         double eps_boundary = 1e-9, double eps_null = 1e-9);

// Open subset of one boundary sheet given by a membership predicate; contains()
// also enforces the sheet equation and the annulus bounds 0 < |X| < 1.
struct PatchSpec {
    Side side = Side::Sminus;
    std::function<bool(const Point&)> member;

    bool contains(const Point& p) const;
};

// One head vector on the future sheet against three source vectors on the past
// sheet, with the evaluated verdict and its supporting data.
struct RelationTuple {
    BoundaryLightVector v0, v1, v2, v3;
    bool verdict = false;
    std::optional<Point> witness;
    Eigen::Vector3d coefficients = Eigen::Vector3d::Zero();
    std::string reject_reason;
};

// Admissibility filter over source triples. Schemes 1 and 3 accept every
// triple of patch members; schemes 2 and 4 additionally require pairwise
// forward meetings to avoid the forbidden region and the restricted lens
// image to land in the inner boundary set.
struct VMinusSpec {
    int scheme = 1;
    std::function<bool(const BoundaryLightVector&, const BoundaryLightVector&,
                       const BoundaryLightVector&)>
        member;
};

// Hooks supplying the reconstructed-region data used by the filtered schemes.
struct VMinusData {
    std::function<bool(const Point&)> forbidden;
    std::function<bool(const BoundaryLightVector&)> lands_inner;
};

// Traces the vector across the domain to the opposite sheet: past-sheet input
// maps forward to the future sheet, future-sheet input maps backward.
BoundaryLightVector lens_relation(const MetricSpec& spec, const BoundaryLightVector& v,
                                  const IntegrateOptions& opts = {}, double s_max = 10.0);

struct SurfaceCrossing {
    Point point;
    Vec4 tangent = Vec4::Zero(); // future trace tangent at the crossing
    double parameter = 0.0;      // trace parameter of the crossing
    int triangle = -1;
    Vec3 barycentric = Vec3::Zero();
    double surface_t = 0.0;
};

// First transversal crossing of the traced vector with the meshed surface, or
// nullopt when the trace reaches the opposite sheet without meeting it.
// Throws "tangential crossing" when the trace touches the surface tangentially.
std::optional<SurfaceCrossing> restricted_lens(const MetricSpec& spec,
                                               const BoundaryLightVector& v,
                                               const CongruenceMesh& surface,
                                               const IntegrateOptions& opts = {},
                                               double tangential_tol = 1e-6);

// Pairwise distinctness of the source base points and of the head base point
// against the lens images of the sources.
bool is_proper(const MetricSpec& spec, const RelationTuple& tuple, double delta_distinct = 1e-6);

struct IntersectionOptions {
    double eps_intersect = 1e-7; // declare a meet below this separation
    double gate = 0.05;          // coarse node-pair prefilter radius
    double s_max = 10.0;
    IntegrateOptions integrate;
};

struct ForwardIntersection {
    Point point;
    double parameter_a = 0.0;
    double parameter_b = 0.0;
    double separation = 0.0;
};

// Common point of the two forward traces inside the closed region, if any.
// Two distinct sub-tolerance meetings inside the region throw "certificate
// violated": the caller promised a region without cut points.
std::optional<ForwardIntersection> forward_intersection(const MetricSpec& spec,
                                                        const BoundaryLightVector& va,
                                                        const BoundaryLightVector& vb,
                                                        const Region& region,
                                                        const IntersectionOptions& opts = {});

struct SpanResult {
    bool member = false;
    Eigen::Vector3d coefficients = Eigen::Vector3d::Zero();
    bool single_generator = false;
    double residual = 0.0; // relative least-squares residual
};

// Least-squares membership of w0 in span(w1, w2, w3). Throws "degenerate
// frame" when the generators are numerically rank-deficient; flags the case
// where w0 is proportional to a single generator.
SpanResult span_membership(const Vec4& w0, const Vec4& w1, const Vec4& w2, const Vec4& w3,
                           double sigma_min = 1e-6, double eps_span = 1e-6);

struct RelationOptions {
    IntersectionOptions intersect;
    double delta_distinct = 1e-6;
    double eps_span = 1e-6;
    // When set, condition (c) additionally verifies the witness parameter
    // against the cut parameter of the backward head ray. Inside a certified
    // region the bound holds automatically, so the default skips the scan.
    bool enforce_cut_window = false;
    CutOptions cut;
};

// Full membership evaluation: admissible triple, proper tuple, pairwise
// forward meetings agreeing on a witness inside the region, backward head
// passage through the witness, and span membership of the head tangent there.
// Returns the tuple with verdict, witness, coefficients, and reject_reason.
RelationTuple relation_membership(const MetricSpec& spec, const RelationTuple& tuple,
                                  const Region& region, const VMinusSpec& vminus,
                                  const RelationOptions& opts = {});

VMinusSpec build_V_minus(const MetricSpec& spec, int scheme, const PatchSpec& u_minus,
                         const VMinusData& data = {}, const IntersectionOptions& opts = {});

// Trace from an interior point and package the boundary hit: backward traces
// produce past-sheet vectors, forward traces future-sheet vectors.
BoundaryLightVector shoot_to_boundary(const MetricSpec& spec, const Point& q, const Vec3& heading,
                                      TraceDirection direction, const IntegrateOptions& opts = {});
BoundaryLightVector shoot_to_boundary(const MetricSpec& spec, const Point& q, const Vec4& v,
                                      TraceDirection direction, const IntegrateOptions& opts = {});

// Future null combinations of the three generators at q (the null conic of
// their span), normalized and evenly sampled by the pencil of lines through
// the first generator.
std::vector<Vec4> null_span_circle(const MetricSpec& spec, const Point& q, const Vec4& w1,
                                   const Vec4& w2, const Vec4& w3, int count);

// JSON-lines serialization of evaluated tuples. Records carry the private
// witness data for audits; blind consumers must drop those fields at load.
std::string relation_record(const RelationTuple& t);
RelationTuple parse_relation_record(const std::string& line);
void write_relation_dump(std::ostream& os, const std::vector<RelationTuple>& tuples);
std::vector<RelationTuple> read_relation_dump(std::istream& is);

} // namespace diamond
