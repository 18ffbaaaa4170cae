#pragma once

// Recovery of interior observation sets, points, charts, and the conformal
// class from boundary relation data.
//
// Everything here except point_recovery and screen_to_ray runs blind: the
// only geometric inputs are a RelationSource answering membership queries,
// patch descriptions of the two boundary sheets, and an admissibility rule
// for source triples. DumpSource erases the private witness fields of each
// record at load, so no interior information can leak past this boundary.
// Distances between boundary light vectors are measured in sheet chart
// coordinates throughout.

#include "diamond/geometry.hpp"
#include "diamond/scattering.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace diamond {

// Distance between boundary light vectors with the tangent scale quotiented
// out: chart distance of base points plus chart angle gap of the rays.
double member_distance(const BoundaryLightVector& a, const BoundaryLightVector& b);

// Distance in the full (point, tangent) embedding; scale copies stay apart.
double raw_distance(const BoundaryLightVector& a, const BoundaryLightVector& b);

// Finite sample of a set of boundary light vectors.
//
// Invariants: no two members lie within delta_distinct in the raw embedding;
// adjacency lists k nearest members under member_distance; grid_scale is the
// median nearest-neighbour chart spacing of the distinct base points.
struct DirectionSet {
    std::vector<BoundaryLightVector> members;
    std::vector<std::vector<int>> adjacency;
    double grid_scale = 0.0;
    std::string diagnostic;

    bool empty() const { return members.empty(); }
    int size() const { return static_cast<int>(members.size()); }
};

struct SetOptions {
    double delta_distinct = 1e-6;
    int k = 12;
};

DirectionSet make_direction_set(std::vector<BoundaryLightVector> members,
                                const SetOptions& opts = {});

// Base points of a direction set with tangent data dropped (duplicates merged).
struct ObservationSet {
    std::vector<Point> points;
};

ObservationSet project(const DirectionSet& c);

// Directed and symmetric set distances under member_distance. The early_stop
// bound lets callers abandon a comparison once it cannot stay below threshold.
double set_hausdorff(const DirectionSet& a, const DirectionSet& b,
                     double early_stop = std::numeric_limits<double>::infinity());

bool within_set(const BoundaryLightVector& v, const DirectionSet& c, double eps);

// Local quadratic surface patch fitted to base points near a query position.
// Height is measured along n over the (e1, e2) plane through origin:
//   h(u, v) = c0 + c1 u + c2 v + c3 u^2 + c4 u v + c5 v^2.
struct MongePatch {
    Vec3 origin;
    Vec3 e1, e2, n;
    std::array<double, 6> coeff{};
    double rms = 0.0;
    int points = 0;

    double height(double u, double v) const;
    // Unit normal of the fitted graph above (u, v).
    Vec3 graph_normal(double u, double v) const;
    // Signed offset of x from the fitted graph, positive along n.
    double signed_offset(const Vec3& x) const;
};

// Fits a patch centred at `at` through the given spatial points.
// Throws when fewer than six points are supplied.
MongePatch fit_monge_patch(const std::vector<Vec3>& pts, const Vec3& at);

// Answers membership queries against the scattering relation. Sample
// enumeration backs the scan operations; a finite dump and a live evaluator
// both satisfy this contract.
class RelationSource {
public:
    virtual ~RelationSource() = default;

    virtual bool member(const BoundaryLightVector& v0, const BoundaryLightVector& v1,
                        const BoundaryLightVector& v2, const BoundaryLightVector& v3) const = 0;

    // Source-triple admissibility under the active V- data.
    virtual bool admissible(const BoundaryLightVector& v1, const BoundaryLightVector& v2,
                            const BoundaryLightVector& v3) const = 0;

    // True when some fourth slot completes (v0 | v1, v2, .) to a member.
    virtual bool completes_pair(const BoundaryLightVector& v0, const BoundaryLightVector& v1,
                                const BoundaryLightVector& v2) const = 0;

    // True when v1 appears among the sources of some member tuple with head v0.
    virtual bool relates(const BoundaryLightVector& v0,
                         const BoundaryLightVector& v1) const = 0;

    virtual std::vector<BoundaryLightVector> head_samples() const = 0;
    virtual std::vector<BoundaryLightVector> source_samples() const = 0;

    // Unordered source pairs occurring inside member tuples.
    virtual std::vector<std::pair<BoundaryLightVector, BoundaryLightVector>>
    source_pairs() const = 0;

    // Heads of member tuples having v among their sources.
    virtual std::vector<BoundaryLightVector>
    related_heads(const BoundaryLightVector& v) const = 0;

    // Sources of member tuples with head v0.
    virtual std::vector<BoundaryLightVector>
    sources_of(const BoundaryLightVector& v0) const = 0;

    // Sources appearing with both heads in member tuples.
    virtual std::vector<BoundaryLightVector>
    common_sources(const BoundaryLightVector& a, const BoundaryLightVector& b) const = 0;
};

// Relation source backed by a finite record dump.
//
// Witness points and span coefficients are erased from every record at load.
// Queries match records by quantised coordinates (key_scale decimal digits),
// so lookups expect vectors reproduced exactly from the dump itself.
//
// Admissibility is answered from the records where possible: a record whose
// source triple was rejected as inadmissible pins false, any record that got
// past that check pins true. Unrecorded triples fall back to the supplied
// V- rule, or to false when none is given.
class DumpSource final : public RelationSource {
public:
    explicit DumpSource(std::vector<RelationTuple> records,
                        std::optional<VMinusSpec> fallback = {},
                        double key_scale = 1e7);

    bool member(const BoundaryLightVector&, const BoundaryLightVector&,
                const BoundaryLightVector&, const BoundaryLightVector&) const override;
    bool admissible(const BoundaryLightVector&, const BoundaryLightVector&,
                    const BoundaryLightVector&) const override;
    bool completes_pair(const BoundaryLightVector&, const BoundaryLightVector&,
                        const BoundaryLightVector&) const override;
    bool relates(const BoundaryLightVector&, const BoundaryLightVector&) const override;
    std::vector<BoundaryLightVector> head_samples() const override;
    std::vector<BoundaryLightVector> source_samples() const override;
    std::vector<std::pair<BoundaryLightVector, BoundaryLightVector>>
    source_pairs() const override;
    std::vector<BoundaryLightVector> related_heads(const BoundaryLightVector&) const override;
    std::vector<BoundaryLightVector> sources_of(const BoundaryLightVector&) const override;
    std::vector<BoundaryLightVector> common_sources(const BoundaryLightVector&,
                                                    const BoundaryLightVector&) const override;

    const std::vector<RelationTuple>& records() const { return records_; }
    std::size_t member_count() const { return member_count_; }

private:
    using Key = std::array<std::int64_t, 9>;
    struct KeyHash {
        std::size_t operator()(const Key& k) const;
    };

    Key key_of(const BoundaryLightVector& v) const;
    int head_index(const BoundaryLightVector& v) const;
    int source_index(const BoundaryLightVector& v) const;

    std::vector<RelationTuple> records_;
    std::optional<VMinusSpec> fallback_;
    double key_scale_;
    std::size_t member_count_ = 0;

    std::vector<BoundaryLightVector> heads_;
    std::vector<BoundaryLightVector> sources_;
    std::vector<char> head_member_;     // per head: appears in some member tuple
    std::vector<char> source_member_;   // per source: appears in some member tuple
    std::unordered_map<Key, int, KeyHash> head_ids_;
    std::unordered_map<Key, int, KeyHash> source_ids_;
    std::vector<std::vector<int>> head_sources_;    // per head: sorted source ids
    std::vector<std::vector<int>> source_heads_;    // per source: sorted head ids
    std::vector<std::pair<int, int>> pair_list_;    // unordered source id pairs, first seen order
    std::unordered_map<std::uint64_t, std::vector<int>> pair_heads_;  // pair -> sorted head ids
    std::unordered_map<std::uint64_t, char> triple_state_;            // packed -> 0 false, 1 true
    struct TupleKeyHash {
        std::size_t operator()(const std::array<std::int64_t, 36>& k) const;
    };
    std::unordered_map<std::array<std::int64_t, 36>, bool, TupleKeyHash> tuples_;
};

// Heads the relation completes over the fixed source pair, restricted to the
// supplied candidate grid. Empty result when no head completes.
DirectionSet conical_piece(const RelationSource& R, const BoundaryLightVector& v1,
                           const BoundaryLightVector& v2,
                           const std::vector<BoundaryLightVector>& head_grid,
                           const SetOptions& opts = {});

struct ConeOptions {
    SetOptions set;
    // Local dimension test: neighbourhood singular values must satisfy
    // s3 >= dominance_floor * s1 and s4 <= dominance_gap * s3.
    double dominance_gap = 0.25;
    double dominance_floor = 0.01;
    int min_members = 20;
};

// Union of completed heads over partner scans of both sources, filtered to
// locally three dimensional pieces. Sparse data yields an empty set with
// diagnostic "insufficient sampling".
DirectionSet candidate_cone(const RelationSource& R, const BoundaryLightVector& v1,
                            const BoundaryLightVector& v2, const ConeOptions& opts = {});

struct EarliestOptions {
    // Angular window identifying a shared sheet generator.
    double generator_tol = 1e-6;
    // Arrival-time gaps below this count as ties and are kept.
    double delta_distinct = 1e-6;
};

// Keeps members whose arrival is not strictly preceded on the same generator.
DirectionSet earliest_part(const DirectionSet& c, const EarliestOptions& opts = {});

struct SmoothOptions {
    int k = 12;
    // Quadratic patch fit must reproduce the neighbourhood within this rms.
    double eps_smooth = 1e-3;
    double merge_tol = 1e-9;
};

// Keeps members whose base-point neighbourhood fits a smooth surface patch.
// Members short of neighbours are dropped and counted in the diagnostic.
DirectionSet smooth_part(const DirectionSet& c, const SmoothOptions& opts = {});

enum class TangencyVerdict { tangential, transversal };
enum class TangencyOrdering { first_earlier, second_earlier, incomparable };

struct TangencyRecord {
    Point p;
    Vec3 normal_a, normal_b;
    double angle = 0.0;
    TangencyVerdict verdict = TangencyVerdict::transversal;
    TangencyOrdering ordering = TangencyOrdering::incomparable;
    int matched_generators = 0;
};

struct TangencyOptions {
    int k = 12;
    double search_radius = 0.25;
    double theta_tan = 1e-3;
    // Angular window pairing arrivals on a common generator.
    double generator_tol = 5e-2;
    // Minimum arrival-time gap for a strict order witness.
    double delta_order = 1e-6;
};

// Compares two observation surfaces near p: principal angle of fitted tangent
// planes, and arrival order along shared generators. Throws "insufficient
// data" when either set is too thin near p.
TangencyRecord tangency_order(const DirectionSet& ca, const DirectionSet& cb,
                              const Point& p, const TangencyOptions& opts = {});

struct RegularOptions {
    SmoothOptions smooth;
    TangencyOptions tangency;
};

// Smooth members confirmed by some library surface tangential at the base
// point and strictly earlier there. Throws "library required" when the
// library is empty.
DirectionSet regular_part(const DirectionSet& c_ear,
                          const std::vector<DirectionSet>& library,
                          const RegularOptions& opts = {});

struct VOneOptions {
    SetOptions set;
    double dominance_gap = 0.25;
    double dominance_floor = 0.01;
    // Number of neighbourhood source triples tested for admissibility.
    int triple_checks = 16;
    unsigned seed = 1;
};

// Decides whether v1 belongs to the first-slot source set determined by the
// head pair: v1 must relate to both heads, sit on a locally three dimensional
// sheet of such sources, and have a neighbourhood whose triples are all
// members of the source candidate set. Head arguments must be members of
// c_reg.
bool v_one_membership(const RelationSource& R, const VMinusSpec& vminus,
                      const BoundaryLightVector& v1, const DirectionSet& c_reg,
                      const BoundaryLightVector& v0, const BoundaryLightVector& v0_tilde,
                      const VOneOptions& opts = {});

struct RecoveredSet {
    DirectionSet c_reg;
    DirectionSet c_ear;
    BoundaryLightVector v1, v2;
    std::vector<std::pair<BoundaryLightVector, BoundaryLightVector>> merged_pairs;
};

struct ReconstructOptions {
    ConeOptions cone;
    EarliestOptions earliest;
    RegularOptions regular;
    VOneOptions vone;
    // Head pairs attempted when hunting the existential witnesses.
    int vone_attempts = 24;
    // Sources near the tested one needed before a head counts as a candidate.
    int vone_support = 8;
    double vone_support_radius = 0.5;
    // Deduplication threshold; zero means the larger grid_scale of the pair.
    double dedup_scale = 0.0;
};

// Full enumeration pass: one recovered observation set per distinct interior
// point visible in the relation data. Pairs whose candidate cone is thin are
// skipped; sets failing the source-sheet test are dropped; survivors are
// deduplicated by symmetric set distance.
std::vector<RecoveredSet> reconstruct_all(const RelationSource& R, const VMinusSpec& vminus,
                                          const PatchSpec& u_minus, const PatchSpec& u_plus,
                                          const ReconstructOptions& opts = {});

struct PointRecovery {
    Point estimate;
    double residual = 0.0;
    int rays_used = 0;
    bool ill_posed = false;
};

struct PointRecoveryOptions {
    IntegrateOptions integrate;
    double s_max = 10.0;
    int max_iterations = 60;
    double tol = 1e-12;
};

// Least-squares meeting point of the backward rays of a recovered set.
// Test-side check only: consumes the true metric, never dump data.
PointRecovery point_recovery(const MetricSpec& spec, const DirectionSet& c_reg,
                             const PointRecoveryOptions& opts = {});

// Curve on the future sheet, parametrised over [-1, 1].
struct BoundaryCurve {
    std::function<Point(double)> gamma;
};

struct CrossingOptions {
    int coarse_samples = 201;
    int k = 12;
    double search_radius = 0.25;
    double tol = 1e-10;
};

// Parameter at which the curve crosses the observation surface, found as the
// unique sign change of the fitted signed offset. Zero or several crossings
// throw "outside R(mu)".
double earliest_observation_time(const DirectionSet& c_reg, const BoundaryCurve& mu,
                                 const CrossingOptions& opts = {});

// Produces the observation set of the interior point labelled by a
// coordinate offset; offset zero is the chart centre.
using SetFamily = std::function<DirectionSet(const Vec4&)>;

struct Chart {
    std::array<int, 4> curve_index{};
    Vec4 x_center = Vec4::Zero();
    Mat4 jacobian = Mat4::Zero();
    double sigma_min = 0.0;  // smallest singular value relative to the largest
};

struct ChartOptions {
    double fd_step = 1e-3;
    double sigma_chart = 1e-4;
    CrossingOptions crossing;
};

// Selects four curves whose crossing-time map has the best-conditioned
// Jacobian at the centre. Throws "degenerate curve family" when no choice
// reaches sigma_chart.
Chart chart_build(const SetFamily& family, const std::vector<BoundaryCurve>& curves,
                  const ChartOptions& opts = {});

// Recovered points along a one-parameter family of interior labels; the
// family direction at parameter zero estimates a ray of the light cone.
struct TangencyFamily {
    std::vector<double> parameters;
    std::vector<Vec4> estimates;
};

Vec4 family_direction(const TangencyFamily& f);

struct ConformalFit {
    Mat4 Q = Mat4::Zero();  // unit Frobenius norm, Q(0,0) < 0
    double residual = 0.0;
    int rays = 0;
};

// Quadratic form annihilating the given ray directions. Fewer than nine rays
// or a rank-deficient ray family throw "underdetermined conformal fit".
ConformalFit conformal_recover(const std::vector<Vec4>& rays);
ConformalFit conformal_recover(const std::vector<TangencyFamily>& families);

// Unique future null ray at p orthogonal to a two dimensional screen inside
// the future sheet's tangent space. A screen containing the sheet generator
// throws "radical-degenerate screen".
Vec4 screen_to_ray(const MetricSpec& spec, const Point& p, const Vec4& s1, const Vec4& s2,
                   double tol = 1e-9);

}  // namespace diamond
