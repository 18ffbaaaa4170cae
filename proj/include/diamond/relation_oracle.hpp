#pragma once

// Live relation evaluation and record-dump generation.
//
// Everything here consumes the true metric: it is the data-production side
// of the recovery pipeline. Blind consumers only ever see the record dumps
// produced by generate_relation_dump, loaded through DumpSource.

#include "diamond/cut_locus.hpp"
#include "diamond/reconstruction.hpp"
#include "diamond/scattering.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace diamond {

// Relation source answering every query by tracing through the true
// geometry. Scan enumerations search the sample lists installed with
// set_samples and certify each candidate with a live test; source_pairs
// enumerates all sample pairs, the per-pair queries establish membership.
class LiveRelationSource final : public RelationSource {
public:
    LiveRelationSource(MetricSpec spec, Region region, VMinusSpec vminus,
                       RelationOptions opts = {});

    void set_samples(std::vector<BoundaryLightVector> heads,
                     std::vector<BoundaryLightVector> sources);

    // Full evaluation with the private witness fields retained.
    RelationTuple evaluate(const BoundaryLightVector& v0, const BoundaryLightVector& v1,
                           const BoundaryLightVector& v2, const BoundaryLightVector& v3) const;

    // Constructive fourth slot: a source closing (v0 | v1, v2, .) to a member
    // tuple over the meeting point of the source traces, when one exists.
    std::optional<BoundaryLightVector> complete(const BoundaryLightVector& v0,
                                                const BoundaryLightVector& v1,
                                                const BoundaryLightVector& v2) const;

    bool member(const BoundaryLightVector& v0, const BoundaryLightVector& v1,
                const BoundaryLightVector& v2, const BoundaryLightVector& v3) const override;
    bool admissible(const BoundaryLightVector& v1, const BoundaryLightVector& v2,
                    const BoundaryLightVector& v3) const override;
    bool completes_pair(const BoundaryLightVector& v0, const BoundaryLightVector& v1,
                        const BoundaryLightVector& v2) const override;
    bool relates(const BoundaryLightVector& v0, const BoundaryLightVector& v1) const override;
    std::vector<BoundaryLightVector> head_samples() const override;
    std::vector<BoundaryLightVector> source_samples() const override;
    std::vector<std::pair<BoundaryLightVector, BoundaryLightVector>>
    source_pairs() const override;
    std::vector<BoundaryLightVector> related_heads(const BoundaryLightVector& v) const override;
    std::vector<BoundaryLightVector> sources_of(const BoundaryLightVector& v0) const override;
    std::vector<BoundaryLightVector> common_sources(const BoundaryLightVector& a,
                                                    const BoundaryLightVector& b) const override;

private:
    MetricSpec spec_;
    Region region_;
    VMinusSpec vminus_;
    RelationOptions opts_;
    std::vector<BoundaryLightVector> heads_;
    std::vector<BoundaryLightVector> sources_;
};

// Past-sheet vectors cut out by the backward cone of an interior point.
// Directions failing to cross, grazing, or landing outside the patch are
// skipped, so the result may hold fewer than count entries.
std::vector<BoundaryLightVector> cone_sources(const MetricSpec& spec, const Point& q, int count,
                                              const PatchSpec& u_minus,
                                              const IntegrateOptions& opts = {});

// Future-sheet vectors of the forward cone; each crossing direction is
// emitted once per tangent scale, scale copies sharing the base point.
std::vector<BoundaryLightVector> cone_heads(const MetricSpec& spec, const Point& q, int count,
                                            const PatchSpec& u_plus,
                                            const std::vector<double>& scales = {1.0},
                                            const IntegrateOptions& opts = {});

// Exact forward cone data for audits: observation set plus per-member seed
// direction, exit parameter, and optionally the cut parameter of the ray.
struct TrueCone {
    DirectionSet set;
    std::vector<Vec4> seed_direction;
    std::vector<double> exit_parameter;
    std::vector<double> cut_parameter;  // +inf when no cut precedes the exit
};

TrueCone true_observation_cone(const MetricSpec& spec, const Point& q, int count,
                               const PatchSpec& u_plus, bool with_cut = false,
                               const IntegrateOptions& opts = {}, const CutOptions& cut = {});

// Record production plan for one interior anchor point.
//
// Per head (direction x scale) the generator emits one record against every
// designated source pair; the fourth slot is constructed on the span conic at
// the anchor, so each record certifies the pair. Neighbourhood rings around
// the designated sources populate the source-sheet test for two designated
// witness heads. A companion anchor retracted in time supplies the earlier
// tangential surface required by the regularity certificate; it gets a single
// pair and no ring records. Reject records add non-member texture.
struct DumpAnchorPlan {
    Point q;
    int source_count = 5;
    int pair_records = 2;
    int head_count = 280;
    std::vector<double> head_scales = {0.7, 1.0, 1.4};
    bool vone_records = true;
    int vone_ring = 14;
    std::vector<double> vone_scales = {1.0, 1.6};
    double vone_ring_radius = 0.05;
    int reject_records = 6;
    bool companion = true;
    double companion_offset = 1e-4;
};

struct DumpPlan {
    std::vector<DumpAnchorPlan> anchors;
    unsigned seed = 1;
};

// Evaluated relation records covering each anchor's cone. Every record
// carries an honest relation_membership verdict; nothing is assumed true by
// construction.
std::vector<RelationTuple> generate_relation_dump(const MetricSpec& spec, const Region& region,
                                                  const VMinusSpec& vminus,
                                                  const PatchSpec& u_minus,
                                                  const PatchSpec& u_plus, const DumpPlan& plan,
                                                  const RelationOptions& opts = {});

}  // namespace diamond
