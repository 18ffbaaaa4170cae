#include "diamond/relation_oracle.hpp"

#include "diamond/geodesic.hpp"
#include "diamond/metric.hpp"
#include "diamond/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace diamond {

namespace {

bool nearly_parallel(const Vec4& a, const Vec4& b, double tol = 1e-8) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na <= 0.0 || nb <= 0.0) return true;
    return std::abs(a.dot(b)) / (na * nb) > 1.0 - tol;
}

BoundaryLightVector scaled(const BoundaryLightVector& v, double lam) {
    return {v.p, lam * v.w, v.side};
}

// Parameter on the trajectory closest to a fixed event.
std::pair<double, double> closest_on(const Trajectory& t, const Vec4& x) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < static_cast<int>(t.nodes.size()); ++i) {
        const double d = (t.position4(t.nodes[i].s) - x).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    double lo = t.nodes[std::max(0, best - 1)].s;
    double hi = t.nodes[std::min<int>(t.nodes.size() - 1, best + 1)].s;
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - gr * (hi - lo);
    double x2 = lo + gr * (hi - lo);
    double f1 = (t.position4(x1) - x).squaredNorm();
    double f2 = (t.position4(x2) - x).squaredNorm();
    for (int it = 0; it < 80 && hi - lo > 1e-14; ++it) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = (t.position4(x1) - x).squaredNorm();
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = (t.position4(x2) - x).squaredNorm();
        }
    }
    const double s = 0.5 * (lo + hi);
    return {s, (t.position4(s) - x).norm()};
}

struct Approach {
    double sa = 0.0, sb = 0.0;
    double dist = std::numeric_limits<double>::infinity();
    Vec4 mid = Vec4::Zero();
};

Approach closest_approach(const Trajectory& a, const Trajectory& b) {
    Approach out;
    for (const auto& na : a.nodes) {
        const Vec4 xa = a.position4(na.s);
        for (const auto& nb : b.nodes) {
            const double d = (xa - b.position4(nb.s)).norm();
            if (d < out.dist) {
                out.dist = d;
                out.sa = na.s;
                out.sb = nb.s;
            }
        }
    }
    for (int round = 0; round < 6; ++round) {
        auto [sa, da] = closest_on(a, b.position4(out.sb));
        out.sa = sa;
        auto [sb, db] = closest_on(b, a.position4(out.sa));
        out.sb = sb;
        out.dist = db;
    }
    out.mid = 0.5 * (a.position4(out.sa) + b.position4(out.sb));
    return out;
}

// A cone ray: the boundary vector it cuts out plus its tangent at the anchor.
struct ConeRay {
    BoundaryLightVector bv;
    Vec4 seed = Vec4::Zero();
    Vec3 heading = Vec3::Zero();
};

std::optional<ConeRay> shoot_ray(const MetricSpec& spec, const Point& q, const Vec3& heading,
                                 TraceDirection direction, const PatchSpec& patch,
                                 const IntegrateOptions& opts) {
    try {
        const Vec4 v = null_direction(spec, q, heading.normalized());
        const TraceResult tr = trace_to_boundary(spec, q, v, direction, 10.0, opts);
        if (!patch.contains(tr.hit.point)) return std::nullopt;
        ConeRay ray;
        ray.bv = {tr.hit.point, tr.hit.tangent, tr.hit.which};
        ray.seed = v;
        ray.heading = heading.normalized();
        return ray;
    } catch (const error&) {
        return std::nullopt;
    }
}

}  // namespace

LiveRelationSource::LiveRelationSource(MetricSpec spec, Region region, VMinusSpec vminus,
                                       RelationOptions opts)
    : spec_(std::move(spec)),
      region_(std::move(region)),
      vminus_(std::move(vminus)),
      opts_(std::move(opts)) {}

void LiveRelationSource::set_samples(std::vector<BoundaryLightVector> heads,
                                     std::vector<BoundaryLightVector> sources) {
    heads_ = std::move(heads);
    sources_ = std::move(sources);
}

RelationTuple LiveRelationSource::evaluate(const BoundaryLightVector& v0,
                                           const BoundaryLightVector& v1,
                                           const BoundaryLightVector& v2,
                                           const BoundaryLightVector& v3) const {
    RelationTuple t;
    t.v0 = v0;
    t.v1 = v1;
    t.v2 = v2;
    t.v3 = v3;
    return relation_membership(spec_, t, region_, vminus_, opts_);
}

std::optional<BoundaryLightVector> LiveRelationSource::complete(
    const BoundaryLightVector& v0, const BoundaryLightVector& v1,
    const BoundaryLightVector& v2) const {
    const auto meet = forward_intersection(spec_, v1, v2, region_, opts_.intersect);
    if (!meet) return std::nullopt;

    Trajectory back, ta, tb;
    try {
        back = trace_to_boundary(spec_, v0.p, v0.w, TraceDirection::backward,
                                 opts_.intersect.s_max, opts_.intersect.integrate)
                   .trajectory;
        ta = trace_to_boundary(spec_, v1.p, v1.w, TraceDirection::forward, opts_.intersect.s_max,
                               opts_.intersect.integrate)
                 .trajectory;
        tb = trace_to_boundary(spec_, v2.p, v2.w, TraceDirection::forward, opts_.intersect.s_max,
                               opts_.intersect.integrate)
                 .trajectory;
    } catch (const error&) {
        return std::nullopt;
    }

    const Vec4 witness = meet->point.coords();
    const auto [sh, dist] = closest_on(back, witness);
    if (dist > 1e-5) return std::nullopt;

    const Vec4 w0 = back.tangent(sh);
    const Vec4 w1 = ta.tangent(meet->parameter_a);
    const Vec4 w2 = tb.tangent(meet->parameter_b);

    const auto circle = null_span_circle(spec_, meet->point, w0, w1, w2, 16);
    int tried = 0;
    for (std::size_t k = 0; k < circle.size() && tried < 4; ++k) {
        const Vec4& wc = circle[(5 * k + 3) % circle.size()];
        if (nearly_parallel(wc, w0) || nearly_parallel(wc, w1) || nearly_parallel(wc, w2))
            continue;
        const SpanResult sr = span_membership(w0, w1, w2, wc);
        if (!sr.member || sr.single_generator) continue;
        BoundaryLightVector v3;
        try {
            v3 = shoot_to_boundary(spec_, meet->point, wc, TraceDirection::backward,
                                   opts_.intersect.integrate);
        } catch (const error&) {
            continue;
        }
        ++tried;
        if (evaluate(v0, v1, v2, v3).verdict) return v3;
    }
    return std::nullopt;
}

bool LiveRelationSource::member(const BoundaryLightVector& v0, const BoundaryLightVector& v1,
                                const BoundaryLightVector& v2,
                                const BoundaryLightVector& v3) const {
    return evaluate(v0, v1, v2, v3).verdict;
}

bool LiveRelationSource::admissible(const BoundaryLightVector& v1, const BoundaryLightVector& v2,
                                    const BoundaryLightVector& v3) const {
    return !vminus_.member || vminus_.member(v1, v2, v3);
}

bool LiveRelationSource::completes_pair(const BoundaryLightVector& v0,
                                        const BoundaryLightVector& v1,
                                        const BoundaryLightVector& v2) const {
    return complete(v0, v1, v2).has_value();
}

bool LiveRelationSource::relates(const BoundaryLightVector& v0,
                                 const BoundaryLightVector& v1) const {
    Trajectory back, fwd;
    try {
        back = trace_to_boundary(spec_, v0.p, v0.w, TraceDirection::backward,
                                 opts_.intersect.s_max, opts_.intersect.integrate)
                   .trajectory;
        fwd = trace_to_boundary(spec_, v1.p, v1.w, TraceDirection::forward, opts_.intersect.s_max,
                                opts_.intersect.integrate)
                  .trajectory;
    } catch (const error&) {
        return false;
    }
    const Approach app = closest_approach(back, fwd);
    if (app.dist > opts_.intersect.eps_intersect) return false;
    const Point qw = Point::from_coords(app.mid);
    if (region_.contains && !region_.contains(qw)) return false;

    const Vec4 w0 = back.tangent(app.sa);
    const Vec4 w1 = fwd.tangent(app.sb);
    const Vec3 h1 = Vec3(w1[1], w1[2], w1[3]).normalized();
    Vec3 e1, e2;
    orthonormal_complement(h1, e1, e2);

    int attempts = 0;
    for (const Vec3& aux_dir : {e1, e2, Vec3((e1 + e2).normalized())}) {
        Vec4 aux;
        try {
            aux = null_direction(spec_, qw, aux_dir);
        } catch (const error&) {
            continue;
        }
        if (nearly_parallel(aux, w0) || nearly_parallel(aux, w1)) continue;
        const auto circle = null_span_circle(spec_, qw, w0, w1, aux, 16);
        const std::pair<int, int> picks[] = {{1, 9}, {3, 11}, {5, 13}, {2, 12}};
        for (auto [i, j] : picks) {
            if (attempts >= 5) return false;
            const Vec4& wa = circle[i % circle.size()];
            const Vec4& wb = circle[j % circle.size()];
            if (nearly_parallel(wa, wb) || nearly_parallel(wa, w1) || nearly_parallel(wb, w1))
                continue;
            const SpanResult sr = span_membership(w0, w1, wa, wb);
            if (!sr.member || sr.single_generator) continue;
            BoundaryLightVector u2, u3;
            try {
                u2 = shoot_to_boundary(spec_, qw, wa, TraceDirection::backward,
                                       opts_.intersect.integrate);
                u3 = shoot_to_boundary(spec_, qw, wb, TraceDirection::backward,
                                       opts_.intersect.integrate);
            } catch (const error&) {
                continue;
            }
            ++attempts;
            if (evaluate(v0, v1, u2, u3).verdict) return true;
        }
    }
    return false;
}

std::vector<BoundaryLightVector> LiveRelationSource::head_samples() const { return heads_; }

std::vector<BoundaryLightVector> LiveRelationSource::source_samples() const { return sources_; }

std::vector<std::pair<BoundaryLightVector, BoundaryLightVector>>
LiveRelationSource::source_pairs() const {
    std::vector<std::pair<BoundaryLightVector, BoundaryLightVector>> out;
    for (std::size_t i = 0; i < sources_.size(); ++i)
        for (std::size_t j = i + 1; j < sources_.size(); ++j)
            out.emplace_back(sources_[i], sources_[j]);
    return out;
}

std::vector<BoundaryLightVector> LiveRelationSource::related_heads(
    const BoundaryLightVector& v) const {
    std::vector<BoundaryLightVector> out;
    for (const auto& h : heads_)
        if (relates(h, v)) out.push_back(h);
    return out;
}

std::vector<BoundaryLightVector> LiveRelationSource::sources_of(
    const BoundaryLightVector& v0) const {
    std::vector<BoundaryLightVector> out;
    for (const auto& s : sources_)
        if (relates(v0, s)) out.push_back(s);
    return out;
}

std::vector<BoundaryLightVector> LiveRelationSource::common_sources(
    const BoundaryLightVector& a, const BoundaryLightVector& b) const {
    std::vector<BoundaryLightVector> out;
    for (const auto& s : sources_)
        if (relates(a, s) && relates(b, s)) out.push_back(s);
    return out;
}

std::vector<BoundaryLightVector> cone_sources(const MetricSpec& spec, const Point& q, int count,
                                              const PatchSpec& u_minus,
                                              const IntegrateOptions& opts) {
    std::vector<BoundaryLightVector> out;
    for (const Vec3& u : fibonacci_sphere(count)) {
        const auto ray = shoot_ray(spec, q, u, TraceDirection::backward, u_minus, opts);
        if (ray) out.push_back(ray->bv);
    }
    return out;
}

std::vector<BoundaryLightVector> cone_heads(const MetricSpec& spec, const Point& q, int count,
                                            const PatchSpec& u_plus,
                                            const std::vector<double>& scales,
                                            const IntegrateOptions& opts) {
    std::vector<BoundaryLightVector> out;
    for (const Vec3& u : fibonacci_sphere(count)) {
        const auto ray = shoot_ray(spec, q, u, TraceDirection::forward, u_plus, opts);
        if (!ray) continue;
        for (double lam : scales) out.push_back(scaled(ray->bv, lam));
    }
    return out;
}

TrueCone true_observation_cone(const MetricSpec& spec, const Point& q, int count,
                               const PatchSpec& u_plus, bool with_cut,
                               const IntegrateOptions& opts, const CutOptions& cut) {
    TrueCone out;
    std::vector<BoundaryLightVector> members;
    for (const Vec3& u : fibonacci_sphere(count)) {
        Vec4 v;
        TraceResult tr;
        try {
            v = null_direction(spec, q, u.normalized());
            tr = trace_to_boundary(spec, q, v, TraceDirection::forward, 10.0, opts);
        } catch (const error&) {
            continue;
        }
        if (!u_plus.contains(tr.hit.point)) continue;
        members.push_back({tr.hit.point, tr.hit.tangent, tr.hit.which});
        out.seed_direction.push_back(v);
        out.exit_parameter.push_back(tr.hit.parameter);
        if (with_cut) {
            const CutResult cr = null_cut_parameter(spec, q, v, TraceDirection::forward, cut);
            out.cut_parameter.push_back(
                cr.parameter.value_or(std::numeric_limits<double>::infinity()));
        } else {
            out.cut_parameter.push_back(std::numeric_limits<double>::infinity());
        }
    }
    out.set = make_direction_set(std::move(members));
    return out;
}

namespace {

// Fourth slot on the span conic at the anchor: a backward shot whose tangent
// keeps the head direction inside the source span.
std::optional<BoundaryLightVector> conic_fourth(const MetricSpec& spec, const Point& q,
                                                const Vec4& head_seed, const Vec4& sa_seed,
                                                const Vec4& sb_seed, const PatchSpec& u_minus,
                                                const IntegrateOptions& opts, int salt) {
    const auto circle = null_span_circle(spec, q, head_seed, sa_seed, sb_seed, 16);
    for (std::size_t k = 0; k < circle.size(); ++k) {
        const Vec4& wc = circle[(salt + 3 * k) % circle.size()];
        if (nearly_parallel(wc, head_seed) || nearly_parallel(wc, sa_seed) ||
            nearly_parallel(wc, sb_seed))
            continue;
        const SpanResult sr = span_membership(head_seed, sa_seed, sb_seed, wc);
        if (!sr.member || sr.single_generator) continue;
        try {
            BoundaryLightVector bv =
                shoot_to_boundary(spec, q, wc, TraceDirection::backward, opts);
            if (!u_minus.contains(bv.p)) continue;
            return bv;
        } catch (const error&) {
            continue;
        }
    }
    return std::nullopt;
}

}  // namespace

std::vector<RelationTuple> generate_relation_dump(const MetricSpec& spec, const Region& region,
                                                  const VMinusSpec& vminus,
                                                  const PatchSpec& u_minus,
                                                  const PatchSpec& u_plus, const DumpPlan& plan,
                                                  const RelationOptions& opts) {
    std::vector<RelationTuple> out;
    const IntegrateOptions& integ = opts.intersect.integrate;

    auto eval = [&](const BoundaryLightVector& v0, const BoundaryLightVector& v1,
                    const BoundaryLightVector& v2, const BoundaryLightVector& v3) {
        RelationTuple t;
        t.v0 = v0;
        t.v1 = v1;
        t.v2 = v2;
        t.v3 = v3;
        return relation_membership(spec, t, region, vminus, opts);
    };

    // All records of one cone: every head direction against the designated
    // source pairs, fourth slots constructed on the span conic.
    auto emit_cone = [&](const Point& q, int head_count,
                         const std::vector<double>& head_scales, int source_count,
                         int pair_records, int salt, std::vector<ConeRay>& heads_out,
                         std::vector<ConeRay>& sources_out) {
        sources_out.clear();
        heads_out.clear();
        for (const Vec3& u : fibonacci_sphere(3 * source_count + 8)) {
            if (static_cast<int>(sources_out.size()) >= source_count) break;
            const auto ray = shoot_ray(spec, q, u, TraceDirection::backward, u_minus, integ);
            if (ray) sources_out.push_back(*ray);
        }
        if (static_cast<int>(sources_out.size()) < 2 * pair_records) return;

        for (const Vec3& u : fibonacci_sphere(head_count)) {
            const auto ray = shoot_ray(spec, q, u, TraceDirection::forward, u_plus, integ);
            if (ray) heads_out.push_back(*ray);
        }

        for (int pr = 0; pr < pair_records; ++pr) {
            const ConeRay& sa = sources_out[2 * pr];
            const ConeRay& sb = sources_out[2 * pr + 1];
            for (std::size_t hi = 0; hi < heads_out.size(); ++hi) {
                const ConeRay& head = heads_out[hi];
                const auto fourth = conic_fourth(spec, q, head.seed, sa.seed, sb.seed, u_minus,
                                                 integ, salt + static_cast<int>(hi) + 7 * pr);
                if (!fourth) continue;
                for (double lam : head_scales)
                    out.push_back(eval(scaled(head.bv, lam), sa.bv, sb.bv, *fourth));
            }
        }
    };

    int anchor_index = 0;
    for (const DumpAnchorPlan& a : plan.anchors) {
        const int salt = static_cast<int>(plan.seed) + 13 * anchor_index++;
        std::vector<ConeRay> heads, sources;
        emit_cone(a.q, a.head_count, a.head_scales, a.source_count, a.pair_records, salt, heads,
                  sources);
        if (heads.size() < 2 || static_cast<int>(sources.size()) < 2 * a.pair_records) continue;

        if (a.vone_records) {
            // designated witness heads: the first two directions at unit scale
            const ConeRay& h0 = heads[0];
            const ConeRay& h1 = heads[1];
            const int ns = static_cast<int>(a.vone_scales.size());
            for (int si = 0; si < 2 * a.pair_records; ++si) {
                const ConeRay& centre = sources[si];
                Vec3 e1, e2;
                orthonormal_complement(centre.heading, e1, e2);
                std::vector<ConeRay> ring;
                for (int i = 0; i < a.vone_ring; ++i) {
                    const double phi = 2.0 * M_PI * i / a.vone_ring;
                    const Vec3 dir =
                        (centre.heading +
                         a.vone_ring_radius * (std::cos(phi) * e1 + std::sin(phi) * e2))
                            .normalized();
                    const auto ray = shoot_ray(spec, a.q, dir, TraceDirection::backward, u_minus,
                                               integ);
                    if (ray) ring.push_back(*ray);
                }
                if (static_cast<int>(ring.size()) < 3) continue;
                for (std::size_t i = 0; i < ring.size(); ++i) {
                    const std::size_t j = (i + 1) % ring.size();
                    for (const ConeRay* h : {&h0, &h1}) {
                        const auto fourth =
                            conic_fourth(spec, a.q, h->seed, ring[i].seed, ring[j].seed, u_minus,
                                         integ, salt + static_cast<int>(i));
                        if (!fourth) continue;
                        for (int sscale = 0; sscale < ns; ++sscale) {
                            const double la = a.vone_scales[sscale];
                            const double lb = a.vone_scales[(sscale + 1) % ns];
                            const BoundaryLightVector ta = scaled(ring[i].bv, la);
                            const BoundaryLightVector tb = scaled(ring[j].bv, lb);
                            out.push_back(eval(h->bv, ta, tb, *fourth));
                        }
                    }
                }
            }
        }

        // non-member texture: duplicated bases, skew sources, displaced heads
        if (a.reject_records > 0 && heads.size() >= 2 && sources.size() >= 2) {
            const Point q_off(a.q.T + 0.05, a.q.X + Vec3(0.15, -0.1, 0.05));
            const auto off_src =
                shoot_ray(spec, q_off, Vec3(-0.3, 0.7, -0.2), TraceDirection::backward, u_minus,
                          integ);
            const auto off_head =
                shoot_ray(spec, q_off, Vec3(0.4, 0.1, 0.6), TraceDirection::forward, u_plus,
                          integ);
            int emitted = 0;
            for (int r = 0; r < a.reject_records; ++r) {
                const ConeRay& sa = sources[r % sources.size()];
                const ConeRay& sb = sources[(r + 1) % sources.size()];
                const ConeRay& h = heads[r % heads.size()];
                switch (r % 3) {
                    case 0:
                        out.push_back(eval(h.bv, sa.bv, scaled(sa.bv, 1.3), sb.bv));
                        ++emitted;
                        break;
                    case 1:
                        if (off_src) {
                            out.push_back(eval(h.bv, sa.bv, sb.bv, off_src->bv));
                            ++emitted;
                        }
                        break;
                    case 2:
                        if (off_head) {
                            const auto fourth = conic_fourth(spec, a.q, h.seed, sa.seed, sb.seed,
                                                             u_minus, integ, salt + r);
                            if (fourth) {
                                out.push_back(eval(off_head->bv, sa.bv, sb.bv, *fourth));
                                ++emitted;
                            }
                        }
                        break;
                }
            }
            (void)emitted;
        }

        if (a.companion) {
            const Point qc(a.q.T - a.companion_offset, a.q.X);
            std::vector<ConeRay> cheads, csources;
            emit_cone(qc, a.head_count, {1.0}, std::max(2, a.source_count / 2), 1, salt + 5,
                      cheads, csources);
        }
    }
    return out;
}

}  // namespace diamond
