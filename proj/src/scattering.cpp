#include "diamond/scattering.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <unordered_map>
#include <vector>

namespace diamond {

namespace {

using nlohmann::json;

constexpr double kTransversalTol = 1e-6;

Vec4 trace_dxds(const Trajectory& tr, double s) {
    const double mul = tr.direction == TraceDirection::forward ? 1.0 : -1.0;
    return mul * tr.tangent(s);
}

bool in_closure(const Region& region, const Point& q, double pad = 1e-9) {
    if (region.contains(q)) return true;
    for (int c = 0; c < 4; ++c)
        for (double sgn : {-1.0, 1.0}) {
            Vec4 x = q.coords();
            x[c] += sgn * pad;
            if (region.contains(Point::from_coords(x))) return true;
        }
    return false;
}

// ---- pairwise meetings of forward traces ----

struct MeetHit {
    double sa = 0.0;
    double sb = 0.0;
    Vec4 q = Vec4::Zero();
    double sep = 0.0;
};

// All sub-tolerance meetings of the two traces whose point lies in the closed
// region, found by a node-pair prefilter and per-basin least-squares descent.
std::vector<MeetHit> trace_meetings(const MetricSpec& spec, const Trajectory& ta,
                                    const Trajectory& tb, const Region& region,
                                    const IntersectionOptions& opts) {
    struct Cand {
        int ia, ib;
        double d;
    };
    const auto pos_of = [](const TrajectoryNode& n) {
        return Vec4(n.y[0], n.y[1], n.y[2], n.y[3]);
    };
    std::vector<Cand> cands;
    for (int ia = 0; ia < static_cast<int>(ta.nodes.size()); ++ia) {
        const Vec4 pa = pos_of(ta.nodes[ia]);
        for (int ib = 0; ib < static_cast<int>(tb.nodes.size()); ++ib) {
            const double d = (pa - pos_of(tb.nodes[ib])).norm();
            if (d < opts.gate) cands.push_back({ia, ib, d});
        }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) { return x.d < y.d; });

    std::vector<MeetHit> hits;
    std::vector<std::pair<double, double>> visited;
    int attempts = 0;
    for (const Cand& c : cands) {
        if (attempts >= 60) break;
        double sa = ta.nodes[c.ia].s;
        double sb = tb.nodes[c.ib].s;
        bool skip = false;
        for (const auto& v : visited)
            if (std::abs(sa - v.first) < 0.05 && std::abs(sb - v.second) < 0.05) {
                skip = true;
                break;
            }
        if (skip) continue;
        ++attempts;
        for (int it = 0; it < 30; ++it) {
            const Vec4 F = ta.position4(sa) - tb.position4(sb);
            Eigen::Matrix<double, 4, 2> J;
            J.col(0) = trace_dxds(ta, sa);
            J.col(1) = -trace_dxds(tb, sb);
            Eigen::Vector2d delta = J.colPivHouseholderQr().solve(-F);
            delta = delta.cwiseMax(-0.1).cwiseMin(0.1);
            sa = std::clamp(sa + delta[0], 0.0, ta.s_end());
            sb = std::clamp(sb + delta[1], 0.0, tb.s_end());
            if (delta.norm() < 1e-14) break;
        }
        visited.emplace_back(sa, sb);
        const Vec4 F = ta.position4(sa) - tb.position4(sb);
        const Vec4 qmid = 0.5 * (ta.position4(sa) + tb.position4(sb));
        const Point qp = Point::from_coords(qmid);
        const double sep = std::sqrt(std::max(0.0, gplus_norm2(spec, qp, F)));
        if (sep >= opts.eps_intersect) continue;
        if (!in_closure(region, qp)) continue;
        bool dup = false;
        for (const MeetHit& h : hits)
            if ((h.q - qmid).norm() < 100.0 * opts.eps_intersect) {
                dup = true;
                break;
            }
        if (!dup) hits.push_back({sa, sb, qmid, sep});
    }
    std::sort(hits.begin(), hits.end(), [](const MeetHit& x, const MeetHit& y) { return x.sa < y.sa; });
    return hits;
}

std::optional<MeetHit> unique_meeting(const MetricSpec& spec, const Trajectory& ta,
                                      const Trajectory& tb, const Region& region,
                                      const IntersectionOptions& opts) {
    auto hits = trace_meetings(spec, ta, tb, region, opts);
    if (hits.size() >= 2) throw error(errc::numeric, "certificate violated");
    if (hits.empty()) return std::nullopt;
    return hits[0];
}

// ---- mesh sample index for the restricted lens ----

struct MeshIndex {
    double cell = 1.0;
    std::unordered_map<uint64_t, std::vector<std::pair<int, int>>> cells;

    static uint64_t key_of(const std::array<int64_t, 4>& q) {
        uint64_t h = 0;
        for (int i = 0; i < 4; ++i)
            h = (h << 16) | static_cast<uint64_t>((q[i] + 32768) & 0xffff);
        return h;
    }

    void insert(const Vec4& x, int dir, int k) {
        std::array<int64_t, 4> q;
        for (int i = 0; i < 4; ++i) q[i] = static_cast<int64_t>(std::floor(x[i] / cell));
        cells[key_of(q)].push_back({dir, k});
    }

    void near(const Vec4& x, std::vector<std::pair<int, int>>& out) const {
        std::array<int64_t, 4> q;
        for (int i = 0; i < 4; ++i) q[i] = static_cast<int64_t>(std::floor(x[i] / cell));
        std::array<int64_t, 4> p;
        for (p[0] = q[0] - 1; p[0] <= q[0] + 1; ++p[0])
            for (p[1] = q[1] - 1; p[1] <= q[1] + 1; ++p[1])
                for (p[2] = q[2] - 1; p[2] <= q[2] + 1; ++p[2])
                    for (p[3] = q[3] - 1; p[3] <= q[3] + 1; ++p[3]) {
                        auto it = cells.find(key_of(p));
                        if (it != cells.end())
                            out.insert(out.end(), it->second.begin(), it->second.end());
                    }
    }
};

struct CrossingSolve {
    bool converged = false;
    bool tangential = false;
    SurfaceCrossing crossing;
};

CrossingSolve solve_crossing(const Trajectory& traj, const CongruenceMesh& mesh, int tri0,
                             int local0, double t0, double s0, double tangential_tol) {
    CrossingSolve out;
    int tri = tri0;
    double b1 = local0 == 1 ? 1.0 : 0.0;
    double b2 = local0 == 2 ? 1.0 : 0.0;
    double t = t0;
    double s = s0;
    const double t_lo = mesh.tgrid.front();
    const double t_hi = mesh.tgrid.back();
    const double t_span = t_hi - t_lo;

    Vec4 F = mesh.point(tri, b1, b2, t) - traj.position4(s);
    for (int it = 0; it < 60 && F.norm() > 1e-12; ++it) {
        const double b1_prev = b1, b2_prev = b2, t_prev = t, s_prev = s;
        Eigen::Matrix4d J;
        J.col(0) = mesh.dpoint_db1(tri, t);
        J.col(1) = mesh.dpoint_db2(tri, t);
        J.col(2) = mesh.dpoint_dt(tri, b1, b2, t);
        J.col(3) = -trace_dxds(traj, s);
        Eigen::Vector4d delta = J.colPivHouseholderQr().solve(-F);
        delta[0] = std::clamp(delta[0], -0.5, 0.5);
        delta[1] = std::clamp(delta[1], -0.5, 0.5);
        delta[2] = std::clamp(delta[2], -0.25 * t_span, 0.25 * t_span);
        delta[3] = std::clamp(delta[3], -0.25 * traj.s_end(), 0.25 * traj.s_end());
        b1 += delta[0];
        b2 += delta[1];
        t = std::clamp(t + delta[2], t_lo, t_hi);
        s = std::clamp(s + delta[3], 0.0, traj.s_end());
        for (int walk = 0; walk < 8; ++walk) {
            const double l0 = 1.0 - b1 - b2;
            if (l0 >= -0.02 && b1 >= -0.02 && b2 >= -0.02) break;
            int v = 0;
            double worst = l0;
            if (b1 < worst) {
                worst = b1;
                v = 1;
            }
            if (b2 < worst) v = 2;
            const int nb = mesh.neighbor(tri, v);
            if (nb < 0) return out;
            const Vec4 xc = mesh.point(tri, b1, b2, t);
            tri = nb;
            Eigen::Matrix<double, 4, 2> A;
            A.col(0) = mesh.dpoint_db1(tri, t);
            A.col(1) = mesh.dpoint_db2(tri, t);
            const Vec4 rhs = xc - mesh.curve_point(mesh.tris[tri][0], t);
            Eigen::Vector2d bb = A.colPivHouseholderQr().solve(rhs);
            b1 = bb[0];
            b2 = bb[1];
        }
        F = mesh.point(tri, b1, b2, t) - traj.position4(s);
        const double moved = std::abs(b1 - b1_prev) + std::abs(b2 - b2_prev) +
                             std::abs(t - t_prev) + std::abs(s - s_prev);
        if (moved < 1e-13) break; // pinned at a clamp; no crossing inside the patch
    }
    if (F.norm() > 1e-9) return out;
    const double l0 = 1.0 - b1 - b2;
    if (l0 < -1e-6 || b1 < -1e-6 || b2 < -1e-6) return out;
    if (s < 1e-9) return out;

    Eigen::Matrix<double, 3, 4> Tm;
    Tm.row(0) = mesh.dpoint_db1(tri, t).transpose();
    Tm.row(1) = mesh.dpoint_db2(tri, t).transpose();
    Tm.row(2) = mesh.dpoint_dt(tri, b1, b2, t).transpose();
    Eigen::JacobiSVD<Eigen::Matrix<double, 3, 4>> svd(Tm, Eigen::ComputeFullV);
    const Vec4 n = svd.matrixV().col(3);
    const Vec4 dx = trace_dxds(traj, s);
    const double grazing = std::abs(n.dot(dx)) / dx.norm();

    out.converged = true;
    out.tangential = grazing < tangential_tol;
    out.crossing.point = traj.point(s);
    out.crossing.tangent = traj.tangent(s);
    out.crossing.parameter = s;
    out.crossing.triangle = tri;
    out.crossing.barycentric = Vec3(l0, b1, b2);
    out.crossing.surface_t = t;
    return out;
}

// ---- boundary vector JSON records ----

json blv_record(const BoundaryLightVector& v) {
    return json{{"p", {v.p.T, v.p.X[0], v.p.X[1], v.p.X[2]}},
                {"w", {v.w[0], v.w[1], v.w[2], v.w[3]}},
                {"side", v.side == Side::Splus ? "S+" : "S-"}};
}

BoundaryLightVector blv_from(const json& j) {
    BoundaryLightVector v;
    const auto& p = j.at("p");
    v.p = Point(p.at(0).get<double>(),
                Vec3(p.at(1).get<double>(), p.at(2).get<double>(), p.at(3).get<double>()));
    const auto& w = j.at("w");
    for (int i = 0; i < 4; ++i) v.w[i] = w.at(i).get<double>();
    v.side = j.at("side").get<std::string>() == "S+" ? Side::Splus : Side::Sminus;
    return v;
}

} // namespace

BoundaryLightVector make_boundary_vector(const MetricSpec& spec, const Point& p, const Vec4& w,
                                         double eps_boundary, double eps_null) {
    if (!std::isfinite(p.T) || !p.X.allFinite() || !w.allFinite())
        throw error(errc::config, "boundary vector is not finite");
    const bool on_plus = on_boundary(p, Side::Splus, eps_boundary);
    const bool on_minus = on_boundary(p, Side::Sminus, eps_boundary);
    if (on_plus == on_minus)
        throw error(errc::config, "point not on a single boundary sheet");
    const Side side = on_plus ? Side::Splus : Side::Sminus;

    const double n2 = gplus_norm2(spec, p, w);
    if (!(n2 > 0.0)) throw error(errc::numeric, "degenerate vector");
    if (std::abs(g_dot(spec, p, w, w)) > eps_null * n2)
        throw error(errc::numeric, "boundary vector not null");
    if (!(w[0] > 0.0)) throw error(errc::numeric, "boundary vector not future-pointing");
    if (transversality(p, side, w) / std::sqrt(n2) > -kTransversalTol)
        throw error(errc::numeric, "boundary vector not transversal");
    return {p, w, side};
}

bool PatchSpec::contains(const Point& p) const {
    if (!on_boundary(p, side, 1e-9)) return false;
    return !member || member(p);
}

BoundaryLightVector lens_relation(const MetricSpec& spec, const BoundaryLightVector& v,
                                  const IntegrateOptions& opts, double s_max) {
    const BoundaryLightVector bv = make_boundary_vector(spec, v.p, v.w);
    const TraceDirection dir =
        bv.side == Side::Sminus ? TraceDirection::forward : TraceDirection::backward;
    const TraceResult tr = trace_to_boundary(spec, bv.p, bv.w, dir, s_max, opts);
    return {tr.hit.point, tr.hit.tangent, tr.hit.which};
}

BoundaryLightVector shoot_to_boundary(const MetricSpec& spec, const Point& q, const Vec3& heading,
                                      TraceDirection direction, const IntegrateOptions& opts) {
    return shoot_to_boundary(spec, q, null_direction(spec, q, heading.normalized()), direction,
                             opts);
}

BoundaryLightVector shoot_to_boundary(const MetricSpec& spec, const Point& q, const Vec4& v,
                                      TraceDirection direction, const IntegrateOptions& opts) {
    const TraceResult tr = trace_to_boundary(spec, q, v, direction, 10.0, opts);
    return {tr.hit.point, tr.hit.tangent, tr.hit.which};
}

std::optional<SurfaceCrossing> restricted_lens(const MetricSpec& spec,
                                               const BoundaryLightVector& v,
                                               const CongruenceMesh& surface,
                                               const IntegrateOptions& opts,
                                               double tangential_tol) {
    const BoundaryLightVector bv = make_boundary_vector(spec, v.p, v.w);
    const TraceDirection dir =
        bv.side == Side::Sminus ? TraceDirection::forward : TraceDirection::backward;
    const TraceResult tr = trace_to_boundary(spec, bv.p, bv.w, dir, 10.0, opts);
    const Trajectory& traj = tr.trajectory;

    const double cell = std::max(surface.sample_spacing(), 1e-6);
    MeshIndex idx;
    idx.cell = cell;
    for (int i = 0; i < static_cast<int>(surface.base_dirs.size()); ++i)
        for (int k = 0; k < static_cast<int>(surface.tgrid.size()); ++k)
            idx.insert(surface.pos[i][k], i, k);

    std::vector<std::vector<int>> vert_tri(surface.base_dirs.size());
    for (int t = 0; t < static_cast<int>(surface.tris.size()); ++t)
        for (int lv = 0; lv < 3; ++lv) vert_tri[surface.tris[t][lv]].push_back(t);

    struct Cand {
        double s;
        int dir, k;
        double d;
    };
    std::vector<Cand> cands;
    std::vector<std::pair<int, int>> near;
    const double ds = 0.5 * cell;
    for (double s = 0.0;; s += ds) {
        const bool last = s >= traj.s_end();
        const double sq = last ? traj.s_end() : s;
        const Vec4 x = traj.position4(sq);
        near.clear();
        idx.near(x, near);
        for (const auto& [i, k] : near) {
            const double d = (x - surface.pos[i][k]).norm();
            if (d < 1.5 * cell) cands.push_back({sq, i, k, d});
        }
        if (last) break;
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        return a.s != b.s ? a.s < b.s : a.d < b.d;
    });

    std::optional<CrossingSolve> best;
    int attempts = 0;
    for (const Cand& c : cands) {
        if (best && c.s > best->crossing.parameter + 3.0 * cell) break;
        if (attempts >= 200) break;
        ++attempts;
        const int tri0 = vert_tri[c.dir].front();
        int local0 = 0;
        for (int lv = 0; lv < 3; ++lv)
            if (surface.tris[tri0][lv] == c.dir) local0 = lv;
        CrossingSolve sol =
            solve_crossing(traj, surface, tri0, local0, surface.tgrid[c.k], c.s, tangential_tol);
        if (!sol.converged) continue;
        if (!best || sol.crossing.parameter < best->crossing.parameter - 1e-10) best = sol;
    }
    if (!best) return std::nullopt;
    if (best->tangential) throw error(errc::numeric, "tangential crossing");
    return best->crossing;
}

bool is_proper(const MetricSpec& spec, const RelationTuple& tuple, double delta_distinct) {
    const std::array<const BoundaryLightVector*, 3> src{&tuple.v1, &tuple.v2, &tuple.v3};
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j)
            if (gplus_distance(spec, src[i]->p, src[j]->p) <= delta_distinct) return false;
    std::array<Point, 4> img;
    img[0] = tuple.v0.p;
    for (int j = 0; j < 3; ++j) img[j + 1] = lens_relation(spec, *src[j]).p;
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j)
            if (gplus_distance(spec, img[i], img[j]) <= delta_distinct) return false;
    return true;
}

std::optional<ForwardIntersection> forward_intersection(const MetricSpec& spec,
                                                        const BoundaryLightVector& va,
                                                        const BoundaryLightVector& vb,
                                                        const Region& region,
                                                        const IntersectionOptions& opts) {
    const BoundaryLightVector a = make_boundary_vector(spec, va.p, va.w);
    const BoundaryLightVector b = make_boundary_vector(spec, vb.p, vb.w);
    if (a.side != Side::Sminus || b.side != Side::Sminus)
        throw error(errc::config, "forward intersection expects past-sheet vectors");
    const TraceResult ta =
        trace_to_boundary(spec, a.p, a.w, TraceDirection::forward, opts.s_max, opts.integrate);
    const TraceResult tb =
        trace_to_boundary(spec, b.p, b.w, TraceDirection::forward, opts.s_max, opts.integrate);
    const auto hit = unique_meeting(spec, ta.trajectory, tb.trajectory, region, opts);
    if (!hit) return std::nullopt;
    return ForwardIntersection{Point::from_coords(hit->q), hit->sa, hit->sb, hit->sep};
}

SpanResult span_membership(const Vec4& w0, const Vec4& w1, const Vec4& w2, const Vec4& w3,
                           double sigma_min, double eps_span) {
    Eigen::Matrix<double, 4, 3> A;
    A.col(0) = w1;
    A.col(1) = w2;
    A.col(2) = w3;
    Eigen::JacobiSVD<Eigen::Matrix<double, 4, 3>> svd(A,
                                                      Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sig = svd.singularValues();
    if (!(sig[0] > 0.0) || sig[2] <= sigma_min * sig[0])
        throw error(errc::numeric, "degenerate frame");

    SpanResult out;
    out.coefficients = svd.solve(w0);
    out.residual = (A * out.coefficients - w0).norm() / std::max(w0.norm(), 1e-300);
    out.member = out.residual < eps_span;
    if (out.member) {
        int imax = 0;
        out.coefficients.cwiseAbs().maxCoeff(&imax);
        double others = 0.0;
        for (int i = 0; i < 3; ++i)
            if (i != imax) others += std::abs(out.coefficients[i]);
        out.single_generator = others <= 1e-9 * std::max(1.0, std::abs(out.coefficients[imax]));
    }
    return out;
}

RelationTuple relation_membership(const MetricSpec& spec, const RelationTuple& tuple,
                                  const Region& region, const VMinusSpec& vminus,
                                  const RelationOptions& opts) {
    RelationTuple out = tuple;
    out.verdict = false;
    out.witness.reset();
    out.coefficients.setZero();
    out.reject_reason.clear();
    auto reject = [&out](const char* why) {
        out.reject_reason = why;
        return out;
    };

    BoundaryLightVector bv0, bv1, bv2, bv3;
    try {
        bv0 = make_boundary_vector(spec, tuple.v0.p, tuple.v0.w);
        bv1 = make_boundary_vector(spec, tuple.v1.p, tuple.v1.w);
        bv2 = make_boundary_vector(spec, tuple.v2.p, tuple.v2.w);
        bv3 = make_boundary_vector(spec, tuple.v3.p, tuple.v3.w);
    } catch (const error&) {
        return reject("not a boundary light vector");
    }
    if (bv0.side != Side::Splus) return reject("head not on the future sheet");
    if (bv1.side != Side::Sminus || bv2.side != Side::Sminus || bv3.side != Side::Sminus)
        return reject("sources not on the past sheet");
    if (vminus.member && !vminus.member(bv1, bv2, bv3))
        return reject("source triple not admissible");

    const std::array<const BoundaryLightVector*, 3> src{&bv1, &bv2, &bv3};
    std::array<TraceResult, 3> fwd;
    try {
        for (int j = 0; j < 3; ++j)
            fwd[j] = trace_to_boundary(spec, src[j]->p, src[j]->w, TraceDirection::forward,
                                       opts.intersect.s_max, opts.intersect.integrate);
    } catch (const error&) {
        return reject("source trace failed");
    }

    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j)
            if (gplus_distance(spec, src[i]->p, src[j]->p) <= opts.delta_distinct)
                return reject("tuple not proper");
    {
        std::array<Point, 4> img{bv0.p, fwd[0].hit.point, fwd[1].hit.point, fwd[2].hit.point};
        for (int i = 0; i < 4; ++i)
            for (int j = i + 1; j < 4; ++j)
                if (gplus_distance(spec, img[i], img[j]) <= opts.delta_distinct)
                    return reject("tuple not proper");
    }

    const auto m01 =
        unique_meeting(spec, fwd[0].trajectory, fwd[1].trajectory, region, opts.intersect);
    const auto m02 =
        unique_meeting(spec, fwd[0].trajectory, fwd[2].trajectory, region, opts.intersect);
    const auto m12 =
        unique_meeting(spec, fwd[1].trajectory, fwd[2].trajectory, region, opts.intersect);
    if (!m01 || !m02 || !m12) return reject("no pairwise meeting point");

    const Point q01 = Point::from_coords(m01->q);
    const Point q02 = Point::from_coords(m02->q);
    const Point q12 = Point::from_coords(m12->q);
    const double spread = std::max({gplus_distance(spec, q01, q02), gplus_distance(spec, q01, q12),
                                    gplus_distance(spec, q02, q12)});
    if (spread > 3.0 * opts.intersect.eps_intersect) return reject("meeting points disagree");
    const Point q = Point::from_coords((m01->q + m02->q + m12->q) / 3.0);

    TraceResult back;
    try {
        back = trace_to_boundary(spec, bv0.p, bv0.w, TraceDirection::backward,
                                 opts.intersect.s_max, opts.intersect.integrate);
    } catch (const error&) {
        return reject("head trace failed");
    }
    const Trajectory& bt = back.trajectory;
    double s0 = 0.0;
    {
        double dmin = std::numeric_limits<double>::infinity();
        for (const TrajectoryNode& n : bt.nodes) {
            const double d = (Vec4(n.y[0], n.y[1], n.y[2], n.y[3]) - q.coords()).norm();
            if (d < dmin) {
                dmin = d;
                s0 = n.s;
            }
        }
        for (int it = 0; it < 30; ++it) {
            const Vec4 F = bt.position4(s0) - q.coords();
            const Vec4 d = trace_dxds(bt, s0);
            double step = -F.dot(d) / d.squaredNorm();
            step = std::clamp(step, -0.1, 0.1);
            s0 = std::clamp(s0 + step, 0.0, bt.s_end());
            if (std::abs(step) < 1e-15) break;
        }
    }
    const Vec4 miss = bt.position4(s0) - q.coords();
    if (std::sqrt(std::max(0.0, gplus_norm2(spec, q, miss))) > opts.intersect.eps_intersect)
        return reject("head ray misses the witness");
    if (s0 <= 1e-9) return reject("witness at the head base point");
    if (opts.enforce_cut_window) {
        const CutResult cut =
            null_cut_parameter(spec, bv0.p, bv0.w, TraceDirection::backward, opts.cut);
        if (cut.parameter && s0 >= *cut.parameter)
            return reject("witness beyond the head cut point");
    }

    const double s1 = 0.5 * (m01->sa + m02->sa);
    const double s2 = 0.5 * (m01->sb + m12->sa);
    const double s3 = 0.5 * (m02->sb + m12->sb);
    SpanResult span;
    try {
        span = span_membership(bt.tangent(s0), fwd[0].trajectory.tangent(s1),
                               fwd[1].trajectory.tangent(s2), fwd[2].trajectory.tangent(s3), 1e-6,
                               opts.eps_span);
    } catch (const error&) {
        return reject("degenerate source frame at the witness");
    }
    if (!span.member) return reject("head direction outside the source span");

    out.verdict = true;
    out.witness = q;
    out.coefficients = span.coefficients;
    return out;
}

VMinusSpec build_V_minus(const MetricSpec& spec, int scheme, const PatchSpec& u_minus,
                         const VMinusData& data, const IntersectionOptions& opts) {
    if (scheme < 1 || scheme > 4) throw error(errc::config, "unknown scheme");
    const bool filtered = scheme == 2 || scheme == 4;
    if (filtered && (!data.forbidden || !data.lands_inner))
        throw error(errc::config, "filtered scheme requires forbidden-region and inner-boundary data");

    VMinusSpec out;
    out.scheme = scheme;
    const MetricSpec sp = spec;
    const PatchSpec patch = u_minus;
    const VMinusData d = data;
    const IntersectionOptions io = opts;
    out.member = [sp, patch, d, io, filtered](const BoundaryLightVector& a,
                                              const BoundaryLightVector& b,
                                              const BoundaryLightVector& c) -> bool {
        const std::array<const BoundaryLightVector*, 3> vs{&a, &b, &c};
        for (const BoundaryLightVector* v : vs)
            if (v->side != Side::Sminus || !patch.contains(v->p)) return false;
        for (int i = 0; i < 3; ++i)
            for (int j = i + 1; j < 3; ++j)
                if (gplus_distance(sp, vs[i]->p, vs[j]->p) <= 1e-6) return false;
        if (!filtered) return true;

        std::array<TraceResult, 3> fwd;
        try {
            for (int j = 0; j < 3; ++j)
                fwd[j] = trace_to_boundary(sp, vs[j]->p, vs[j]->w, TraceDirection::forward,
                                           io.s_max, io.integrate);
        } catch (const error&) {
            return false;
        }
        const Region everywhere{[](const Point& p) { return interior(p); }};
        for (int i = 0; i < 3; ++i)
            for (int j = i + 1; j < 3; ++j) {
                const auto hits =
                    trace_meetings(sp, fwd[i].trajectory, fwd[j].trajectory, everywhere, io);
                for (const MeetHit& h : hits)
                    if (d.forbidden(Point::from_coords(h.q))) return false;
            }
        for (const BoundaryLightVector* v : vs)
            if (!d.lands_inner(*v)) return false;
        return true;
    };
    return out;
}

std::vector<Vec4> null_span_circle(const MetricSpec& spec, const Point& q, const Vec4& w1,
                                   const Vec4& w2, const Vec4& w3, int count) {
    Eigen::Matrix3d G;
    const std::array<const Vec4*, 3> w{&w1, &w2, &w3};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) G(i, j) = g_dot(spec, q, *w[i], *w[j]);

    std::vector<Vec4> out;
    out.reserve(count);
    for (int k = 0; k < count; ++k) {
        const double psi = M_PI * k / count;
        const Eigen::Vector3d v(0.0, std::cos(psi), std::sin(psi));
        const double qv = v.dot(G * v);
        const double bl = Eigen::Vector3d::UnitX().dot(G * v);
        Eigen::Vector3d c;
        if (std::abs(qv) < 1e-14 * std::max(1.0, std::abs(bl))) {
            if (std::abs(bl) < 1e-14) continue;
            c = v;
        } else {
            c = Eigen::Vector3d::UnitX() + (-2.0 * bl / qv) * v;
        }
        Vec4 wv = c[0] * w1 + c[1] * w2 + c[2] * w3;
        if (wv[0] < 0.0) wv = -wv;
        if (!(gplus_norm2(spec, q, wv) > 1e-20)) continue;
        out.push_back(gplus_normalize(spec, q, wv));
    }
    return out;
}

std::string relation_record(const RelationTuple& t) {
    json j{{"v0", blv_record(t.v0)},
           {"v1", blv_record(t.v1)},
           {"v2", blv_record(t.v2)},
           {"v3", blv_record(t.v3)},
           {"verdict", t.verdict}};
    if (t.witness)
        j["witness"] = {t.witness->T, t.witness->X[0], t.witness->X[1], t.witness->X[2]};
    if (t.verdict)
        j["coefficients"] = {t.coefficients[0], t.coefficients[1], t.coefficients[2]};
    if (!t.reject_reason.empty()) j["reject"] = t.reject_reason;
    return j.dump();
}

RelationTuple parse_relation_record(const std::string& line) {
    try {
        const json j = json::parse(line);
        RelationTuple t;
        t.v0 = blv_from(j.at("v0"));
        t.v1 = blv_from(j.at("v1"));
        t.v2 = blv_from(j.at("v2"));
        t.v3 = blv_from(j.at("v3"));
        t.verdict = j.at("verdict").get<bool>();
        if (j.contains("witness")) {
            const auto& w = j["witness"];
            t.witness = Point(w.at(0).get<double>(), Vec3(w.at(1).get<double>(),
                                                          w.at(2).get<double>(),
                                                          w.at(3).get<double>()));
        }
        if (j.contains("coefficients")) {
            const auto& c = j["coefficients"];
            t.coefficients =
                Eigen::Vector3d(c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>());
        }
        if (j.contains("reject")) t.reject_reason = j["reject"].get<std::string>();
        return t;
    } catch (const json::exception&) {
        throw error(errc::config, "bad relation record");
    }
}

void write_relation_dump(std::ostream& os, const std::vector<RelationTuple>& tuples) {
    for (const RelationTuple& t : tuples) os << relation_record(t) << '\n';
}

std::vector<RelationTuple> read_relation_dump(std::istream& is) {
    std::vector<RelationTuple> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        out.push_back(parse_relation_record(line));
    }
    return out;
}

} // namespace diamond
