#include "diamond/cut_locus.hpp"

#include "diamond/sampling.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <unordered_map>

namespace diamond {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double angle_between(const Vec3& a, const Vec3& b) {
    const double c = std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0);
    return std::acos(c);
}

// Transports a spatial screen pair onto the kappa-orthocomplement of V while
// following the previous pair as closely as possible.
void project_pair(const Mat3& kap, const Vec3& V, Vec3& a, Vec3& b) {
    const double vk = V.dot(kap * V);
    a -= (V.dot(kap * a) / vk) * V;
    const double an = std::sqrt(a.dot(kap * a));
    if (!(an > 1e-12)) throw error(errc::numeric, "degenerate vector");
    a /= an;
    b -= (V.dot(kap * b) / vk) * V;
    b -= (a.dot(kap * b)) * a;
    const double bn = std::sqrt(b.dot(kap * b));
    if (!(bn > 1e-12)) throw error(errc::numeric, "degenerate vector");
    b /= bn;
}

double sigma_min2x2(const Eigen::Matrix2d& M) {
    const double e = M.squaredNorm();
    const double det = M.determinant();
    const double disc = std::sqrt(std::max(0.0, e * e - 4.0 * det * det));
    return std::sqrt(std::max(0.0, 0.5 * (e - disc)));
}

struct ConjProbe {
    const MetricSpec* spec = nullptr;
    const JacobiTransport* jt = nullptr;
    Vec4 E1, E2;
    std::vector<double> s;
    std::vector<Vec3> u1, u2;

    Eigen::Matrix2d M_at(double sigma, std::size_t parent) const {
        const GeodesicState st = jt->base_state(sigma);
        const Mat4 ginv = metric_inverse(*spec, st.x);
        const Vec4 w = 2.0 * (ginv * st.zeta);
        const Vec3 V = spatial_part(w);
        const Mat3 kap = spec->kappa(st.x);
        Vec3 a = u1[parent];
        Vec3 b = u2[parent];
        project_pair(kap, V, a, b);
        const Mat4 D = jt->D(sigma);
        const Vec4 R1 = D * E1;
        const Vec4 R2 = D * E2;
        const Mat4 g = metric_matrix(*spec, st.x);
        const Vec4 ea = spatial_embed(0.0, a);
        const Vec4 eb = spatial_embed(0.0, b);
        Eigen::Matrix2d M;
        M(0, 0) = ea.dot(g * R1);
        M(0, 1) = ea.dot(g * R2);
        M(1, 0) = eb.dot(g * R1);
        M(1, 1) = eb.dot(g * R2);
        return M;
    }
};

ConjProbe make_probe(const MetricSpec& spec, const Trajectory& trace, const JacobiTransport& jt) {
    ConjProbe pr;
    pr.spec = &spec;
    pr.jt = &jt;
    const ScreenFrame fr = screen_frame(spec, trace.seed_point, trace.seed_tangent);
    pr.E1 = fr.E1;
    pr.E2 = fr.E2;
    Vec3 a = spatial_part(fr.u1);
    Vec3 b = spatial_part(fr.u2);
    pr.s.reserve(jt.nodes.size());
    pr.u1.reserve(jt.nodes.size());
    pr.u2.reserve(jt.nodes.size());
    for (const JacobiNode& n : jt.nodes) {
        const Point x{n.y[0], Vec3(n.y[1], n.y[2], n.y[3])};
        const Vec4 zeta(n.y[4], n.y[5], n.y[6], n.y[7]);
        const Vec4 w = 2.0 * (metric_inverse(spec, x) * zeta);
        project_pair(spec.kappa(x), spatial_part(w), a, b);
        pr.s.push_back(n.s);
        pr.u1.push_back(a);
        pr.u2.push_back(b);
    }
    return pr;
}

// First degeneracy of the screen response in (0, window_hi]: determinant sign
// change for simple roots, singular-value collapse for double roots.
std::optional<double> first_root(const ConjProbe& pr, double window_hi) {
    const std::size_t n = pr.s.size();
    double best = kInf;

    double prev_s = 0.0;
    double prev_det = 1.0;
    std::vector<double> sig(n, 1.0);
    std::vector<double> detn(n, 1.0);
    std::size_t limit = n;
    for (std::size_t i = 1; i < n; ++i) {
        if (pr.s[i] > window_hi + 1e-12) {
            limit = i;
            break;
        }
        const Eigen::Matrix2d M = pr.M_at(pr.s[i], i);
        const double s2 = pr.s[i] * pr.s[i];
        detn[i] = M.determinant() / s2;
        sig[i] = sigma_min2x2(M) / pr.s[i];
    }

    for (std::size_t i = 1; i < limit; ++i) {
        if (pr.s[i] < 1e-9) continue;
        if (prev_det * detn[i] < 0.0) {
            double lo = prev_s > 0.0 ? prev_s : pr.s[i] * 1e-3;
            double hi = pr.s[i];
            double flo = prev_det;
            const std::size_t parent = i - 1;
            for (int it = 0; it < 60; ++it) {
                const double mid = 0.5 * (lo + hi);
                const double fm = pr.M_at(mid, parent).determinant() / (mid * mid);
                if (flo * fm <= 0.0)
                    hi = mid;
                else {
                    lo = mid;
                    flo = fm;
                }
            }
            best = std::min(best, 0.5 * (lo + hi));
            break;
        }
        prev_s = pr.s[i];
        prev_det = detn[i];
    }

    for (std::size_t i = 1; i + 1 < limit; ++i) {
        if (pr.s[i] >= best) break;
        if (sig[i] < 0.25 && sig[i] <= sig[i - 1] && sig[i] <= sig[i + 1]) {
            const std::size_t parent = i > 0 ? i - 1 : 0;
            double lo = pr.s[i - 1];
            double hi = pr.s[i + 1];
            const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
            double x1 = hi - gr * (hi - lo);
            double x2 = lo + gr * (hi - lo);
            double f1 = sigma_min2x2(pr.M_at(x1, parent)) / x1;
            double f2 = sigma_min2x2(pr.M_at(x2, parent)) / x2;
            for (int it = 0; it < 60; ++it) {
                if (f1 < f2) {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - gr * (hi - lo);
                    f1 = sigma_min2x2(pr.M_at(x1, parent)) / x1;
                } else {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + gr * (hi - lo);
                    f2 = sigma_min2x2(pr.M_at(x2, parent)) / x2;
                }
            }
            const double smin = 0.5 * (lo + hi);
            const double val = sigma_min2x2(pr.M_at(smin, parent)) / smin;
            if (val < 1e-3) best = std::min(best, smin);
        }
    }

    if (best == kInf || best > window_hi + 1e-9) return std::nullopt;
    return best;
}

struct Fan {
    std::vector<Vec3> dirs;
    std::vector<Trajectory> rays;
    std::vector<char> ok;
};

Fan build_fan(const MetricSpec& spec, const Point& q, TraceDirection dir, int n,
              const CutOptions& opts) {
    Fan fan;
    fan.dirs = fibonacci_sphere(n);
    fan.rays.resize(n);
    fan.ok.assign(n, 0);
    for (int i = 0; i < n; ++i) {
        try {
            TraceResult out = trace_to_boundary(spec, q, null_direction(spec, q, fan.dirs[i]), dir,
                                                opts.s_max, opts.integrate);
            fan.rays[i] = std::move(out.trajectory);
            fan.ok[i] = 1;
        } catch (const error&) {
            fan.ok[i] = 0;
        }
    }
    return fan;
}

// 4D cell hash over fan node positions for coarse candidate lookup.
struct FanIndex {
    double cell = 0.03;
    std::unordered_map<std::uint64_t, std::vector<std::pair<int, int>>> map;

    static std::uint64_t key(long a, long b, long c, long d) {
        auto enc = [](long v) { return static_cast<std::uint64_t>(v + 32768) & 0xffff; };
        return (enc(a) << 48) | (enc(b) << 32) | (enc(c) << 16) | enc(d);
    }

    void build(const Fan& fan) {
        for (int i = 0; i < static_cast<int>(fan.rays.size()); ++i) {
            if (!fan.ok[i]) continue;
            const auto& nodes = fan.rays[i].nodes;
            for (int k = 0; k < static_cast<int>(nodes.size()); ++k) {
                const auto& y = nodes[k].y;
                map[key(std::lround(std::floor(y[0] / cell)), std::lround(std::floor(y[1] / cell)),
                        std::lround(std::floor(y[2] / cell)), std::lround(std::floor(y[3] / cell)))]
                    .emplace_back(i, k);
            }
        }
    }

    template <typename F>
    void near(const Vec4& x, F&& fn) const {
        const long c0 = std::lround(std::floor(x[0] / cell));
        const long c1 = std::lround(std::floor(x[1] / cell));
        const long c2 = std::lround(std::floor(x[2] / cell));
        const long c3 = std::lround(std::floor(x[3] / cell));
        for (long a = c0 - 1; a <= c0 + 1; ++a)
            for (long b = c1 - 1; b <= c1 + 1; ++b)
                for (long c = c2 - 1; c <= c2 + 1; ++c)
                    for (long d = c3 - 1; d <= c3 + 1; ++d) {
                        const auto it = map.find(key(a, b, c, d));
                        if (it == map.end()) continue;
                        for (const auto& pr : it->second) fn(pr.first, pr.second);
                    }
    }
};

bool trace_stays_inside(const Trajectory& t, double s_stop) {
    for (std::size_t i = 0; i < t.nodes.size(); ++i) {
        if (t.nodes[i].s > s_stop + 1e-12) break;
        const Point p{t.nodes[i].y[0], Vec3(t.nodes[i].y[1], t.nodes[i].y[2], t.nodes[i].y[3])};
        if (f_plus(p) > 1e-9 || f_minus(p) > 1e-9) return false;
        if (i + 1 < t.nodes.size()) {
            const double smid = 0.5 * (t.nodes[i].s + std::min(t.nodes[i + 1].s, s_stop));
            const Point pm = t.point(smid);
            if (f_plus(pm) > 1e-9 || f_minus(pm) > 1e-9) return false;
        }
    }
    return true;
}

struct TargetHit {
    double alt_parameter;
    Vec4 direction;
    double residual;
    Vec3 dir_u;
};

std::optional<TargetHit> gn_connect(const MetricSpec& spec, const Point& q, const Vec3& u_init,
                                    double s_init, const Vec4& target, const Vec3& base_u,
                                    TraceDirection dir, const CutOptions& opts) {
    Vec3 e1, e2;
    orthonormal_complement(u_init, e1, e2);
    double a = 0.0;
    double b = 0.0;
    double s = std::max(s_init, 1e-3);
    const double fd = 1e-6;
    const double ang0 = angle_between(u_init, base_u);
    for (int it = 0; it < 12; ++it) {
        const Vec3 u = (u_init + a * e1 + b * e2).normalized();
        const double ang = angle_between(u, base_u);
        if (it > 2 && ang < 0.5 * opts.exclusion_angle) return std::nullopt;
        // Basins collapsing onto the base direction hold no transverse meeting
        // before the first conjugate parameter; abandon them early.
        if (it >= 2 && ang < 0.05 && ang < 0.8 * ang0) return std::nullopt;
        const double s_len = std::min(opts.s_max, s + 0.2);
        Trajectory t;
        try {
            t = integrate_null(spec, q, null_direction(spec, q, u), s_len, dir, opts.integrate);
        } catch (const error&) {
            return std::nullopt;
        }
        const Vec4 F = t.point(s).coords() - target;
        if (F.norm() < opts.eps_connect) {
            if (ang <= opts.exclusion_angle) return std::nullopt;
            if (!trace_stays_inside(t, s)) return std::nullopt;
            return TargetHit{s, t.seed_tangent, F.norm(), u};
        }
        Eigen::Matrix<double, 4, 3> J;
        J.col(2) = (dir == TraceDirection::forward ? 1.0 : -1.0) * t.tangent(s);
        for (int c = 0; c < 2; ++c) {
            const Vec3 up =
                (u_init + (a + (c == 0 ? fd : 0.0)) * e1 + (b + (c == 1 ? fd : 0.0)) * e2)
                    .normalized();
            Trajectory tp;
            try {
                tp = integrate_null(spec, q, null_direction(spec, q, up), s_len, dir, opts.integrate);
            } catch (const error&) {
                return std::nullopt;
            }
            J.col(c) = (tp.point(s).coords() - t.point(s).coords()) / fd;
        }
        Eigen::Vector3d delta = J.colPivHouseholderQr().solve(-F);
        if (!delta.allFinite()) return std::nullopt;
        if (delta.norm() > 0.2) delta *= 0.2 / delta.norm();
        a += delta[0];
        b += delta[1];
        s += delta[2];
        if (s < 1e-3) s = 1e-3;
        if (s > opts.s_max - 0.2) return std::nullopt;
        if (std::abs(a) > 0.6 || std::abs(b) > 0.6) return std::nullopt;
    }
    return std::nullopt;
}

std::optional<TargetHit> probe_target(const MetricSpec& spec, const Point& q, const Fan& fan,
                                      const FanIndex& index, const Vec4& target, const Vec3& base_u,
                                      TraceDirection dir, const CutOptions& opts) {
    struct Candidate {
        double dist;
        int ray;
        double s;
    };
    std::unordered_map<int, Candidate> best_per_ray;
    index.near(target, [&](int ray, int node) {
        const auto& y = fan.rays[ray].nodes[node].y;
        const double d = (Vec4(y[0], y[1], y[2], y[3]) - target).norm();
        if (d > opts.prefilter_gate) return;
        const auto it = best_per_ray.find(ray);
        if (it == best_per_ray.end() || d < it->second.dist)
            best_per_ray[ray] = Candidate{d, ray, fan.rays[ray].nodes[node].s};
    });
    std::vector<Candidate> cands;
    cands.reserve(best_per_ray.size());
    for (const auto& kv : best_per_ray) {
        if (angle_between(fan.dirs[kv.first], base_u) <= opts.exclusion_angle) continue;
        cands.push_back(kv.second);
    }
    std::sort(cands.begin(), cands.end(),
              [](const Candidate& a, const Candidate& b) { return a.dist < b.dist; });
    int tried = 0;
    for (const Candidate& c : cands) {
        if (++tried > 4) break;
        auto hit = gn_connect(spec, q, fan.dirs[c.ray], c.s, target, base_u, dir, opts);
        if (hit) return hit;
    }
    return std::nullopt;
}

std::optional<SecondGeodesic> second_impl(const MetricSpec& spec, const Point& q, const Vec4& v,
                                          const TraceResult& base, TraceDirection dir,
                                          const CutOptions& opts) {
    const Vec3 base_u = spatial_part(v).normalized();
    const double s_exit = base.hit.parameter;
    Fan fan = build_fan(spec, q, dir, opts.cone_samples, opts);
    FanIndex index;
    index.cell = opts.prefilter_gate;
    index.build(fan);

    const int K = opts.targets;
    std::optional<TargetHit> first_hit;
    double t_hit = 0.0;
    double t_clean = 0.0;
    for (int k = 1; k <= K; ++k) {
        const double t = s_exit * k / (K + 1.0);
        auto hit = probe_target(spec, q, fan, index, base.trajectory.point(t).coords(), base_u, dir,
                                opts);
        if (hit) {
            first_hit = hit;
            t_hit = t;
            break;
        }
        t_clean = t;
    }
    if (!first_hit) return std::nullopt;
    for (int r = 0; r < 6; ++r) {
        const double tm = 0.5 * (t_clean + t_hit);
        auto hit =
            probe_target(spec, q, fan, index, base.trajectory.point(tm).coords(), base_u, dir, opts);
        if (hit) {
            t_hit = tm;
            first_hit = hit;
        } else {
            t_clean = tm;
        }
    }
    return SecondGeodesic{t_hit, first_hit->alt_parameter, first_hit->direction,
                          first_hit->residual};
}

} // namespace

std::vector<ScreenResponse> screen_response_scan(const MetricSpec& spec, const Trajectory& trace,
                                                 const JacobiTransport& jt) {
    const ConjProbe pr = make_probe(spec, trace, jt);
    std::vector<ScreenResponse> out;
    out.reserve(pr.s.size());
    for (std::size_t i = 1; i < pr.s.size(); ++i)
        out.push_back({pr.s[i], pr.M_at(pr.s[i], i)});
    return out;
}

std::optional<double> first_conjugate(const MetricSpec& spec, const Point& q, const Vec4& v,
                                      double s_hi, TraceDirection direction, const CutOptions& opts) {
    const TraceResult base = trace_to_boundary(spec, q, v, direction, opts.s_max, opts.integrate);
    const JacobiTransport jt = jacobi_transport(spec, base.trajectory);
    const ConjProbe probe = make_probe(spec, base.trajectory, jt);
    const double hi = s_hi > 0.0 ? std::min(s_hi, base.hit.parameter) : base.hit.parameter;
    return first_root(probe, hi);
}

std::optional<SecondGeodesic> second_geodesic_search(const MetricSpec& spec, const Point& q,
                                                     const Vec4& v, TraceDirection direction,
                                                     const CutOptions& opts) {
    const TraceResult base = trace_to_boundary(spec, q, v, direction, opts.s_max, opts.integrate);
    return second_impl(spec, q, v, base, direction, opts);
}

std::optional<ConnectingSeed> second_geodesic_search(const MetricSpec& spec, const Point& q,
                                                     const Point& target,
                                                     const Vec4& exclusion_direction,
                                                     int cone_samples, const CutOptions& opts) {
    CutOptions local = opts;
    local.cone_samples = cone_samples;
    const TraceDirection dir =
        target.T >= q.T ? TraceDirection::forward : TraceDirection::backward;
    Fan fan = build_fan(spec, q, dir, cone_samples, local);
    FanIndex index;
    index.cell = local.prefilter_gate;
    index.build(fan);
    const Vec3 base_u = spatial_part(exclusion_direction).normalized();
    const auto hit = probe_target(spec, q, fan, index, target.coords(), base_u, dir, local);
    if (!hit) return std::nullopt;
    return ConnectingSeed{hit->direction, hit->alt_parameter, hit->residual};
}

CutResult null_cut_parameter(const MetricSpec& spec, const Point& q, const Vec4& v,
                             TraceDirection direction, const CutOptions& opts) {
    const TraceResult base = trace_to_boundary(spec, q, v, direction, opts.s_max, opts.integrate);
    const JacobiTransport jt = jacobi_transport(spec, base.trajectory);
    const ConjProbe probe = make_probe(spec, base.trajectory, jt);
    const std::optional<double> conj = first_root(probe, base.hit.parameter);
    const std::optional<SecondGeodesic> second = second_impl(spec, q, v, base, direction, opts);

    CutResult out;
    out.s_exit = base.hit.parameter;
    // Ties and near-ties resolve to the conjugate label: the meeting family
    // degenerates into the focal point there.
    if (conj && second && second->arrival > *conj - 5e-3) {
        out.parameter = *conj;
        out.reason = CutReason::conjugate;
    } else if (second) {
        out.parameter = second->arrival;
        out.reason = CutReason::second_geodesic;
    } else if (conj) {
        out.parameter = *conj;
        out.reason = CutReason::conjugate;
    }
    if (out.parameter) out.location = base.trajectory.point(*out.parameter);
    return out;
}

CutCertificate no_cut_certificate(const MetricSpec& spec, const Region& region,
                                  const std::vector<Point>& base_points, int directions_per_point,
                                  const CutOptions& opts) {
    CutCertificate cert;
    cert.certified = true;
    cert.margin = kInf;

    const std::vector<Vec3> dirs = fibonacci_sphere(directions_per_point);
    for (const Point& p : base_points) {
        if (!region.contains(p)) continue;
        Fan fan;
        FanIndex index;
        bool fan_built = false;

        auto sample_margin = [&](const TraceResult& base) -> double {
            const double s_exit = base.hit.parameter;

            double s_region = s_exit;
            double s_in = 0.0;
            for (const TrajectoryNode& n : base.trajectory.nodes) {
                const Point pn{n.y[0], Vec3(n.y[1], n.y[2], n.y[3])};
                if (!region.contains(pn)) {
                    double lo = s_in;
                    double hi = n.s;
                    for (int it = 0; it < 50; ++it) {
                        const double mid = 0.5 * (lo + hi);
                        if (region.contains(base.trajectory.point(mid)))
                            lo = mid;
                        else
                            hi = mid;
                    }
                    s_region = 0.5 * (lo + hi);
                    break;
                }
                s_in = n.s;
            }

            const JacobiTransport jt = jacobi_transport(spec, base.trajectory);
            const ConjProbe probe = make_probe(spec, base.trajectory, jt);
            const std::optional<double> conj = first_root(probe, s_exit);

            if (!fan_built) {
                fan = build_fan(spec, p, TraceDirection::forward, opts.cone_samples, opts);
                index.cell = opts.prefilter_gate;
                index.build(fan);
                fan_built = true;
            }

            const Vec3 base_u = spatial_part(base.trajectory.seed_tangent).normalized();
            std::optional<double> t_second;
            double t_clean = 0.0;
            for (int k = 1; k <= opts.targets; ++k) {
                const double t = s_exit * k / (opts.targets + 1.0);
                auto hit = probe_target(spec, p, fan, index, base.trajectory.point(t).coords(),
                                        base_u, TraceDirection::forward, opts);
                if (hit) {
                    t_second = t;
                    break;
                }
                t_clean = t;
            }
            if (t_second) {
                double t_hit = *t_second;
                for (int r = 0; r < 4; ++r) {
                    const double tm = 0.5 * (t_clean + t_hit);
                    auto hit = probe_target(spec, p, fan, index,
                                            base.trajectory.point(tm).coords(), base_u,
                                            TraceDirection::forward, opts);
                    if (hit)
                        t_hit = tm;
                    else
                        t_clean = tm;
                }
                t_second = t_hit;
            }

            double unsafe = s_exit;
            if (conj) unsafe = std::min(unsafe, *conj);
            if (t_second) unsafe = std::min(unsafe, *t_second);
            return std::min(unsafe, s_exit) - std::min(s_region, s_exit);
        };

        for (const Vec3& u0 : dirs) {
            TraceResult base;
            bool traced = false;
            Vec3 u = u0;
            for (int attempt = 0; attempt < 2 && !traced; ++attempt) {
                try {
                    base = trace_to_boundary(spec, p, null_direction(spec, p, u),
                                             TraceDirection::forward, opts.s_max, opts.integrate);
                    traced = true;
                } catch (const error&) {
                    Vec3 e1, e2;
                    orthonormal_complement(u, e1, e2);
                    u = (u + 1e-4 * e1).normalized();
                }
            }
            if (!traced) {
                cert.certified = false;
                continue;
            }
            try {
                const double margin_sample = sample_margin(base);
                cert.margin = std::min(cert.margin, margin_sample);
                if (margin_sample < 0.0) cert.certified = false;
                ++cert.sample_count;
            } catch (const error&) {
                cert.certified = false;
            }
        }
    }

    if (cert.sample_count == 0) {
        cert.certified = false;
        cert.margin = 0.0;
    }
    if (cert.margin == kInf) cert.margin = 0.0;
    return cert;
}

} // namespace diamond
