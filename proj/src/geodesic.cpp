#include "diamond/geodesic.hpp"

#include <boost/numeric/odeint.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

namespace diamond {
namespace {

namespace ode = boost::numeric::odeint;

constexpr double stall_dt = 1e-14;
constexpr std::size_t max_total_steps = 2000000;

Point point_of(const std::array<double, 8>& y) { return Point{y[0], Vec3(y[1], y[2], y[3])}; }

Vec4 zeta_of(const std::array<double, 8>& y) { return Vec4(y[4], y[5], y[6], y[7]); }

double cubic(double a, double b, double da, double db, double h, double t) {
    const double t2 = t * t;
    const double t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * a + (t3 - 2 * t2 + t) * h * da + (-2 * t3 + 3 * t2) * b +
           (t3 - t2) * h * db;
}

// dy/ds of the Hamiltonian flow of b(x, zeta) = g^{ij} zeta_i zeta_j, with the
// trace direction folded in so the stored parameter always increases.
struct BaseRhs {
    const MetricSpec* spec;
    double dirmul;

    void operator()(const std::array<double, 8>& y, std::array<double, 8>& d) const {
        const Point p = point_of(y);
        const Vec4 zeta = zeta_of(y);
        const Mat4 ginv = metric_inverse(*spec, p);
        const std::array<Mat4, 4> dginv = metric_inverse_derivatives(*spec, p);
        const Vec4 xdot = 2.0 * (ginv * zeta);
        for (int i = 0; i < 4; ++i) d[i] = dirmul * xdot[i];
        for (int a = 0; a < 4; ++a) d[4 + a] = -dirmul * zeta.dot(dginv[a] * zeta);
    }
};

// Rescales the spatial momentum so b(x, zeta) = 0 holds exactly; leaves the
// parameterization fixed through zeta_T.
struct NullProject {
    const MetricSpec* spec;
    bool enabled = true;

    void operator()(std::array<double, 8>& y) const {
        if (!enabled) return;
        const Point p = point_of(y);
        const double beta = spec->beta(p);
        const Mat3 kappa = spec->kappa(p);
        const Vec3 Z(y[5], y[6], y[7]);
        const double target = y[4] * y[4] / beta;
        const double quad = Z.dot(kappa.ldlt().solve(Z));
        if (!(quad > 0.0) || !(target > 0.0)) return;
        const double lam = std::sqrt(target / quad);
        y[5] *= lam;
        y[6] *= lam;
        y[7] *= lam;
    }
};

template <std::size_t N, typename Rhs, typename Project, typename OnNode>
void drive(Rhs rhs, Project project, OnNode on_node, std::array<double, N>& y, double s_begin,
           double s_final, const IntegrateOptions& opts) {
    using State = std::array<double, N>;
    auto stepper = ode::make_controlled(opts.abs_tol, opts.rel_tol, ode::runge_kutta_dopri5<State>());
    auto system = [&rhs](const State& x, State& dxdt, double) { rhs(x, dxdt); };
    double s = s_begin;
    double dt = std::min(opts.max_step, s_final - s_begin);
    State dyds{};
    project(y);
    rhs(y, dyds);
    if (!on_node(s, y, dyds)) return;
    std::size_t steps = 0;
    while (s < s_final - 1e-15) {
        if (++steps > max_total_steps) throw error(errc::numeric, "integrator stall");
        dt = std::min({dt, opts.max_step, s_final - s});
        if (stepper.try_step(system, y, s, dt) == ode::fail) {
            if (dt < stall_dt) throw error(errc::numeric, "integrator stall");
            continue;
        }
        project(y);
        rhs(y, dyds);
        if (!on_node(s, y, dyds)) return;
    }
}

void validate_seed_point(const Point& q) {
    if (!std::isfinite(q.T) || !q.X.allFinite())
        throw error(errc::config, "seed point is not finite");
    if (f_plus(q) > 1e-9 || f_minus(q) > 1e-9)
        throw error(errc::config, "seed point outside the diamond");
}

void validate_seed_tangent(const MetricSpec& spec, const Point& q, const Vec4& v, double eps_null) {
    if (!v.allFinite()) throw error(errc::numeric, "degenerate vector");
    const double scale = gplus_norm2(spec, q, v);
    if (!(scale > 0.0)) throw error(errc::numeric, "degenerate vector");
    if (!(v[0] > 0.0)) throw error(errc::numeric, "seed not future-pointing");
    const Mat4 g = metric_matrix(spec, q);
    if (std::abs(v.dot(g * v)) > eps_null * scale) throw error(errc::numeric, "seed not null");
}

Trajectory run_trace(const MetricSpec& spec, const Point& q, const Vec4& zeta0, const Vec4& v_seed,
                     double s_max, TraceDirection direction, const IntegrateOptions& opts,
                     bool reproject) {
    if (!(s_max > 0.0)) throw error(errc::config, "nonpositive trace length");
    const double dirmul = direction == TraceDirection::forward ? 1.0 : -1.0;
    std::array<double, 8> y{q.T, q.X[0], q.X[1], q.X[2], zeta0[0], zeta0[1], zeta0[2], zeta0[3]};
    Trajectory tr;
    tr.spec = &spec;
    tr.direction = direction;
    tr.seed_point = q;
    tr.seed_tangent = v_seed;
    tr.nodes.reserve(64);
    BaseRhs rhs{&spec, dirmul};
    NullProject proj{&spec, reproject};
    drive<8>(
        rhs, proj,
        [&tr](double s, const std::array<double, 8>& yy, const std::array<double, 8>& dd) {
            tr.nodes.push_back({s, yy, dd});
            return true;
        },
        y, 0.0, s_max, opts);
    return tr;
}

} // namespace

std::size_t Trajectory::node_below(double s) const {
    const auto it = std::upper_bound(nodes.begin(), nodes.end(), s,
                                     [](double val, const TrajectoryNode& n) { return val < n.s; });
    const std::ptrdiff_t idx = (it - nodes.begin()) - 1;
    return static_cast<std::size_t>(
        std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(nodes.size()) - 2));
}

GeodesicState Trajectory::state(double s) const {
    if (nodes.empty()) throw error(errc::numeric, "empty trajectory");
    if (nodes.size() == 1) return {point_of(nodes.front().y), zeta_of(nodes.front().y)};
    const double sc = std::clamp(s, nodes.front().s, nodes.back().s);
    const std::size_t k = node_below(sc);
    const TrajectoryNode& a = nodes[k];
    const TrajectoryNode& b = nodes[k + 1];
    const double h = b.s - a.s;
    const double t = h > 0.0 ? (sc - a.s) / h : 0.0;
    std::array<double, 8> y{};
    for (int i = 0; i < 8; ++i) y[i] = cubic(a.y[i], b.y[i], a.dyds[i], b.dyds[i], h, t);
    return {point_of(y), zeta_of(y)};
}

Point Trajectory::point(double s) const { return state(s).x; }

Vec4 Trajectory::tangent(double s) const {
    const GeodesicState st = state(s);
    return 2.0 * (metric_inverse(*spec, st.x) * st.zeta);
}

double Trajectory::hamiltonian(double s) const {
    const GeodesicState st = state(s);
    return st.zeta.dot(metric_inverse(*spec, st.x) * st.zeta);
}

Trajectory integrate_null(const MetricSpec& spec, const Point& q, const Vec4& v, double s_max,
                          TraceDirection direction, const IntegrateOptions& opts) {
    validate_seed_point(q);
    validate_seed_tangent(spec, q, v, opts.eps_null);
    const Vec4 zeta0 = 0.5 * flat(spec, q, v);
    return run_trace(spec, q, zeta0, v, s_max, direction, opts, true);
}

Trajectory integrate_momentum(const MetricSpec& spec, const Point& q, const Vec4& zeta0,
                              double s_max, TraceDirection direction, const IntegrateOptions& opts,
                              bool reproject) {
    validate_seed_point(q);
    if (!zeta0.allFinite()) throw error(errc::numeric, "degenerate vector");
    const Vec4 v = 2.0 * (metric_inverse(spec, q) * zeta0);
    return run_trace(spec, q, zeta0, v, s_max, direction, opts, reproject);
}

double transversality(const Point& p, Side side, const Vec4& w) {
    const double r = p.r();
    if (!(r > 1e-12)) throw error(errc::numeric, "degenerate vector");
    const Vec3 xhat = p.X / r;
    const double radial = xhat[0] * w[1] + xhat[1] * w[2] + xhat[2] * w[3];
    return side == Side::Splus ? -(w[0] + radial) : -w[0] + radial;
}

TraceResult trace_to_boundary(const MetricSpec& spec, const Point& q, const Vec4& v,
                              TraceDirection direction, double s_max, const IntegrateOptions& opts,
                              double eps_hit, double grazing_tol) {
    validate_seed_point(q);
    validate_seed_tangent(spec, q, v, opts.eps_null);
    const Side exit_side = direction == TraceDirection::forward ? Side::Splus : Side::Sminus;
    const Side other_side = direction == TraceDirection::forward ? Side::Sminus : Side::Splus;
    if (boundary_residual(q, exit_side) > -1e-12)
        throw error(errc::config, "seed point on the exit boundary");

    const double dirmul = direction == TraceDirection::forward ? 1.0 : -1.0;
    const Vec4 zeta0 = 0.5 * flat(spec, q, v);
    std::array<double, 8> y{q.T, q.X[0], q.X[1], q.X[2], zeta0[0], zeta0[1], zeta0[2], zeta0[3]};

    Trajectory tr;
    tr.spec = &spec;
    tr.direction = direction;
    tr.seed_point = q;
    tr.seed_tangent = v;
    tr.nodes.reserve(64);

    BaseRhs rhs{&spec, dirmul};
    NullProject proj{&spec, true};

    bool crossed = false;
    bool interior_excursion = false;
    auto exit_residual = [&](const std::array<double, 8>& yy) {
        return boundary_residual(point_of(yy), exit_side);
    };
    drive<8>(
        rhs, proj,
        [&](double s, const std::array<double, 8>& yy, const std::array<double, 8>& dd) {
            const Point p = point_of(yy);
            if (boundary_residual(p, other_side) > 1e-7)
                throw error(errc::numeric, "trace exited through the wrong boundary");
            tr.nodes.push_back({s, yy, dd});
            const double fe = boundary_residual(p, exit_side);
            if (fe >= 0.0 && tr.nodes.size() >= 2) {
                crossed = true;
                return false;
            }
            if (tr.nodes.size() >= 2) {
                const TrajectoryNode& a = tr.nodes[tr.nodes.size() - 2];
                const TrajectoryNode& b = tr.nodes.back();
                const double h = b.s - a.s;
                std::array<double, 8> ym{};
                for (int i = 0; i < 8; ++i) ym[i] = cubic(a.y[i], b.y[i], a.dyds[i], b.dyds[i], h, 0.5);
                if (boundary_residual(point_of(ym), exit_side) >= 0.0) {
                    crossed = true;
                    interior_excursion = true;
                    return false;
                }
            }
            return true;
        },
        y, 0.0, s_max, opts);

    if (!crossed) throw error(errc::numeric, "possibly trapped or s_max too small");

    const TrajectoryNode& na = tr.nodes[tr.nodes.size() - 2];
    const TrajectoryNode& nb = tr.nodes.back();
    const double h = nb.s - na.s;

    auto hermite_residual = [&](double s) {
        const double t = (s - na.s) / h;
        std::array<double, 8> yy{};
        for (int i = 0; i < 8; ++i) yy[i] = cubic(na.y[i], nb.y[i], na.dyds[i], nb.dyds[i], h, t);
        return exit_residual(yy);
    };

    // Bisect the dense output to seed the true-flow refinement.
    double blo = na.s;
    double bhi = interior_excursion ? na.s + 0.5 * h : nb.s;
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (blo + bhi);
        if (hermite_residual(mid) < 0.0)
            blo = mid;
        else
            bhi = mid;
    }
    double s_est = 0.5 * (blo + bhi);

    auto state_at = [&](double s_target) {
        std::array<double, 8> yy = na.y;
        if (s_target > na.s + 1e-16) {
            drive<8>(
                rhs, proj,
                [](double, const std::array<double, 8>&, const std::array<double, 8>&) { return true; },
                yy, na.s, s_target, opts);
        }
        return yy;
    };

    double s_lo = na.s;
    double s_hi = nb.s;
    if (interior_excursion) {
        // The dense output crossed inside a step whose endpoints are interior;
        // verify the crossing on the true flow before trusting the bracket.
        const double f_probe = exit_residual(state_at(s_est));
        if (f_probe < 0.0) throw error(errc::numeric, "grazing hit");
        s_hi = s_est;
    }

    std::array<double, 8> yh = state_at(s_est);
    double f = exit_residual(yh);
    bool refined = std::abs(f) <= eps_hit;
    for (int it = 0; it < 24 && !refined; ++it) {
        if (f < 0.0)
            s_lo = s_est;
        else
            s_hi = s_est;
        std::array<double, 8> dd{};
        rhs(yh, dd);
        const Point ph = point_of(yh);
        const double r = std::max(ph.r(), 1e-300);
        const Vec3 xhat = ph.X / r;
        const double radial = xhat[0] * dd[1] + xhat[1] * dd[2] + xhat[2] * dd[3];
        const double df = (exit_side == Side::Splus ? dd[0] : -dd[0]) + radial;
        double s_new = std::abs(df) > 1e-12 ? s_est - f / df : 0.5 * (s_lo + s_hi);
        if (!(s_new > s_lo) || !(s_new < s_hi)) s_new = 0.5 * (s_lo + s_hi);
        s_est = s_new;
        yh = state_at(s_est);
        f = exit_residual(yh);
        refined = std::abs(f) <= eps_hit;
    }
    if (!refined) throw error(errc::numeric, "grazing hit");

    const Point ph = point_of(yh);
    const Vec4 w = 2.0 * (metric_inverse(spec, ph) * zeta_of(yh));
    const double wnorm = std::sqrt(gplus_norm2(spec, ph, w));
    const double tau = transversality(ph, exit_side, w) / wnorm;
    if (tau > -grazing_tol) throw error(errc::numeric, "grazing hit");

    std::array<double, 8> dd{};
    rhs(yh, dd);
    tr.nodes.back() = TrajectoryNode{s_est, yh, dd};

    BoundaryHit hit{exit_side, ph, w, s_est, tau};
    return TraceResult{std::move(tr), hit};
}

namespace {

using State72 = std::array<double, 72>;
using Mat8Row = Eigen::Matrix<double, 8, 8, Eigen::RowMajor>;

struct JacobiRhs {
    const MetricSpec* spec;
    double dirmul;

    void operator()(const State72& y, State72& d) const {
        std::array<double, 8> yb{};
        std::array<double, 8> db{};
        std::copy_n(y.begin(), 8, yb.begin());
        BaseRhs{spec, dirmul}(yb, db);
        std::copy_n(db.begin(), 8, d.begin());

        const Point p = point_of(yb);
        const Vec4 zeta = zeta_of(yb);
        const Mat4 ginv = metric_inverse(*spec, p);
        const std::array<Mat4, 4> dginv = metric_inverse_derivatives(*spec, p);
        const Mat4 H = inverse_hessian_contraction(*spec, p, zeta);
        Mat4 B;
        for (int a = 0; a < 4; ++a) B.col(a) = 2.0 * (dginv[a] * zeta);
        Mat8 A;
        A.topLeftCorner<4, 4>() = B;
        A.topRightCorner<4, 4>() = 2.0 * ginv;
        A.bottomLeftCorner<4, 4>() = -H;
        A.bottomRightCorner<4, 4>() = -B.transpose();

        Eigen::Map<const Mat8Row> J(y.data() + 8);
        Eigen::Map<Mat8Row> dJ(d.data() + 8);
        dJ = dirmul * (A * J);
    }
};

} // namespace

Mat8 JacobiTransport::propagator(double s) const {
    if (nodes.empty()) throw error(errc::numeric, "empty trajectory");
    if (nodes.size() == 1) return nodes.front().J;
    const double sc = std::clamp(s, nodes.front().s, nodes.back().s);
    const auto it = std::upper_bound(nodes.begin(), nodes.end(), sc,
                                     [](double val, const JacobiNode& n) { return val < n.s; });
    const std::ptrdiff_t raw = (it - nodes.begin()) - 1;
    const std::size_t k = static_cast<std::size_t>(
        std::clamp<std::ptrdiff_t>(raw, 0, static_cast<std::ptrdiff_t>(nodes.size()) - 2));
    const JacobiNode& a = nodes[k];
    const JacobiNode& b = nodes[k + 1];
    const double h = b.s - a.s;
    const double t = h > 0.0 ? (sc - a.s) / h : 0.0;
    Mat8 out;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
            out(i, j) = cubic(a.J(i, j), b.J(i, j), a.dJ(i, j), b.dJ(i, j), h, t);
    return out;
}

Mat4 JacobiTransport::D(double s) const { return propagator(s).block<4, 4>(0, 4); }

GeodesicState JacobiTransport::base_state(double s) const {
    if (nodes.empty()) throw error(errc::numeric, "empty trajectory");
    if (nodes.size() == 1) return {point_of(nodes.front().y), zeta_of(nodes.front().y)};
    const double sc = std::clamp(s, nodes.front().s, nodes.back().s);
    const auto it = std::upper_bound(nodes.begin(), nodes.end(), sc,
                                     [](double val, const JacobiNode& n) { return val < n.s; });
    const std::ptrdiff_t raw = (it - nodes.begin()) - 1;
    const std::size_t k = static_cast<std::size_t>(
        std::clamp<std::ptrdiff_t>(raw, 0, static_cast<std::ptrdiff_t>(nodes.size()) - 2));
    const JacobiNode& a = nodes[k];
    const JacobiNode& b = nodes[k + 1];
    const double h = b.s - a.s;
    const double t = h > 0.0 ? (sc - a.s) / h : 0.0;
    std::array<double, 8> y{};
    for (int i = 0; i < 8; ++i) y[i] = cubic(a.y[i], b.y[i], a.dy[i], b.dy[i], h, t);
    return {point_of(y), zeta_of(y)};
}

JacobiTransport jacobi_transport(const MetricSpec& spec, const Trajectory& trajectory) {
    if (trajectory.nodes.empty()) throw error(errc::numeric, "empty trajectory");
    const double dirmul = trajectory.direction == TraceDirection::forward ? 1.0 : -1.0;
    State72 y{};
    std::copy_n(trajectory.nodes.front().y.begin(), 8, y.begin());
    Eigen::Map<Mat8Row>(y.data() + 8).setIdentity();

    JacobiTransport jt;
    jt.direction = trajectory.direction;
    JacobiRhs rhs{&spec, dirmul};
    auto no_project = [](State72&) {};
    drive<72>(
        rhs, no_project,
        [&jt](double s, const State72& yy, const State72& dd) {
            JacobiNode node;
            node.s = s;
            std::copy_n(yy.begin(), 8, node.y.begin());
            std::copy_n(dd.begin(), 8, node.dy.begin());
            node.J = Eigen::Map<const Mat8Row>(yy.data() + 8);
            node.dJ = Eigen::Map<const Mat8Row>(dd.data() + 8);
            jt.nodes.push_back(std::move(node));
            return true;
        },
        y, 0.0, trajectory.s_end(), IntegrateOptions{});
    return jt;
}

ScreenFrame screen_frame(const MetricSpec& spec, const Point& q, const Vec4& v) {
    const Mat3 kappa = spec.kappa(q);
    const Vec3 V = v.tail<3>();
    const double vk = V.dot(kappa * V);
    if (!(vk > 0.0)) throw error(errc::numeric, "degenerate vector");

    std::array<Vec3, 2> u{};
    int found = 0;
    for (int c = 0; c < 3 && found < 2; ++c) {
        Vec3 cand = Vec3::Unit(c);
        cand -= (V.dot(kappa * cand) / vk) * V;
        for (int j = 0; j < found; ++j) cand -= (u[j].dot(kappa * cand)) * u[j];
        const double n2 = cand.dot(kappa * cand);
        if (n2 > 1e-12) u[found++] = cand / std::sqrt(n2);
    }
    if (found < 2) throw error(errc::numeric, "degenerate vector");

    ScreenFrame fr;
    fr.u1 = spatial_embed(0.0, u[0]);
    fr.u2 = spatial_embed(0.0, u[1]);
    fr.E1 = 0.5 * flat(spec, q, fr.u1);
    fr.E2 = 0.5 * flat(spec, q, fr.u2);
    return fr;
}

} // namespace diamond
