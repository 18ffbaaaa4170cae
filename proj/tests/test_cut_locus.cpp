#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "diamond/cut_locus.hpp"
#include "diamond/metric.hpp"
#include "diamond/sampling.hpp"

#include "oracles/fan_oracle.hpp"
#include "oracles/minkowski_oracle.hpp"

#include <cmath>
#include <random>

using namespace diamond;

namespace {

const MetricSpec& mink_spec() {
    static MetricSpec s = minkowski_metric();
    return s;
}

// Weak lens: bends rays but cannot refocus them inside the domain.
const MetricSpec& weak_bump() {
    static MetricSpec s = bump_metric(0.3, 0.2);
    return s;
}

// Strong lens with an interior focus along the axial seed below.
const MetricSpec& strong_bump() {
    static MetricSpec s = bump_metric(0.8, 0.15);
    return s;
}

const Point kAxialSeed(-0.55, Vec3(0.35, 0.0, 0.0));
const Vec3 kAxialHeading(-1.0, 0.0, 0.0);

Vec3 random_unit(std::mt19937& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    Vec3 u(n01(rng), n01(rng), n01(rng));
    while (u.norm() < 1e-6) u = Vec3(n01(rng), n01(rng), n01(rng));
    return u.normalized();
}

Point random_interior(std::mt19937& rng) {
    std::uniform_real_distribution<double> ut(-0.25, 0.25);
    std::uniform_real_distribution<double> ur(0.05, 0.4);
    const Vec3 x = ur(rng) * random_unit(rng);
    Point p(ut(rng), x);
    while (f_plus(p) > -0.2 || f_minus(p) > -0.2) {
        p.T *= 0.5;
        p.X *= 0.5;
    }
    return p;
}

CutOptions fast_opts(int cone, int targets) {
    CutOptions o;
    o.cone_samples = cone;
    o.targets = targets;
    return o;
}

} // namespace

TEST_CASE("flat screen response stays regular along every trace") {
    std::mt19937 rng(71001);
    for (int rep = 0; rep < 5; ++rep) {
        const Point q = random_interior(rng);
        const Vec4 v = null_direction(mink_spec(), q, random_unit(rng));
        const TraceResult tr = trace_to_boundary(mink_spec(), q, v);
        const JacobiTransport jt = jacobi_transport(mink_spec(), tr.trajectory);
        const auto scan = screen_response_scan(mink_spec(), tr.trajectory, jt);
        REQUIRE(scan.size() > 5);
        for (const ScreenResponse& r : scan) {
            if (r.s < 0.05) continue;
            CHECK(std::abs(r.M.determinant() / (r.s * r.s) - 1.0) < 1e-6);
            Eigen::JacobiSVD<Eigen::Matrix2d> svd(r.M);
            CHECK(std::abs(svd.singularValues()(1) / r.s - 1.0) < 1e-6);
        }
        CHECK_FALSE(first_conjugate(mink_spec(), q, v));
    }
}

TEST_CASE("flat traces have no cut, matching a dense fan scan") {
    std::mt19937 rng(71002);
    const CutOptions opts = fast_opts(64, 8);
    for (int rep = 0; rep < 50; ++rep) {
        const Point q = random_interior(rng);
        const Vec3 u = random_unit(rng);
        const Vec4 v = null_direction(mink_spec(), q, u);
        const CutResult cut = null_cut_parameter(mink_spec(), q, v, TraceDirection::forward, opts);
        CHECK_FALSE(cut.parameter);
        CHECK(cut.reason == CutReason::none);
        CHECK(cut.s_exit == doctest::Approx(mink::s_plus_hit(q, v)).epsilon(1e-8));
        CHECK_FALSE(fanorc::focus_grid(mink_spec(), q, u, 0.4, 250, 1.2, 4e-3, 5e-5));
    }
}

TEST_CASE("weak lens never reaches a focus and both routes agree on none") {
    const Point q(-0.55, Vec3(0.4, 0.0, 0.0));
    const Vec4 v = null_direction(weak_bump(), q, kAxialHeading);
    const TraceResult tr = trace_to_boundary(weak_bump(), q, v);

    CHECK_FALSE(first_conjugate(weak_bump(), q, v));
    CHECK_FALSE(fanorc::focus_ring(weak_bump(), q, kAxialHeading, 0.98 * tr.hit.parameter));

    const CutResult cut =
        null_cut_parameter(weak_bump(), q, v, TraceDirection::forward, fast_opts(192, 12));
    CHECK_FALSE(cut.parameter);
    CHECK(cut.reason == CutReason::none);
}

TEST_CASE("axial ray through the strong lens focuses where the ring oracle says") {
    const Vec4 v = null_direction(strong_bump(), kAxialSeed, kAxialHeading);

    const TraceResult tr = trace_to_boundary(strong_bump(), kAxialSeed, v);
    const auto conj = first_conjugate(strong_bump(), kAxialSeed, v);
    REQUIRE(conj);
    CHECK(*conj < tr.hit.parameter);

    const Point focus = tr.trajectory.point(*conj);
    CHECK(f_plus(focus) < -0.05);
    CHECK(f_minus(focus) < -0.05);

    const auto ring = fanorc::focus_ring(strong_bump(), kAxialSeed, kAxialHeading,
                                         0.98 * tr.hit.parameter);
    REQUIRE(ring);
    CHECK(std::abs(*ring - *conj) < 1e-2);
}

TEST_CASE("off-axis ray develops an astigmatic focus matching the ring oracle") {
    const Vec3 u = Vec3(-1.0, 0.125, 0.0).normalized();
    const Vec4 v = null_direction(strong_bump(), kAxialSeed, u);

    const TraceResult tr = trace_to_boundary(strong_bump(), kAxialSeed, v);
    const auto conj = first_conjugate(strong_bump(), kAxialSeed, v);
    REQUIRE(conj);
    CHECK(*conj < tr.hit.parameter);

    const auto scan =
        screen_response_scan(strong_bump(), tr.trajectory,
                             jacobi_transport(strong_bump(), tr.trajectory));
    double min_det = 1.0;
    for (const auto& r : scan) min_det = std::min(min_det, r.M.determinant() / (r.s * r.s));
    CHECK(min_det < 0.0);

    const auto ring = fanorc::focus_ring(strong_bump(), kAxialSeed, u, 0.98 * tr.hit.parameter);
    REQUIRE(ring);
    CHECK(std::abs(*ring - *conj) < 1e-2);
}

TEST_CASE("conjugate locations are shared across conformal rescalings") {
    const MetricSpec& base = strong_bump();
    MetricSpec scaled = base;
    scaled.name = "bump-rescaled";
    auto gamma = [](const Point& p) {
        return 0.15 * std::sin(1.2 * p.T + 0.9 * p.X[0] - 0.4 * p.X[1]);
    };
    scaled.beta = [&base, gamma](const Point& p) { return std::exp(2.0 * gamma(p)) * base.beta(p); };
    scaled.kappa = [&base, gamma](const Point& p) {
        return Mat3(std::exp(2.0 * gamma(p)) * base.kappa(p));
    };
    scaled.dbeta = nullptr;
    scaled.dkappa = nullptr;

    const Vec4 v1 = null_direction(base, kAxialSeed, kAxialHeading);
    const Vec4 v2 = null_direction(scaled, kAxialSeed, kAxialHeading);

    const auto c1 = first_conjugate(base, kAxialSeed, v1);
    const auto c2 = first_conjugate(scaled, kAxialSeed, v2);
    REQUIRE(c1);
    REQUIRE(c2);

    const Point p1 = trace_to_boundary(base, kAxialSeed, v1).trajectory.point(*c1);
    const Point p2 = trace_to_boundary(scaled, kAxialSeed, v2).trajectory.point(*c2);
    CHECK((p1.coords() - p2.coords()).norm() < 1e-4);
}

TEST_CASE("conformally flat metric keeps the empty conjugate set") {
    MetricSpec conf = conformal_metric("0.25*sin(1.5*T + 0.7*x)*exp(-r^2)");
    std::mt19937 rng(71003);
    for (int rep = 0; rep < 3; ++rep) {
        const Point q = random_interior(rng);
        const Vec4 v = null_direction(conf, q, random_unit(rng));
        CHECK_FALSE(first_conjugate(conf, q, v));
    }
}

TEST_CASE("no second geodesic arrives before the axial focus") {
    const Vec4 v = null_direction(strong_bump(), kAxialSeed, kAxialHeading);
    const CutOptions opts = fast_opts(384, 24);

    const auto conj = first_conjugate(strong_bump(), kAxialSeed, v);
    REQUIRE(conj);

    const auto second =
        second_geodesic_search(strong_bump(), kAxialSeed, v, TraceDirection::forward, opts);
    if (second) CHECK(second->arrival >= *conj - 5e-3);

    const CutResult cut =
        null_cut_parameter(strong_bump(), kAxialSeed, v, TraceDirection::forward, opts);
    REQUIRE(cut.parameter);
    CHECK(cut.reason == CutReason::conjugate);
    CHECK(*cut.parameter == doctest::Approx(*conj).epsilon(1e-9));
    CHECK((cut.location.coords() -
           trace_to_boundary(strong_bump(), kAxialSeed, v).trajectory.point(*conj).coords())
              .norm() < 1e-9);
}

TEST_CASE("shooting to an explicit target respects the exclusion cone") {
    const Point q(0.0, Vec3::Zero());
    const Vec3 u(1.0, 0.0, 0.0);
    const Vec4 v = null_direction(mink_spec(), q, u);
    const Point on_cone = mink::line_at(q, v, 0.3);

    // The radial direction is the only connector; excluding it leaves none.
    const auto blocked = second_geodesic_search(mink_spec(), q, on_cone, v, 256);
    CHECK_FALSE(blocked);

    // Excluding an unrelated heading leaves the radial connector findable.
    const Vec4 w = null_direction(mink_spec(), q, Vec3(0.0, 1.0, 0.0));
    const auto found = second_geodesic_search(mink_spec(), q, on_cone, w, 256);
    REQUIRE(found);
    CHECK(found->residual < 1e-6);
    CHECK(spatial_part(found->direction).normalized().dot(u) > 0.999);

    // A point outside the light cone of q is unreachable.
    const Point outside(0.05, Vec3(0.4, 0.0, 0.0));
    CHECK_FALSE(second_geodesic_search(mink_spec(), q, outside, w, 256));
}

TEST_CASE("certificate accepts the whole flat diamond with zero margin") {
    Region all;
    all.contains = [](const Point& p) { return interior(p); };
    const std::vector<Point> pts = {Point(0.0, Vec3::Zero()), Point(0.1, Vec3(0.2, -0.1, 0.05)),
                                    Point(-0.2, Vec3(-0.1, 0.3, 0.1))};
    const CutCertificate cert = no_cut_certificate(mink_spec(), all, pts, 8, fast_opts(128, 8));
    CHECK(cert.certified);
    CHECK(cert.sample_count == 24);
    CHECK(cert.margin >= -1e-9);
    CHECK(cert.margin <= 1e-5);
}

TEST_CASE("certificate rejects a region that straddles the caustic") {
    // The focusing cone around the axial heading is ~0.22 rad wide, so the
    // direction fan must be dense enough to land inside it.
    Region lower;
    lower.contains = [](const Point& p) { return interior(p) && p.T < 0.42; };
    const CutCertificate cert =
        no_cut_certificate(strong_bump(), lower, {kAxialSeed}, 256, fast_opts(192, 12));
    CHECK_FALSE(cert.certified);
    CHECK(cert.margin < 0.0);
    CHECK(cert.sample_count > 0);
}

TEST_CASE("cut parameter is lower semicontinuous under seed perturbations") {
    const CutOptions opts = fast_opts(256, 16);
    const Vec4 v0 = null_direction(strong_bump(), kAxialSeed, kAxialHeading);
    const CutResult base =
        null_cut_parameter(strong_bump(), kAxialSeed, v0, TraceDirection::forward, opts);
    REQUIRE(base.parameter);
    const double rho0 = *base.parameter;

    const std::vector<Vec3> headings = {Vec3(-1.0, 1e-3, 0.0).normalized(),
                                        Vec3(-1.0, 0.0, -1e-3).normalized()};
    for (const Vec3& h : headings) {
        const CutResult c = null_cut_parameter(
            strong_bump(), kAxialSeed, null_direction(strong_bump(), kAxialSeed, h),
            TraceDirection::forward, opts);
        const double rho = c.parameter ? *c.parameter : c.s_exit;
        CHECK(rho >= rho0 - 0.02);
    }

    const Point q2(kAxialSeed.T + 1e-3, kAxialSeed.X + Vec3(0.0, 1e-3, 0.0));
    const CutResult c2 =
        null_cut_parameter(strong_bump(), q2, null_direction(strong_bump(), q2, kAxialHeading),
                           TraceDirection::forward, opts);
    const double rho2 = c2.parameter ? *c2.parameter : c2.s_exit;
    CHECK(rho2 >= rho0 - 0.02);
}
