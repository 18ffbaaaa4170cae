#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "diamond/mesh.hpp"
#include "diamond/metric.hpp"
#include "diamond/sampling.hpp"
#include "diamond/scattering.hpp"

#include "oracles/minkowski_oracle.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace diamond;

namespace {

const MetricSpec& mink_spec() {
    static MetricSpec s = minkowski_metric();
    return s;
}

// Strong lens: refocuses paraxial bundles inside the domain.
const MetricSpec& strong_bump() {
    static MetricSpec s = bump_metric(0.8, 0.15);
    return s;
}

Region whole_interior() {
    return Region{[](const Point& q) { return interior(q); }};
}

// Congruence meshes over the inward cone sweeps T + |X| = 1 - 2*T1
// (future-directed, from the past-sheet level sphere) and its mirror
// T - |X| = 2*T1 - 1. Curves are straight generators, one per icosphere
// direction, so every sample and velocity is exact.
CongruenceMesh cone_mesh_plus(double T1, double t_hi, int level, int nt) {
    CongruenceMesh m;
    icosphere(level, m.base_dirs, m.tris);
    for (int k = 0; k < nt; ++k) m.tgrid.push_back(t_hi * k / (nt - 1));
    m.pos.resize(m.base_dirs.size());
    m.vel.resize(m.base_dirs.size());
    for (size_t i = 0; i < m.base_dirs.size(); ++i) {
        const Vec3& a = m.base_dirs[i];
        for (double t : m.tgrid) {
            m.pos[i].push_back(Vec4(-T1 + t, (1 - T1 - t) * a[0], (1 - T1 - t) * a[1],
                                    (1 - T1 - t) * a[2]));
            m.vel[i].push_back(Vec4(1, -a[0], -a[1], -a[2]));
        }
    }
    return m;
}

CongruenceMesh cone_mesh_minus(double T1, double t_hi, int level, int nt) {
    CongruenceMesh m;
    icosphere(level, m.base_dirs, m.tris);
    for (int k = 0; k < nt; ++k) m.tgrid.push_back(t_hi * k / (nt - 1));
    m.pos.resize(m.base_dirs.size());
    m.vel.resize(m.base_dirs.size());
    for (size_t i = 0; i < m.base_dirs.size(); ++i) {
        const Vec3& a = m.base_dirs[i];
        for (double t : m.tgrid) {
            m.pos[i].push_back(Vec4(T1 - t, (1 - T1 - t) * a[0], (1 - T1 - t) * a[1],
                                    (1 - T1 - t) * a[2]));
            m.vel[i].push_back(Vec4(-1, -a[0], -a[1], -a[2]));
        }
    }
    return m;
}

BoundaryLightVector past_radial_source(const Vec3& omega) {
    return make_boundary_vector(mink_spec(), Point(-0.5, Vec3(-0.5 * omega)),
                                Vec4(1, omega[0], omega[1], omega[2]));
}

// Three radial sources whose forward lines concur at the origin.
std::array<BoundaryLightVector, 3> axis_sources() {
    return {past_radial_source(Vec3(1, 0, 0)), past_radial_source(Vec3(0, 1, 0)),
            past_radial_source(Vec3(0, 0, 1))};
}

RelationTuple axis_tuple(const Vec3& head_dir) {
    auto s = axis_sources();
    RelationTuple t;
    t.v0 = make_boundary_vector(mink_spec(), Point(0.5, Vec3(0.5 * head_dir.normalized())),
                                Vec4(1, head_dir[0], head_dir[1], head_dir[2]));
    t.v1 = s[0];
    t.v2 = s[1];
    t.v3 = s[2];
    return t;
}

VMinusSpec open_scheme() {
    return build_V_minus(mink_spec(), 1, PatchSpec{Side::Sminus, nullptr});
}

} // namespace

TEST_CASE("boundary light vectors validate the sheet and cone constraints") {
    const MetricSpec& g = mink_spec();

    auto past = make_boundary_vector(g, Point(-0.5, Vec3(0.5, 0, 0)), Vec4(1, -1, 0, 0));
    CHECK(past.side == Side::Sminus);
    auto fut = make_boundary_vector(g, Point(0.5, Vec3(-0.5, 0, 0)), Vec4(1, -1, 0, 0));
    CHECK(fut.side == Side::Splus);

    // off either sheet, and the corner sphere which belongs to neither
    CHECK_THROWS_WITH_AS(make_boundary_vector(g, Point(-0.55, Vec3(0.45, 0.1, -0.05)),
                                              Vec4(1, -1, 0, 0)),
                         "point not on a single boundary sheet", error);
    CHECK_THROWS_WITH_AS(make_boundary_vector(g, Point(0, Vec3(1, 0, 0)), Vec4(1, -1, 0, 0)),
                         "point not on a single boundary sheet", error);

    CHECK_THROWS_WITH_AS(make_boundary_vector(g, Point(-0.5, Vec3(0.5, 0, 0)), Vec4(1, -0.5, 0, 0)),
                         "boundary vector not null", error);
    CHECK_THROWS_WITH_AS(make_boundary_vector(g, Point(-0.5, Vec3(0.5, 0, 0)), Vec4(-1, 1, 0, 0)),
                         "boundary vector not future-pointing", error);
    // sheet-tangent null direction: rides the generator, no transversal component
    CHECK_THROWS_WITH_AS(make_boundary_vector(g, Point(-0.5, Vec3(0.5, 0, 0)), Vec4(1, 1, 0, 0)),
                         "boundary vector not transversal", error);
    Vec4 bad(1, std::nan(""), 0, 0);
    CHECK_THROWS_WITH_AS(make_boundary_vector(g, Point(-0.5, Vec3(0.5, 0, 0)), bad),
                         "boundary vector is not finite", error);
}

TEST_CASE("flat lens relation maps seeds along straight generators") {
    const MetricSpec& g = mink_spec();

    // radial seed: the line (-0.5+s, 0.5-s, 0, 0) exits at (0.5, -0.5, 0, 0)
    auto v = make_boundary_vector(g, Point(-0.5, Vec3(0.5, 0, 0)), Vec4(1, -1, 0, 0));
    auto out = lens_relation(g, v);
    CHECK(out.side == Side::Splus);
    CHECK((out.p.coords() - Vec4(0.5, -0.5, 0, 0)).norm() < 1e-9);
    Vec4 dir = out.w / out.w[0];
    CHECK((dir - Vec4(1, -1, 0, 0)).norm() < 1e-9);

    // generic seed against straight-line cone arithmetic
    Vec3 base = Vec3(0.3, -0.8, 0.5).normalized();
    Point p(-0.4, Vec3(0.6 * base));
    Vec3 nu = (-base + Vec3(0.3, 0.2, -0.1)).normalized();
    auto v2 = make_boundary_vector(g, p, Vec4(1, nu[0], nu[1], nu[2]));
    auto out2 = lens_relation(g, v2);
    Point expect = mink::plus_hit_point(p, v2.w);
    CHECK((out2.p.coords() - expect.coords()).norm() < 1e-8);
    CHECK((out2.w / out2.w[0] - v2.w / v2.w[0]).norm() < 1e-8);
}

TEST_CASE("flat lens relation inverts from the future sheet") {
    const MetricSpec& g = mink_spec();
    auto v = make_boundary_vector(g, Point(-0.5, Vec3(0.5, 0, 0)), Vec4(1, -1, 0, 0));
    auto image = lens_relation(g, v);
    auto back = lens_relation(g, image);
    CHECK(back.side == Side::Sminus);
    CHECK((back.p.coords() - v.p.coords()).norm() < 1e-9);
    CHECK((back.w / back.w[0] - v.w / v.w[0]).norm() < 1e-9);
}

TEST_CASE("curved lens images re-trace to the seed at higher resolution") {
    const MetricSpec& g = strong_bump();
    const Point ps(-0.55, 0.45 * Vec3(0.45, 0.1, -0.05).normalized());
    auto v = make_boundary_vector(g, ps, null_direction(g, ps, Vec3(-0.9, -0.1, 0.15).normalized()));

    auto image = lens_relation(g, v);
    CHECK(image.side == Side::Splus);

    IntegrateOptions tight;
    tight.abs_tol = 1e-13;
    tight.rel_tol = 1e-12;
    tight.max_step = 0.001;
    auto image_hi = lens_relation(g, v, tight);
    CHECK((image.p.coords() - image_hi.p.coords()).norm() < 1e-7);

    auto back = lens_relation(g, image, tight);
    CHECK(back.side == Side::Sminus);
    CHECK((back.p.coords() - ps.coords()).norm() < 1e-7);
}

TEST_CASE("restricted lens finds the sampled cone crossing") {
    const MetricSpec& g = mink_spec();
    auto mesh = cone_mesh_plus(0.3, 0.68, 2, 18);
    auto v = make_boundary_vector(g, Point(-0.5, Vec3(0.5, 0, 0)), Vec4(1, -1, 0, 0));

    auto c = restricted_lens(g, v, mesh);
    REQUIRE(c.has_value());
    // the trace (-0.5+s, 0.5-s, 0, 0) meets T+|X| = 0.4 at s = 0.7, and the
    // crossing direction (-1, 0, 0) is an exact mesh vertex
    CHECK((c->point.coords() - Vec4(0.2, -0.2, 0, 0)).norm() < 1e-9);
    CHECK(c->parameter == doctest::Approx(0.7).epsilon(1e-9));
    CHECK(c->surface_t == doctest::Approx(0.5).epsilon(1e-9));

    // the crossing satisfies the surface equation through the mesh's own
    // interpolation, not just the analytic cone
    Vec4 on_mesh = mesh.point(c->triangle, c->barycentric[1], c->barycentric[2], c->surface_t);
    CHECK((on_mesh - c->point.coords()).norm() < 1e-8);

    Vec4 dir = c->tangent / c->tangent[0];
    CHECK((dir - Vec4(1, -1, 0, 0)).norm() < 1e-9);
}

TEST_CASE("restricted lens returns nothing when the trace never reaches the surface level") {
    const MetricSpec& g = mink_spec();
    auto mesh = cone_mesh_plus(0.3, 0.68, 2, 18);
    // seed above the sweep: T + |X| = 0.8 > 0.4 at the base point, and the
    // level value only grows along forward traces
    auto v = make_boundary_vector(g, Point(-0.1, Vec3(0.9, 0, 0)), Vec4(1, -1, 0, 0));
    CHECK_FALSE(restricted_lens(g, v, mesh).has_value());
}

TEST_CASE("restricted lens rejects tangential contact") {
    const MetricSpec& g = mink_spec();
    auto mesh = cone_mesh_plus(0.3, 0.68, 2, 18);
    // this seed rides a straight generator of the swept cone itself
    auto v = make_boundary_vector(g, Point(-0.3, Vec3(0.7, 0, 0)), Vec4(1, -1, 0, 0));
    CHECK_THROWS_WITH_AS(restricted_lens(g, v, mesh), "tangential crossing", error);
}

TEST_CASE("restricted lens crossings over a fan match cone arithmetic") {
    const MetricSpec& g = mink_spec();
    auto mesh = cone_mesh_plus(0.3, 0.35, 2, 12);
    const Point p(-0.5, Vec3(0.5, 0, 0));
    const double level = 0.4, t_max = 0.35, edge_margin = 0.02;

    int hits = 0, empty = 0, skipped = 0;
    for (const Vec3& om : fibonacci_sphere(100)) {
        auto v = make_boundary_vector(g, p, Vec4(1, om[0], om[1], om[2]));

        // closed form: T + |X| is nondecreasing along the line, so bisection
        // between the seed and the exit brackets the unique level crossing
        auto h = [&](double s) { return (p.T + s) + (p.X + s * om).norm() - level; };
        double lo = 0, hi = 3;
        for (int i = 0; i < 80; ++i) {
            double mid = 0.5 * (lo + hi);
            if ((p.T + mid) + (p.X + mid * om).norm() < 1.0) lo = mid;
            else hi = mid;
        }
        double a = 0, b = hi;
        REQUIRE(h(a) < 0);
        for (int i = 0; i < 80; ++i) {
            double mid = 0.5 * (a + b);
            if (h(mid) < 0) a = mid;
            else b = mid;
        }
        double t_surf = (p.T + 0.5 * (a + b)) + 0.3;

        // crossings within the mesh chord error of a grid edge are ambiguous
        if (t_surf < edge_margin || std::abs(t_surf - t_max) < edge_margin) {
            ++skipped;
            continue;
        }
        bool expect = t_surf < t_max;
        auto c = restricted_lens(g, v, mesh);
        CHECK(c.has_value() == expect);
        if (c) {
            ++hits;
            Vec4 on_mesh =
                mesh.point(c->triangle, c->barycentric[1], c->barycentric[2], c->surface_t);
            CHECK((on_mesh - c->point.coords()).norm() < 1e-8);
        } else {
            ++empty;
        }
    }
    CHECK(hits == 74);
    CHECK(empty == 9);
    CHECK(skipped == 17);
}

TEST_CASE("properness requires distinct sources and a head off the images") {
    const MetricSpec& g = mink_spec();

    auto t = axis_tuple(mink::span_circle_point(0.0));
    CHECK(is_proper(g, t));

    RelationTuple dup = t;
    dup.v2 = dup.v1;
    CHECK_FALSE(is_proper(g, dup));

    // head based exactly at the lens image of the first source
    RelationTuple shadow = t;
    shadow.v0 = make_boundary_vector(g, Point(0.5, Vec3(0.5, 0, 0)), Vec4(1, 1, 0, 0));
    CHECK_FALSE(is_proper(g, shadow));
}

TEST_CASE("forward traces meet where straight lines concur") {
    const MetricSpec& g = mink_spec();
    Region all = whole_interior();
    auto s = axis_sources();

    auto hit = forward_intersection(g, s[0], s[1], all);
    REQUIRE(hit.has_value());
    CHECK(hit->point.coords().norm() < 1e-9);
    CHECK(hit->parameter_a == doctest::Approx(0.5).epsilon(1e-7));
    CHECK(hit->parameter_b == doctest::Approx(0.5).epsilon(1e-7));
    CHECK(hit->separation < 1e-9);

    // parallel displaced line: the straight-line gap stays far above zero
    auto vc = make_boundary_vector(g, Point(-0.6, Vec3(-0.4, 0.3, 0).normalized() * 0.4),
                                   Vec4(1, 1, 0, 0));
    CHECK(mink::line_gap(s[0].p, s[0].w, vc.p, vc.w).dist > 0.1);
    CHECK_FALSE(forward_intersection(g, s[0], vc, all).has_value());
}

TEST_CASE("forward intersection recovers a curved-space shooting point") {
    const MetricSpec& g = strong_bump();
    Region all = whole_interior();
    const Point q(-0.1, Vec3(0.12, -0.08, 0.05));

    auto va = shoot_to_boundary(g, q, Vec3(1, 0.3, 0.1).normalized(), TraceDirection::backward);
    auto vb = shoot_to_boundary(g, q, Vec3(-0.4, 1, -0.2).normalized(), TraceDirection::backward);
    CHECK(va.side == Side::Sminus);
    CHECK(vb.side == Side::Sminus);

    auto hit = forward_intersection(g, va, vb, all);
    REQUIRE(hit.has_value());
    CHECK((hit->point.coords() - q.coords()).norm() < 1e-7);
    CHECK(hit->separation < 1e-8);
}

TEST_CASE("forward intersection flags regions with a second meeting") {
    const MetricSpec& g = strong_bump();
    // mirror pair through an on-axis point ahead of the lens: equal optical
    // paths, so the rays meet again behind the focus
    const Point P1(-0.45, Vec3(0.5, 0, 0));
    auto va = shoot_to_boundary(g, P1, Vec3(-1, 0.10, 0).normalized(), TraceDirection::backward);
    auto vb = shoot_to_boundary(g, P1, Vec3(-1, -0.10, 0).normalized(), TraceDirection::backward);

    Region all = whole_interior();
    CHECK_THROWS_WITH_AS(forward_intersection(g, va, vb, all), "certificate violated", error);

    // restricting the region below the refocus keeps the meeting unique
    Region early{[](const Point& q) { return interior(q) && q.T < 0.2; }};
    auto hit = forward_intersection(g, va, vb, early);
    REQUIRE(hit.has_value());
    CHECK((hit->point.coords() - P1.coords()).norm() < 1e-6);
}

TEST_CASE("span membership recovers combination coefficients") {
    Vec4 w1(1, 1, 0, 0), w2(1, 0, 1, 0), w3(1, 0, 0, 1);

    Vec3 c0 = mink::span_circle_point(0.0);
    auto r = span_membership(Vec4(1, c0[0], c0[1], c0[2]), w1, w2, w3);
    CHECK(r.member);
    CHECK_FALSE(r.single_generator);
    CHECK(r.residual < 1e-9);
    CHECK((r.coefficients - Eigen::Vector3d(c0[0], c0[1], c0[2])).norm() < 1e-9);

    // null but outside the span: coefficients would need to sum to one
    double s3 = 1.0 / std::sqrt(3.0);
    auto r2 = span_membership(Vec4(1, s3, s3, s3), w1, w2, w3);
    CHECK_FALSE(r2.member);
    CHECK(r2.residual == doctest::Approx(0.258819).epsilon(1e-4));

    auto r3 = span_membership(w1, w1, w2, w3);
    CHECK(r3.member);
    CHECK(r3.single_generator);
    CHECK((r3.coefficients - Eigen::Vector3d(1, 0, 0)).norm() < 1e-9);

    CHECK_THROWS_WITH_AS(span_membership(w1, w1, w1, w3), "degenerate frame", error);
}

TEST_CASE("null span circle samples unit future combinations") {
    const MetricSpec& g = mink_spec();
    Point q(0, Vec3::Zero());
    auto dirs = null_span_circle(g, q, Vec4(1, 1, 0, 0), Vec4(1, 0, 1, 0), Vec4(1, 0, 0, 1), 24);
    REQUIRE(dirs.size() == 24);
    for (const Vec4& w : dirs) {
        CHECK(w[0] > 0);
        // direction ratios land on the null combination locus: unit spatial
        // part whose components sum to one
        Vec3 c(w[1] / w[0], w[2] / w[0], w[3] / w[0]);
        CHECK(std::abs(c.norm() - 1.0) < 1e-12);
        CHECK(std::abs(c.sum() - 1.0) < 1e-12);
    }
}

TEST_CASE("relation membership certifies a head through the common meeting") {
    const MetricSpec& g = mink_spec();
    Region all = whole_interior();
    VMinusSpec vm = open_scheme();

    Vec3 c0 = mink::span_circle_point(0.0);
    auto out = relation_membership(g, axis_tuple(c0), all, vm);
    CHECK(out.verdict);
    CHECK(out.reject_reason.empty());
    REQUIRE(out.witness.has_value());
    CHECK(out.witness->coords().norm() < 1e-8);
    CHECK((out.coefficients - Eigen::Vector3d(c0[0], c0[1], c0[2])).norm() < 1e-6);
}

TEST_CASE("relation membership reports the failing condition") {
    const MetricSpec& g = mink_spec();
    Region all = whole_interior();
    VMinusSpec vm = open_scheme();

    // head outside the span of the source tangents at the witness
    double s3 = 1.0 / std::sqrt(3.0);
    auto off = relation_membership(g, axis_tuple(Vec3(s3, s3, s3)), all, vm);
    CHECK_FALSE(off.verdict);
    CHECK(off.reject_reason == "head direction outside the source span");

    // sources that do not concur pairwise
    auto gap = axis_tuple(mink::span_circle_point(0.0));
    gap.v2 = make_boundary_vector(g, Point(-0.6, Vec3(-0.4, 0.3, 0).normalized() * 0.4),
                                  Vec4(1, 1, 0, 0));
    auto out = relation_membership(g, gap, all, vm);
    CHECK_FALSE(out.verdict);
    CHECK(out.reject_reason == "no pairwise meeting point");

    // duplicate sources fail the admissibility filter
    auto dup = axis_tuple(mink::span_circle_point(0.0));
    dup.v2 = dup.v1;
    auto out2 = relation_membership(g, dup, all, vm);
    CHECK_FALSE(out2.verdict);
    CHECK(out2.reject_reason == "source triple not admissible");

    // distinct sources, but the head sits on a source image
    auto shadow = axis_tuple(mink::span_circle_point(0.0));
    shadow.v0 = make_boundary_vector(g, Point(0.5, Vec3(0.5, 0, 0)), Vec4(1, 1, 0, 0));
    auto out3 = relation_membership(g, shadow, all, vm);
    CHECK_FALSE(out3.verdict);
    CHECK(out3.reject_reason == "tuple not proper");

    // head and sources on the wrong sheets
    auto swap = axis_tuple(mink::span_circle_point(0.0));
    std::swap(swap.v0, swap.v1);
    auto out4 = relation_membership(g, swap, all, vm);
    CHECK_FALSE(out4.verdict);
    CHECK(out4.reject_reason == "head not on the future sheet");
}

TEST_CASE("relation verdicts survive positive generator rescaling") {
    const MetricSpec& g = mink_spec();
    Region all = whole_interior();
    VMinusSpec vm = open_scheme();

    Vec3 c0 = mink::span_circle_point(0.0);
    auto base = relation_membership(g, axis_tuple(c0), all, vm);
    REQUIRE(base.verdict);

    const double lam[4] = {2.5, 0.5, 3.0, 1.25};
    RelationTuple scaled = axis_tuple(c0);
    scaled.v0 = make_boundary_vector(g, scaled.v0.p, Vec4(lam[0] * scaled.v0.w));
    scaled.v1 = make_boundary_vector(g, scaled.v1.p, Vec4(lam[1] * scaled.v1.w));
    scaled.v2 = make_boundary_vector(g, scaled.v2.p, Vec4(lam[2] * scaled.v2.w));
    scaled.v3 = make_boundary_vector(g, scaled.v3.p, Vec4(lam[3] * scaled.v3.w));

    auto out = relation_membership(g, scaled, all, vm);
    CHECK(out.verdict);
    REQUIRE(out.witness.has_value());
    CHECK((out.witness->coords() - base.witness->coords()).norm() < 1e-8);
    // coefficients follow the parameter rescaling of head and sources
    for (int j = 0; j < 3; ++j)
        CHECK(out.coefficients[j] ==
              doctest::Approx(base.coefficients[j] * lam[0] / lam[1 + j]).epsilon(1e-8));

    // a non-member stays a non-member under rescaling
    double s3 = 1.0 / std::sqrt(3.0);
    RelationTuple off = axis_tuple(Vec3(s3, s3, s3));
    off.v0 = make_boundary_vector(g, off.v0.p, Vec4(lam[0] * off.v0.w));
    auto out2 = relation_membership(g, off, all, vm);
    CHECK_FALSE(out2.verdict);
}

TEST_CASE("relation verdicts agree across conformal factors") {
    const MetricSpec& flat = mink_spec();
    MetricSpec conf = conformal_metric("0.2*sin(1.3*T + 0.8*x) - 0.1*y");
    Region all = whole_interior();
    VMinusSpec vm_flat = build_V_minus(flat, 1, PatchSpec{Side::Sminus, nullptr});
    VMinusSpec vm_conf = build_V_minus(conf, 1, PatchSpec{Side::Sminus, nullptr});

    std::mt19937 rng(11);
    std::uniform_real_distribution<double> U(-1, 1);
    int agree = 0, total = 0, truthy = 0;
    for (int rep = 0; rep < 100; ++rep) {
        Point q(0.1 * U(rng), Vec3(0.25 * U(rng), 0.25 * U(rng), 0.25 * U(rng)));
        Vec3 h1 = Vec3(1, 0.2 * U(rng), 0.2 * U(rng)).normalized();
        Vec3 h2 = Vec3(-0.3, 1, 0.2 * U(rng)).normalized();
        Vec3 h3 = Vec3(0.1 * U(rng), -0.4, 1).normalized();
        Vec3 off_head = Vec3(0.3 * U(rng), 0.3 * U(rng), 1).normalized();

        bool verdicts[2];
        for (int m = 0; m < 2; ++m) {
            const MetricSpec& sp = m == 0 ? flat : conf;
            RelationTuple t;
            t.v1 = shoot_to_boundary(sp, q, h1, TraceDirection::backward);
            t.v2 = shoot_to_boundary(sp, q, h2, TraceDirection::backward);
            t.v3 = shoot_to_boundary(sp, q, h3, TraceDirection::backward);
            Vec4 w0;
            if (rep % 2 == 0) {
                auto circ = null_span_circle(sp, q, null_direction(sp, q, h1),
                                             null_direction(sp, q, h2), null_direction(sp, q, h3), 8);
                w0 = circ[(rep / 2) % circ.size()];
            } else {
                w0 = null_direction(sp, q, off_head);
            }
            t.v0 = shoot_to_boundary(sp, q, w0, TraceDirection::forward);
            auto out = relation_membership(sp, t, all, m == 0 ? vm_flat : vm_conf);
            verdicts[m] = out.verdict;
        }
        ++total;
        if (verdicts[0] == verdicts[1]) ++agree;
        if (verdicts[0]) ++truthy;
    }
    CHECK(agree == total);
    // both outcomes are exercised: heads drawn on the span circle certify,
    // generic heads do not
    CHECK(truthy >= 25);
    CHECK(truthy <= total - 25);
}

TEST_CASE("witness location tracks direction perturbations linearly") {
    const MetricSpec& g = mink_spec();
    Region all = whole_interior();
    auto base = axis_sources();

    auto centroid = [&](const std::array<BoundaryLightVector, 3>& vs,
                        double eps) -> std::optional<Vec4> {
        IntersectionOptions io;
        io.eps_intersect = eps;
        Vec4 acc = Vec4::Zero();
        for (auto [i, j] : {std::pair{0, 1}, {0, 2}, {1, 2}}) {
            auto h = forward_intersection(g, vs[i], vs[j], all, io);
            if (!h) return std::nullopt;
            acc += h->point.coords();
        }
        return Vec4(acc / 3.0);
    };

    auto q0 = centroid(base, 1e-7);
    REQUIRE(q0.has_value());
    CHECK(q0->norm() < 1e-9);

    // perturbed rays no longer meet exactly; the meeting tolerance follows
    // the perturbation scale and the combined witness moves linearly with it
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> U(-1, 1);
    double ratios[3];
    int k = 0;
    for (double kap : {1e-3, 1e-4, 1e-5}) {
        double worst = 0;
        for (int rep = 0; rep < 5; ++rep) {
            std::array<BoundaryLightVector, 3> vs = base;
            for (auto& v : vs) {
                Vec3 u = spatial_part(v.w).normalized();
                Vec3 e1, e2;
                orthonormal_complement(u, e1, e2);
                Vec3 nu = (u + kap * (U(rng) * e1 + U(rng) * e2)).normalized();
                v = make_boundary_vector(g, v.p, null_direction(g, v.p, nu));
            }
            auto q = centroid(vs, 20 * kap);
            REQUIRE(q.has_value());
            worst = std::max(worst, (*q - *q0).norm());
        }
        CHECK(worst <= 1.0 * kap);
        CHECK(worst >= 0.01 * kap);
        ratios[k++] = worst / kap;
    }
    double rmax = std::max({ratios[0], ratios[1], ratios[2]});
    double rmin = std::min({ratios[0], ratios[1], ratios[2]});
    CHECK(rmax / rmin < 3.0);
}

TEST_CASE("witness survives a doubled integrator resolution") {
    const MetricSpec& g = mink_spec();
    Region all = whole_interior();
    VMinusSpec vm = open_scheme();
    Vec3 c0 = mink::span_circle_point(0.0);

    auto first = relation_membership(g, axis_tuple(c0), all, vm);
    REQUIRE(first.verdict);

    RelationOptions audit;
    audit.intersect.integrate.max_step = 0.005;
    audit.intersect.integrate.abs_tol = 1e-13;
    audit.intersect.integrate.rel_tol = 1e-11;
    auto second = relation_membership(g, axis_tuple(c0), all, vm, audit);
    CHECK(second.verdict);
    REQUIRE(second.witness.has_value());
    CHECK((second.witness->coords() - first.witness->coords()).norm() < 1e-9);
}

TEST_CASE("admissibility schemes filter source triples") {
    const MetricSpec& g = mink_spec();
    auto s = axis_sources();

    SUBCASE("open scheme accepts distinct patch members") {
        auto vm = build_V_minus(g, 1, PatchSpec{Side::Sminus, nullptr});
        CHECK(vm.member(s[0], s[1], s[2]));
        CHECK_FALSE(vm.member(s[0], s[0], s[2]));

        PatchSpec upper{Side::Sminus, [](const Point& p) { return p.X[2] > -0.1; }};
        auto vm_patch = build_V_minus(g, 3, upper);
        // the third source sits at X = (0, 0, -0.5), outside the patch
        CHECK_FALSE(vm_patch.member(s[0], s[1], s[2]));
        CHECK(vm_patch.member(s[0], s[1], past_radial_source(Vec3(0, 0, -1))));
    }

    SUBCASE("filtered scheme rejects meetings inside the forbidden region") {
        auto inner = cone_mesh_minus(0.2, 0.55, 2, 12);
        VMinusData data;
        data.lands_inner = [&](const BoundaryLightVector& v) {
            return restricted_lens(g, v, inner).has_value();
        };

        // the triple concurs at the origin; forbidding a ball there blocks it
        data.forbidden = [](const Point& p) { return p.coords().norm() < 0.1; };
        auto vm_blocked = build_V_minus(g, 2, PatchSpec{Side::Sminus, nullptr}, data);
        CHECK_FALSE(vm_blocked.member(s[0], s[1], s[2]));

        // moving the forbidden ball away admits the same triple: every
        // radial source crosses the inner sweep at T = -0.3
        data.forbidden = [](const Point& p) {
            return (p.coords() - Vec4(0.5, 0.3, 0, 0)).norm() < 0.1;
        };
        auto vm_clear = build_V_minus(g, 2, PatchSpec{Side::Sminus, nullptr}, data);
        CHECK(vm_clear.member(s[0], s[1], s[2]));

        // a source whose level crossing lies beyond the meshed band fails
        // the landing filter: it reaches T - |X| = -0.6 at radius 0.05,
        // inside the truncation hole
        auto miss = make_boundary_vector(g, Point(-0.75, Vec3(0.25, 0, 0)), Vec4(1, -1, 0, 0));
        CHECK_FALSE(vm_clear.member(s[0], s[1], miss));
    }

    SUBCASE("invalid configurations are rejected up front") {
        CHECK_THROWS_WITH_AS(build_V_minus(g, 5, PatchSpec{Side::Sminus, nullptr}),
                             "unknown scheme", error);
        CHECK_THROWS_WITH_AS(build_V_minus(g, 2, PatchSpec{Side::Sminus, nullptr}),
                             "filtered scheme requires forbidden-region and inner-boundary data",
                             error);
    }
}

TEST_CASE("relation records round trip through the dump format") {
    const MetricSpec& g = mink_spec();
    Region all = whole_interior();
    VMinusSpec vm = open_scheme();

    auto member = relation_membership(g, axis_tuple(mink::span_circle_point(0.0)), all, vm);
    double s3 = 1.0 / std::sqrt(3.0);
    auto reject = relation_membership(g, axis_tuple(Vec3(s3, s3, s3)), all, vm);

    std::stringstream buf;
    write_relation_dump(buf, {member, reject});
    auto back = read_relation_dump(buf);
    REQUIRE(back.size() == 2);

    auto same_blv = [](const BoundaryLightVector& a, const BoundaryLightVector& b) {
        return a.side == b.side && (a.p.coords() - b.p.coords()).norm() == 0.0 &&
               (a.w - b.w).norm() == 0.0;
    };
    CHECK(same_blv(back[0].v0, member.v0));
    CHECK(same_blv(back[0].v1, member.v1));
    CHECK(same_blv(back[0].v2, member.v2));
    CHECK(same_blv(back[0].v3, member.v3));
    CHECK(back[0].verdict == member.verdict);
    REQUIRE(back[0].witness.has_value());
    CHECK((back[0].witness->coords() - member.witness->coords()).norm() == 0.0);
    CHECK((back[0].coefficients - member.coefficients).norm() == 0.0);

    CHECK_FALSE(back[1].verdict);
    CHECK(back[1].reject_reason == reject.reject_reason);

    CHECK_THROWS_WITH_AS(parse_relation_record("{broken"), "bad relation record", error);
    CHECK_THROWS_WITH_AS(parse_relation_record("{\"v0\": 3}"), "bad relation record", error);
}
