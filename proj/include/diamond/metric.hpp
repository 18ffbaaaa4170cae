#pragma once

#include "diamond/geometry.hpp"

#include <array>
#include <functional>
#include <string>

namespace diamond {

// Lorentzian metric g = -beta dT^2 + kappa on the diamond chart, with the
// reference Riemannian metric gplus = beta dT^2 + kappa used for all norms.
struct MetricSpec {
    std::function<double(const Point&)> beta;
    std::function<Mat3(const Point&)> kappa;

    // Optional analytic first derivatives, indexed by coordinate a = 0..3
    // (T, x, y, z).  When absent, central finite differences of order
    // fd_order with step fd_step are used.
    std::function<std::array<double, 4>(const Point&)> dbeta;
    std::function<std::array<Mat3, 4>(const Point&)> dkappa;

    int fd_order = 4; // 2 or 4
    double fd_step = 1e-5;
    std::string name = "custom";

    bool analytic() const { return static_cast<bool>(dbeta) && static_cast<bool>(dkappa); }
};

struct MetricEval {
    Mat4 g;
    Mat4 g_inv;
    // christoffel[a][b][c] = Gamma^a_{bc}
    std::array<std::array<std::array<double, 4>, 4>, 4> christoffel;
};

MetricSpec minkowski_metric();
MetricSpec conformal_metric(const std::string& gamma_expr);
MetricSpec bump_metric(double amplitude, double width);
MetricSpec tabulated_metric(const std::string& path);

// Dispatch on "minkowski", "conformal:<expr>", "bump:<amplitude>,<width>",
// "tabulated:<path>".
MetricSpec metric_from_string(const std::string& config);

// Writes the binary grid format read by tabulated_metric (row-major over a
// regular T,x,y,z grid; per node: beta, kappa upper triangle).
void write_tabulated_grid(const std::string& path, const MetricSpec& spec,
                          const std::array<int, 4>& dims, const std::array<double, 4>& lo,
                          const std::array<double, 4>& hi);

// Metric matrix at p; throws "metric signature violation" if beta <= 0 or
// kappa is not positive definite.
Mat4 metric_matrix(const MetricSpec& spec, const Point& p);
Mat4 metric_inverse(const MetricSpec& spec, const Point& p);

std::array<Mat4, 4> metric_derivatives(const MetricSpec& spec, const Point& p);
std::array<Mat4, 4> metric_inverse_derivatives(const MetricSpec& spec, const Point& p);

// hess(a,b) = zeta^T (d_a d_b g^{-1}) zeta, by differencing the analytic or
// first-difference gradient of g^{-1}.
Mat4 inverse_hessian_contraction(const MetricSpec& spec, const Point& p, const Vec4& zeta);

MetricEval evaluate_metric(const MetricSpec& spec, const Point& p);

CausalClass causal_classify(const MetricSpec& spec, const Point& p, const Vec4& v,
                            double eps_null = 1e-10);

Vec4 flat(const MetricSpec& spec, const Point& p, const Vec4& v);
Vec4 sharp(const MetricSpec& spec, const Point& p, const Vec4& zeta);

double g_dot(const MetricSpec& spec, const Point& p, const Vec4& v, const Vec4& w);
double gplus_norm2(const MetricSpec& spec, const Point& p, const Vec4& v);
double gplus_conorm2(const MetricSpec& spec, const Point& p, const Vec4& zeta);

// Riemannian reference distance between nearby events (midpoint evaluation).
double gplus_distance(const MetricSpec& spec, const Point& a, const Point& b);

// Future null vector at p with spatial direction u (unit), normalized to
// gplus-norm 1.  past = time reflection.
Vec4 null_direction(const MetricSpec& spec, const Point& p, const Vec3& u, bool future = true);

// Rescale v to gplus-unit norm.
Vec4 gplus_normalize(const MetricSpec& spec, const Point& p, const Vec4& v);

} // namespace diamond
