#include "diamond/metric.hpp"

#include "diamond/expression.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace diamond {

namespace {

std::string point_str(const Point& p) {
    std::ostringstream os;
    os << "(T=" << p.T << ", X=(" << p.X[0] << "," << p.X[1] << "," << p.X[2] << "))";
    return os.str();
}

Point shifted(const Point& p, int axis, double h) {
    Point q = p;
    if (axis == 0)
        q.T += h;
    else
        q.X[axis - 1] += h;
    return q;
}

// Central difference of a matrix-valued function along one coordinate.
template <typename F>
auto central_diff(const F& f, const Point& p, int axis, double h, int order)
    -> decltype(f(p)) {
    if (order >= 4) {
        auto fp2 = f(shifted(p, axis, 2 * h));
        auto fp1 = f(shifted(p, axis, h));
        auto fm1 = f(shifted(p, axis, -h));
        auto fm2 = f(shifted(p, axis, -2 * h));
        return (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h);
    }
    auto fp1 = f(shifted(p, axis, h));
    auto fm1 = f(shifted(p, axis, -h));
    return (fp1 - fm1) / (2.0 * h);
}

struct TabulatedGrid {
    std::array<int64_t, 4> dims;
    std::array<double, 4> lo, hi;
    std::vector<double> data; // 7 values per node: beta, k11,k12,k13,k22,k23,k33

    size_t node(int64_t it, int64_t ix, int64_t iy, int64_t iz) const {
        return static_cast<size_t>((((it * dims[1] + ix) * dims[2] + iy) * dims[3] + iz) * 7);
    }

    // Multilinear interpolation; singleton axes are constant, queries are
    // clamped to the grid box.
    std::array<double, 7> sample(const Point& p) const {
        double c[4] = {p.T, p.X[0], p.X[1], p.X[2]};
        int64_t i0[4];
        double w[4];
        for (int a = 0; a < 4; ++a) {
            if (dims[a] == 1) {
                i0[a] = 0;
                w[a] = 0.0;
                continue;
            }
            double t = (c[a] - lo[a]) / (hi[a] - lo[a]) * static_cast<double>(dims[a] - 1);
            t = std::max(0.0, std::min(t, static_cast<double>(dims[a] - 1)));
            i0[a] = std::min(static_cast<int64_t>(t), dims[a] - 2);
            w[a] = t - static_cast<double>(i0[a]);
        }
        std::array<double, 7> out{};
        for (int corner = 0; corner < 16; ++corner) {
            double weight = 1.0;
            int64_t idx[4];
            for (int a = 0; a < 4; ++a) {
                int bit = (corner >> a) & 1;
                if (dims[a] == 1) {
                    if (bit) {
                        weight = 0.0;
                        break;
                    }
                    idx[a] = 0;
                    continue;
                }
                idx[a] = i0[a] + bit;
                weight *= bit ? w[a] : 1.0 - w[a];
            }
            if (weight == 0.0) continue;
            size_t base = node(idx[0], idx[1], idx[2], idx[3]);
            for (int k = 0; k < 7; ++k) out[k] += weight * data[base + k];
        }
        return out;
    }
};

constexpr char kGridMagic[8] = {'D', 'M', 'D', 'G', 'R', 'I', 'D', '1'};

} // namespace

MetricSpec minkowski_metric() {
    MetricSpec s;
    s.name = "minkowski";
    s.beta = [](const Point&) { return 1.0; };
    s.kappa = [](const Point&) { return Mat3::Identity(); };
    s.dbeta = [](const Point&) { return std::array<double, 4>{0, 0, 0, 0}; };
    s.dkappa = [](const Point&) {
        return std::array<Mat3, 4>{Mat3::Zero(), Mat3::Zero(), Mat3::Zero(), Mat3::Zero()};
    };
    return s;
}

MetricSpec conformal_metric(const std::string& gamma_expr) {
    Expression gamma = Expression::parse(gamma_expr);
    MetricSpec s;
    s.name = "conformal:" + gamma_expr;
    auto factor = [gamma](const Point& p) {
        return std::exp(2.0 * gamma.eval(p.T, p.X[0], p.X[1], p.X[2]));
    };
    s.beta = factor;
    s.kappa = [factor](const Point& p) { return Mat3(factor(p) * Mat3::Identity()); };
    return s;
}

MetricSpec bump_metric(double amplitude, double width) {
    if (width <= 0.0) throw error(errc::config, "bump metric width must be positive");
    MetricSpec s;
    {
        std::ostringstream os;
        os << "bump:" << amplitude << "," << width;
        s.name = os.str();
    }
    double w2 = width * width;
    s.beta = [](const Point&) { return 1.0; };
    s.kappa = [amplitude, w2](const Point& p) {
        double f = 1.0 + amplitude * std::exp(-p.X.squaredNorm() / w2);
        return Mat3(f * Mat3::Identity());
    };
    s.dbeta = [](const Point&) { return std::array<double, 4>{0, 0, 0, 0}; };
    s.dkappa = [amplitude, w2](const Point& p) {
        double e = amplitude * std::exp(-p.X.squaredNorm() / w2);
        std::array<Mat3, 4> d{Mat3::Zero(), Mat3::Zero(), Mat3::Zero(), Mat3::Zero()};
        for (int i = 0; i < 3; ++i) d[i + 1] = Mat3(e * (-2.0 * p.X[i] / w2) * Mat3::Identity());
        return d;
    };
    return s;
}

MetricSpec tabulated_metric(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw error(errc::config, "cannot open tabulated metric file: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kGridMagic, 8) != 0)
        throw error(errc::config, "bad tabulated metric header in " + path);
    auto grid = std::make_shared<TabulatedGrid>();
    in.read(reinterpret_cast<char*>(grid->dims.data()), 4 * sizeof(int64_t));
    in.read(reinterpret_cast<char*>(grid->lo.data()), 4 * sizeof(double));
    in.read(reinterpret_cast<char*>(grid->hi.data()), 4 * sizeof(double));
    if (!in) throw error(errc::config, "truncated tabulated metric header in " + path);
    int64_t count = 1;
    for (int a = 0; a < 4; ++a) {
        if (grid->dims[a] < 1) throw error(errc::config, "bad grid dims in " + path);
        count *= grid->dims[a];
    }
    grid->data.resize(static_cast<size_t>(count) * 7);
    in.read(reinterpret_cast<char*>(grid->data.data()),
            static_cast<std::streamsize>(grid->data.size() * sizeof(double)));
    if (!in) throw error(errc::config, "truncated tabulated metric data in " + path);

    MetricSpec s;
    s.name = "tabulated:" + path;
    s.beta = [grid](const Point& p) { return grid->sample(p)[0]; };
    s.kappa = [grid](const Point& p) {
        auto v = grid->sample(p);
        Mat3 k;
        k << v[1], v[2], v[3], v[2], v[4], v[5], v[3], v[5], v[6];
        return k;
    };
    return s;
}

void write_tabulated_grid(const std::string& path, const MetricSpec& spec,
                          const std::array<int, 4>& dims, const std::array<double, 4>& lo,
                          const std::array<double, 4>& hi) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw error(errc::config, "cannot write tabulated metric file: " + path);
    out.write(kGridMagic, 8);
    std::array<int64_t, 4> d64;
    for (int a = 0; a < 4; ++a) d64[a] = dims[a];
    out.write(reinterpret_cast<const char*>(d64.data()), 4 * sizeof(int64_t));
    out.write(reinterpret_cast<const char*>(lo.data()), 4 * sizeof(double));
    out.write(reinterpret_cast<const char*>(hi.data()), 4 * sizeof(double));
    auto coord = [&](int a, int i) {
        return dims[a] == 1 ? lo[a]
                            : lo[a] + (hi[a] - lo[a]) * static_cast<double>(i) /
                                          static_cast<double>(dims[a] - 1);
    };
    for (int it = 0; it < dims[0]; ++it)
        for (int ix = 0; ix < dims[1]; ++ix)
            for (int iy = 0; iy < dims[2]; ++iy)
                for (int iz = 0; iz < dims[3]; ++iz) {
                    Point p(coord(0, it), coord(1, ix), coord(2, iy), coord(3, iz));
                    double b = spec.beta(p);
                    Mat3 k = spec.kappa(p);
                    double rec[7] = {b,       k(0, 0), k(0, 1), k(0, 2),
                                     k(1, 1), k(1, 2), k(2, 2)};
                    out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
                }
}

MetricSpec metric_from_string(const std::string& config) {
    if (config == "minkowski") return minkowski_metric();
    auto colon = config.find(':');
    std::string head = config.substr(0, colon);
    std::string rest = colon == std::string::npos ? "" : config.substr(colon + 1);
    if (head == "conformal") {
        if (rest.empty()) throw error(errc::config, "conformal metric needs an expression");
        return conformal_metric(rest);
    }
    if (head == "bump") {
        double amplitude = 0.1, width = 1.0;
        if (!rest.empty()) {
            std::istringstream is(rest);
            char comma;
            if (!(is >> amplitude)) throw error(errc::config, "bad bump amplitude: " + config);
            if (is >> comma) {
                if (comma != ',' || !(is >> width))
                    throw error(errc::config, "bad bump width: " + config);
            }
        }
        return bump_metric(amplitude, width);
    }
    if (head == "tabulated") {
        if (rest.empty()) throw error(errc::config, "tabulated metric needs a file path");
        return tabulated_metric(rest);
    }
    throw error(errc::config, "unknown metric spec: " + config);
}

Mat4 metric_matrix(const MetricSpec& spec, const Point& p) {
    double b = spec.beta(p);
    Mat3 k = spec.kappa(p);
    if (!(b > 0.0)) throw error(errc::numeric, "metric signature violation at " + point_str(p));
    Eigen::LLT<Mat3> llt(k);
    if (llt.info() != Eigen::Success)
        throw error(errc::numeric, "metric signature violation at " + point_str(p));
    Mat4 g = Mat4::Zero();
    g(0, 0) = -b;
    g.block<3, 3>(1, 1) = 0.5 * (k + k.transpose());
    return g;
}

Mat4 metric_inverse(const MetricSpec& spec, const Point& p) {
    double b = spec.beta(p);
    Mat3 k = spec.kappa(p);
    if (!(b > 0.0)) throw error(errc::numeric, "metric signature violation at " + point_str(p));
    Eigen::LLT<Mat3> llt(Mat3(0.5 * (k + k.transpose())));
    if (llt.info() != Eigen::Success)
        throw error(errc::numeric, "metric signature violation at " + point_str(p));
    Mat4 gi = Mat4::Zero();
    gi(0, 0) = -1.0 / b;
    gi.block<3, 3>(1, 1) = llt.solve(Mat3::Identity());
    return gi;
}

std::array<Mat4, 4> metric_derivatives(const MetricSpec& spec, const Point& p) {
    std::array<Mat4, 4> dg;
    if (spec.analytic()) {
        auto db = spec.dbeta(p);
        auto dk = spec.dkappa(p);
        for (int a = 0; a < 4; ++a) {
            dg[a] = Mat4::Zero();
            dg[a](0, 0) = -db[a];
            dg[a].block<3, 3>(1, 1) = 0.5 * (dk[a] + dk[a].transpose());
        }
        return dg;
    }
    auto f = [&spec](const Point& q) { return metric_matrix(spec, q); };
    for (int a = 0; a < 4; ++a) dg[a] = central_diff(f, p, a, spec.fd_step, spec.fd_order);
    return dg;
}

std::array<Mat4, 4> metric_inverse_derivatives(const MetricSpec& spec, const Point& p) {
    Mat4 gi = metric_inverse(spec, p);
    auto dg = metric_derivatives(spec, p);
    std::array<Mat4, 4> dgi;
    for (int a = 0; a < 4; ++a) dgi[a] = -gi * dg[a] * gi;
    return dgi;
}

Mat4 inverse_hessian_contraction(const MetricSpec& spec, const Point& p, const Vec4& zeta) {
    auto grad = [&spec, &zeta](const Point& q) {
        auto dgi = metric_inverse_derivatives(spec, q);
        Vec4 g;
        for (int a = 0; a < 4; ++a) g[a] = zeta.dot(dgi[a] * zeta);
        return g;
    };
    Mat4 hess;
    for (int b = 0; b < 4; ++b)
        hess.col(b) = central_diff(grad, p, b, spec.fd_step, 2);
    return 0.5 * (hess + hess.transpose());
}

MetricEval evaluate_metric(const MetricSpec& spec, const Point& p) {
    MetricEval ev;
    ev.g = metric_matrix(spec, p);
    ev.g_inv = metric_inverse(spec, p);
    auto dg = metric_derivatives(spec, p);
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
            for (int c = b; c < 4; ++c) {
                double sum = 0.0;
                for (int d = 0; d < 4; ++d)
                    sum += ev.g_inv(a, d) * (dg[b](d, c) + dg[c](d, b) - dg[d](b, c));
                ev.christoffel[a][b][c] = 0.5 * sum;
                ev.christoffel[a][c][b] = 0.5 * sum;
            }
    return ev;
}

CausalClass causal_classify(const MetricSpec& spec, const Point& p, const Vec4& v,
                            double eps_null) {
    if (v.norm() == 0.0) throw error(errc::numeric, "degenerate vector");
    double q = g_dot(spec, p, v, v);
    double scale = gplus_norm2(spec, p, v);
    CausalClass c{};
    if (std::abs(q) <= eps_null * scale)
        c.type = CausalType::null;
    else
        c.type = q < 0.0 ? CausalType::timelike : CausalType::spacelike;
    if (c.type == CausalType::spacelike)
        c.orientation = TimeOrientation::neither;
    else if (v[0] > 0.0)
        c.orientation = TimeOrientation::future;
    else if (v[0] < 0.0)
        c.orientation = TimeOrientation::past;
    else
        c.orientation = TimeOrientation::neither;
    return c;
}

Vec4 flat(const MetricSpec& spec, const Point& p, const Vec4& v) {
    return metric_matrix(spec, p) * v;
}

Vec4 sharp(const MetricSpec& spec, const Point& p, const Vec4& zeta) {
    return metric_inverse(spec, p) * zeta;
}

double g_dot(const MetricSpec& spec, const Point& p, const Vec4& v, const Vec4& w) {
    return v.dot(metric_matrix(spec, p) * w);
}

double gplus_norm2(const MetricSpec& spec, const Point& p, const Vec4& v) {
    Vec3 V = spatial_part(v);
    return spec.beta(p) * v[0] * v[0] + V.dot(spec.kappa(p) * V);
}

double gplus_conorm2(const MetricSpec& spec, const Point& p, const Vec4& zeta) {
    Vec3 Z = spatial_part(zeta);
    Mat3 kinv = spec.kappa(p).inverse();
    return zeta[0] * zeta[0] / spec.beta(p) + Z.dot(kinv * Z);
}

double gplus_distance(const MetricSpec& spec, const Point& a, const Point& b) {
    Point mid(0.5 * (a.T + b.T), 0.5 * (a.X + b.X));
    Vec4 d = b.coords() - a.coords();
    return std::sqrt(gplus_norm2(spec, mid, d));
}

Vec4 null_direction(const MetricSpec& spec, const Point& p, const Vec3& u, bool future) {
    Vec3 un = u.normalized();
    double b = spec.beta(p);
    double c = std::sqrt(b / un.dot(spec.kappa(p) * un));
    Vec4 v = spatial_embed(1.0, c * un) / std::sqrt(2.0 * b);
    return future ? v : Vec4(-v);
}

Vec4 gplus_normalize(const MetricSpec& spec, const Point& p, const Vec4& v) {
    return v / std::sqrt(gplus_norm2(spec, p, v));
}

} // namespace diamond
