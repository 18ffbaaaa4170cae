#include "diamond/reconstruction.hpp"

#include "diamond/geodesic.hpp"
#include "diamond/metric.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

namespace diamond {

namespace {

using Vec8 = Eigen::Matrix<double, 8, 1>;

Vec8 raw_embed(const BoundaryLightVector& v) {
    Vec8 e;
    e.head<4>() = v.p.coords();
    e.tail<4>() = v.w;
    return e;
}

Vec8 quotient_embed(const BoundaryLightVector& v) {
    Vec8 e;
    e.head<4>() = v.p.coords();
    const double n = v.w.norm();
    e.tail<4>() = n > 0.0 ? Vec4(v.w / n) : Vec4(v.w);
    return e;
}

// Indices of the k nearest members to `query` under the quotient embedding,
// excluding entries listed in `skip`.
std::vector<int> k_nearest(const std::vector<Vec8>& cloud, const Vec8& query, int k,
                           int skip = -1) {
    std::vector<std::pair<double, int>> d;
    d.reserve(cloud.size());
    for (int i = 0; i < static_cast<int>(cloud.size()); ++i) {
        if (i == skip) continue;
        d.emplace_back((cloud[i] - query).squaredNorm(), i);
    }
    const int take = std::min<int>(k, static_cast<int>(d.size()));
    std::partial_sort(d.begin(), d.begin() + take, d.end());
    std::vector<int> out(take);
    for (int i = 0; i < take; ++i) out[i] = d[i].second;
    return out;
}

// Singular values of the centred raw embedding of a neighbourhood.
Eigen::VectorXd neighbourhood_singulars(const std::vector<BoundaryLightVector>& members,
                                        const std::vector<int>& idxs) {
    Eigen::MatrixXd a(idxs.size(), 8);
    for (int r = 0; r < static_cast<int>(idxs.size()); ++r)
        a.row(r) = raw_embed(members[idxs[r]]).transpose();
    a.rowwise() -= a.colwise().mean();
    return a.jacobiSvd().singularValues();
}

bool three_dominant(const Eigen::VectorXd& s, double gap, double floor_ratio) {
    if (s.size() < 4) return false;
    if (s(0) <= 0.0) return false;
    if (s(2) < floor_ratio * s(0)) return false;
    return s(3) <= gap * s(2);
}

// Distinct base points with first-seen member index.
struct BaseCloud {
    std::vector<Point> points;
    std::vector<int> representative;    // member index of the first arrival
    std::vector<int> base_of;           // per member
};

BaseCloud collapse_bases(const DirectionSet& c, double tol = 1e-9) {
    BaseCloud out;
    out.base_of.resize(c.members.size(), -1);
    for (int i = 0; i < c.size(); ++i) {
        const Vec4 pc = c.members[i].p.coords();
        int hit = -1;
        for (int b = 0; b < static_cast<int>(out.points.size()); ++b) {
            if ((out.points[b].coords() - pc).norm() < tol) {
                hit = b;
                break;
            }
        }
        if (hit < 0) {
            hit = static_cast<int>(out.points.size());
            out.points.push_back(c.members[i].p);
            out.representative.push_back(i);
        }
        out.base_of[i] = hit;
    }
    return out;
}

// Quadratic patch fitted around x from the k nearest bases within radius;
// empty when the neighbourhood is too thin.
std::optional<MongePatch> patch_near(const std::vector<Point>& bases, const Vec3& x, int k,
                                     double radius) {
    std::vector<std::pair<double, int>> d;
    for (int i = 0; i < static_cast<int>(bases.size()); ++i) {
        const double dist = (bases[i].X - x).norm();
        if (dist <= radius) d.emplace_back(dist, i);
    }
    if (static_cast<int>(d.size()) < 6) return std::nullopt;
    const int take = std::min<int>(k + 1, static_cast<int>(d.size()));
    std::partial_sort(d.begin(), d.begin() + take, d.end());
    std::vector<Vec3> pts(take);
    for (int i = 0; i < take; ++i) pts[i] = bases[d[i].second].X;
    return fit_monge_patch(pts, x);
}

Vec3 patch_normal_at(const MongePatch& patch, const Vec3& x) {
    const Vec3 rel = x - patch.origin;
    return patch.graph_normal(rel.dot(patch.e1), rel.dot(patch.e2));
}

double plane_angle(const Vec3& na, const Vec3& nb) {
    const double s = na.cross(nb).norm();
    return std::asin(std::clamp(s, 0.0, 1.0));
}

Vec3 generator_of(const Point& p) {
    const double r = p.X.norm();
    return r > 0.0 ? Vec3(p.X / r) : Vec3::Zero();
}

// Arrival-time gaps along shared generators: gap = T_b - T_a per matched
// base pair near p. Matching is by chord distance of the generators.
struct OrderTally {
    int earlier = 0;   // gaps above +delta
    int later = 0;     // gaps below -delta
    int matched = 0;
};

OrderTally generator_order(const std::vector<Point>& bases_a, const std::vector<Point>& bases_b,
                           const Vec3& x, double radius, double generator_tol, double delta) {
    OrderTally tally;
    for (const Point& pa : bases_a) {
        if ((pa.X - x).norm() > radius) continue;
        const Vec3 ga = generator_of(pa);
        double best = generator_tol;
        const Point* match = nullptr;
        for (const Point& pb : bases_b) {
            if ((pb.X - x).norm() > radius) continue;
            const double chord = (generator_of(pb) - ga).norm();
            if (chord <= best) {
                best = chord;
                match = &pb;
            }
        }
        if (!match) continue;
        ++tally.matched;
        const double gap = match->T - pa.T;
        if (gap > delta)
            ++tally.earlier;
        else if (gap < -delta)
            ++tally.later;
    }
    return tally;
}

std::uint64_t pack_pair(int a, int b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

constexpr int kTripleBits = 21;

std::uint64_t pack_triple(int a, int b, int c) {
    std::array<int, 3> s{a, b, c};
    std::sort(s.begin(), s.end());
    return (static_cast<std::uint64_t>(s[0]) << (2 * kTripleBits)) |
           (static_cast<std::uint64_t>(s[1]) << kTripleBits) | static_cast<std::uint64_t>(s[2]);
}

std::size_t hash_ints(const std::int64_t* data, int n) {
    std::size_t h = 1469598103934665603ull;
    for (int i = 0; i < n; ++i) {
        h ^= static_cast<std::size_t>(data[i]);
        h *= 1099511628211ull;
    }
    return h;
}

// Reject reasons produced before the admissibility check; records carrying
// them say nothing about the source triple.
bool pre_admissibility_reason(const std::string& r) {
    return r == "not a boundary light vector" || r == "head not on the future sheet" ||
           r == "sources not on the past sheet";
}

}  // namespace

double member_distance(const BoundaryLightVector& a, const BoundaryLightVector& b) {
    return (quotient_embed(a) - quotient_embed(b)).norm();
}

double raw_distance(const BoundaryLightVector& a, const BoundaryLightVector& b) {
    return (raw_embed(a) - raw_embed(b)).norm();
}

DirectionSet make_direction_set(std::vector<BoundaryLightVector> members, const SetOptions& opts) {
    DirectionSet out;
    for (const auto& v : members) {
        bool dup = false;
        for (const auto& kept : out.members) {
            if (raw_distance(v, kept) < opts.delta_distinct) {
                dup = true;
                break;
            }
        }
        if (!dup) out.members.push_back(v);
    }

    const int n = out.size();
    std::vector<Vec8> cloud(n);
    for (int i = 0; i < n; ++i) cloud[i] = quotient_embed(out.members[i]);
    out.adjacency.resize(n);
    for (int i = 0; i < n; ++i) out.adjacency[i] = k_nearest(cloud, cloud[i], opts.k, i);

    const BaseCloud bases = collapse_bases(out);
    std::vector<double> nn;
    for (std::size_t i = 0; i < bases.points.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < bases.points.size(); ++j) {
            if (i == j) continue;
            best = std::min(best, (bases.points[i].coords() - bases.points[j].coords()).norm());
        }
        if (std::isfinite(best)) nn.push_back(best);
    }
    if (!nn.empty()) {
        auto mid = nn.begin() + nn.size() / 2;
        std::nth_element(nn.begin(), mid, nn.end());
        out.grid_scale = *mid;
    }
    return out;
}

ObservationSet project(const DirectionSet& c) {
    ObservationSet out;
    const BaseCloud bases = collapse_bases(c);
    out.points = bases.points;
    return out;
}

double set_hausdorff(const DirectionSet& a, const DirectionSet& b, double early_stop) {
    if (a.empty() || b.empty()) return std::numeric_limits<double>::infinity();
    std::vector<Vec8> ea(a.size()), eb(b.size());
    for (int i = 0; i < a.size(); ++i) ea[i] = quotient_embed(a.members[i]);
    for (int i = 0; i < b.size(); ++i) eb[i] = quotient_embed(b.members[i]);

    auto directed = [&](const std::vector<Vec8>& from, const std::vector<Vec8>& to) {
        double worst = 0.0;
        for (const auto& f : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& t : to) best = std::min(best, (f - t).squaredNorm());
            worst = std::max(worst, best);
            if (std::sqrt(worst) > early_stop) return std::numeric_limits<double>::infinity();
        }
        return std::sqrt(worst);
    };
    return std::max(directed(ea, eb), directed(eb, ea));
}

bool within_set(const BoundaryLightVector& v, const DirectionSet& c, double eps) {
    for (const auto& m : c.members)
        if (member_distance(v, m) <= eps) return true;
    return false;
}

double MongePatch::height(double u, double v) const {
    return coeff[0] + coeff[1] * u + coeff[2] * v + coeff[3] * u * u + coeff[4] * u * v +
           coeff[5] * v * v;
}

Vec3 MongePatch::graph_normal(double u, double v) const {
    const double hu = coeff[1] + 2.0 * coeff[3] * u + coeff[4] * v;
    const double hv = coeff[2] + coeff[4] * u + 2.0 * coeff[5] * v;
    const Vec3 t1 = e1 + hu * n;
    const Vec3 t2 = e2 + hv * n;
    return t1.cross(t2).normalized();
}

double MongePatch::signed_offset(const Vec3& x) const {
    const Vec3 rel = x - origin;
    const double u = rel.dot(e1);
    const double v = rel.dot(e2);
    return rel.dot(n) - height(u, v);
}

MongePatch fit_monge_patch(const std::vector<Vec3>& pts, const Vec3& at) {
    if (pts.size() < 6) throw error(errc::config, "too few points for a surface patch");
    MongePatch patch;
    patch.origin = at;

    Vec3 c = Vec3::Zero();
    for (const auto& p : pts) c += p;
    c /= static_cast<double>(pts.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& p : pts) cov += (p - c) * (p - c).transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    patch.n = eig.eigenvectors().col(0);
    patch.e1 = eig.eigenvectors().col(2);
    // deterministic orientation: largest normal component positive
    int lead = 0;
    for (int i = 1; i < 3; ++i)
        if (std::abs(patch.n[i]) > std::abs(patch.n[lead])) lead = i;
    if (patch.n[lead] < 0.0) patch.n = -patch.n;
    patch.e2 = patch.n.cross(patch.e1).normalized();
    patch.e1 = patch.e2.cross(patch.n).normalized();

    Eigen::MatrixXd a(pts.size(), 6);
    Eigen::VectorXd h(pts.size());
    for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
        const Vec3 rel = pts[i] - at;
        const double u = rel.dot(patch.e1);
        const double v = rel.dot(patch.e2);
        a.row(i) << 1.0, u, v, u * u, u * v, v * v;
        h(i) = rel.dot(patch.n);
    }
    Eigen::VectorXd sol = a.colPivHouseholderQr().solve(h);
    for (int i = 0; i < 6; ++i) patch.coeff[i] = sol(i);
    patch.rms = std::sqrt((a * sol - h).squaredNorm() / static_cast<double>(pts.size()));
    patch.points = static_cast<int>(pts.size());
    return patch;
}

// ---------------------------------------------------------------------------
// DumpSource

std::size_t DumpSource::KeyHash::operator()(const Key& k) const {
    return hash_ints(k.data(), 9);
}

std::size_t DumpSource::TupleKeyHash::operator()(const std::array<std::int64_t, 36>& k) const {
    return hash_ints(k.data(), 36);
}

DumpSource::Key DumpSource::key_of(const BoundaryLightVector& v) const {
    Key k{};
    const Vec4 pc = v.p.coords();
    for (int i = 0; i < 4; ++i) k[i] = std::llround(pc[i] * key_scale_);
    for (int i = 0; i < 4; ++i) k[4 + i] = std::llround(v.w[i] * key_scale_);
    k[8] = v.side == Side::Splus ? 1 : 0;
    return k;
}

DumpSource::DumpSource(std::vector<RelationTuple> records, std::optional<VMinusSpec> fallback,
                       double key_scale)
    : records_(std::move(records)), fallback_(std::move(fallback)), key_scale_(key_scale) {
    // Blind loading: the private evaluation fields never survive construction.
    for (auto& r : records_) {
        r.witness.reset();
        r.coefficients.setZero();
    }

    std::vector<char> head_member, source_member;
    auto intern = [](const BoundaryLightVector& v, const Key& k,
                     std::vector<BoundaryLightVector>& tab,
                     std::unordered_map<Key, int, KeyHash>& ids, std::vector<char>& flags) {
        auto it = ids.find(k);
        if (it != ids.end()) return it->second;
        const int id = static_cast<int>(tab.size());
        tab.push_back(v);
        flags.push_back(0);
        ids.emplace(k, id);
        return id;
    };

    for (const auto& r : records_) {
        const int h = intern(r.v0, key_of(r.v0), heads_, head_ids_, head_member);
        const int s1 = intern(r.v1, key_of(r.v1), sources_, source_ids_, source_member);
        const int s2 = intern(r.v2, key_of(r.v2), sources_, source_ids_, source_member);
        const int s3 = intern(r.v3, key_of(r.v3), sources_, source_ids_, source_member);
        if (static_cast<std::size_t>(std::max({s1, s2, s3})) >= (1ull << kTripleBits))
            throw error(errc::config, "relation dump too large");
        head_sources_.resize(heads_.size());
        source_heads_.resize(sources_.size());

        std::array<Key, 3> sk{key_of(r.v1), key_of(r.v2), key_of(r.v3)};
        std::sort(sk.begin(), sk.end());
        std::array<std::int64_t, 36> tk{};
        const Key hk = key_of(r.v0);
        std::copy(hk.begin(), hk.end(), tk.begin());
        for (int i = 0; i < 3; ++i) std::copy(sk[i].begin(), sk[i].end(), tk.begin() + 9 * (i + 1));
        auto [it, fresh] = tuples_.emplace(tk, r.verdict);
        if (!fresh) it->second = it->second || r.verdict;

        if (r.verdict || !pre_admissibility_reason(r.reject_reason)) {
            const char state = r.reject_reason == "source triple not admissible" ? 0 : 1;
            auto [ts, fresh_t] = triple_state_.emplace(pack_triple(s1, s2, s3), state);
            if (!fresh_t) ts->second = std::max(ts->second, state);
        }

        if (r.verdict) {
            ++member_count_;
            head_member[h] = 1;
            source_member[s1] = source_member[s2] = source_member[s3] = 1;
            for (int s : {s1, s2, s3}) {
                head_sources_[h].push_back(s);
                source_heads_[s].push_back(h);
            }
            for (auto [a, b] : {std::pair{s1, s2}, std::pair{s1, s3}, std::pair{s2, s3}}) {
                const std::uint64_t pk = pack_pair(a, b);
                auto [it2, fresh2] = pair_heads_.emplace(pk, std::vector<int>{});
                if (fresh2) pair_list_.emplace_back(std::min(a, b), std::max(a, b));
                it2->second.push_back(h);
            }
        }
    }

    auto dedup = [](std::vector<int>& v) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    for (auto& v : head_sources_) dedup(v);
    for (auto& v : source_heads_) dedup(v);
    for (auto& [k, v] : pair_heads_) dedup(v);

    // keep only member-participating samples visible
    head_member_ = std::move(head_member);
    source_member_ = std::move(source_member);
}

int DumpSource::head_index(const BoundaryLightVector& v) const {
    auto it = head_ids_.find(key_of(v));
    return it == head_ids_.end() ? -1 : it->second;
}

int DumpSource::source_index(const BoundaryLightVector& v) const {
    auto it = source_ids_.find(key_of(v));
    return it == source_ids_.end() ? -1 : it->second;
}

bool DumpSource::member(const BoundaryLightVector& v0, const BoundaryLightVector& v1,
                        const BoundaryLightVector& v2, const BoundaryLightVector& v3) const {
    std::array<Key, 3> sk{key_of(v1), key_of(v2), key_of(v3)};
    std::sort(sk.begin(), sk.end());
    std::array<std::int64_t, 36> tk{};
    const Key hk = key_of(v0);
    std::copy(hk.begin(), hk.end(), tk.begin());
    for (int i = 0; i < 3; ++i) std::copy(sk[i].begin(), sk[i].end(), tk.begin() + 9 * (i + 1));
    auto it = tuples_.find(tk);
    return it != tuples_.end() && it->second;
}

bool DumpSource::admissible(const BoundaryLightVector& v1, const BoundaryLightVector& v2,
                            const BoundaryLightVector& v3) const {
    const int a = source_index(v1);
    const int b = source_index(v2);
    const int c = source_index(v3);
    if (a >= 0 && b >= 0 && c >= 0) {
        auto it = triple_state_.find(pack_triple(a, b, c));
        if (it != triple_state_.end()) return it->second != 0;
    }
    if (fallback_) return fallback_->member(v1, v2, v3);
    return false;
}

bool DumpSource::completes_pair(const BoundaryLightVector& v0, const BoundaryLightVector& v1,
                                const BoundaryLightVector& v2) const {
    const int h = head_index(v0);
    const int a = source_index(v1);
    const int b = source_index(v2);
    if (h < 0 || a < 0 || b < 0) return false;
    auto it = pair_heads_.find(pack_pair(a, b));
    if (it == pair_heads_.end()) return false;
    return std::binary_search(it->second.begin(), it->second.end(), h);
}

bool DumpSource::relates(const BoundaryLightVector& v0, const BoundaryLightVector& v1) const {
    const int h = head_index(v0);
    const int s = source_index(v1);
    if (h < 0 || s < 0) return false;
    return std::binary_search(head_sources_[h].begin(), head_sources_[h].end(), s);
}

std::vector<BoundaryLightVector> DumpSource::head_samples() const {
    std::vector<BoundaryLightVector> out;
    for (std::size_t i = 0; i < heads_.size(); ++i)
        if (head_member_[i]) out.push_back(heads_[i]);
    return out;
}

std::vector<BoundaryLightVector> DumpSource::source_samples() const {
    std::vector<BoundaryLightVector> out;
    for (std::size_t i = 0; i < sources_.size(); ++i)
        if (source_member_[i]) out.push_back(sources_[i]);
    return out;
}

std::vector<std::pair<BoundaryLightVector, BoundaryLightVector>> DumpSource::source_pairs() const {
    std::vector<std::pair<BoundaryLightVector, BoundaryLightVector>> out;
    out.reserve(pair_list_.size());
    for (auto [a, b] : pair_list_) out.emplace_back(sources_[a], sources_[b]);
    return out;
}

std::vector<BoundaryLightVector> DumpSource::related_heads(const BoundaryLightVector& v) const {
    std::vector<BoundaryLightVector> out;
    const int s = source_index(v);
    if (s < 0) return out;
    for (int h : source_heads_[s]) out.push_back(heads_[h]);
    return out;
}

std::vector<BoundaryLightVector> DumpSource::sources_of(const BoundaryLightVector& v0) const {
    std::vector<BoundaryLightVector> out;
    const int h = head_index(v0);
    if (h < 0) return out;
    for (int s : head_sources_[h]) out.push_back(sources_[s]);
    return out;
}

std::vector<BoundaryLightVector> DumpSource::common_sources(const BoundaryLightVector& a,
                                                            const BoundaryLightVector& b) const {
    std::vector<BoundaryLightVector> out;
    const int ha = head_index(a);
    const int hb = head_index(b);
    if (ha < 0 || hb < 0) return out;
    std::vector<int> ids;
    std::set_intersection(head_sources_[ha].begin(), head_sources_[ha].end(),
                          head_sources_[hb].begin(), head_sources_[hb].end(),
                          std::back_inserter(ids));
    for (int s : ids) out.push_back(sources_[s]);
    return out;
}

// ---------------------------------------------------------------------------
// Observation-set pipeline

DirectionSet conical_piece(const RelationSource& R, const BoundaryLightVector& v1,
                           const BoundaryLightVector& v2,
                           const std::vector<BoundaryLightVector>& head_grid,
                           const SetOptions& opts) {
    std::vector<BoundaryLightVector> hits;
    for (const auto& h : head_grid)
        if (R.completes_pair(h, v1, v2)) hits.push_back(h);
    return make_direction_set(std::move(hits), opts);
}

DirectionSet candidate_cone(const RelationSource& R, const BoundaryLightVector& v1,
                            const BoundaryLightVector& v2, const ConeOptions& opts) {
    // heads related to v1, intersected with the heads related to v2
    DirectionSet out;
    const auto h1 = R.related_heads(v1);
    const auto h2 = R.related_heads(v2);
    if (static_cast<int>(std::min(h1.size(), h2.size())) < opts.min_members) {
        out.diagnostic = "insufficient sampling";
        return out;
    }
    const bool first_smaller = h1.size() <= h2.size();
    const auto& scan = first_smaller ? h1 : h2;
    const auto& other = first_smaller ? v2 : v1;
    std::vector<BoundaryLightVector> both;
    for (const auto& h : scan)
        if (R.relates(h, other)) both.push_back(h);
    if (static_cast<int>(both.size()) < opts.min_members) {
        out.diagnostic = "insufficient sampling";
        return out;
    }

    DirectionSet cand = make_direction_set(std::move(both), opts.set);
    std::vector<Vec8> cloud(cand.size());
    for (int i = 0; i < cand.size(); ++i) cloud[i] = quotient_embed(cand.members[i]);

    std::vector<BoundaryLightVector> kept;
    for (int i = 0; i < cand.size(); ++i) {
        std::vector<int> nb = k_nearest(cloud, cloud[i], opts.set.k, i);
        nb.push_back(i);
        if (static_cast<int>(nb.size()) < 5) continue;
        const Eigen::VectorXd s = neighbourhood_singulars(cand.members, nb);
        if (three_dominant(s, opts.dominance_gap, opts.dominance_floor))
            kept.push_back(cand.members[i]);
    }
    if (static_cast<int>(kept.size()) < opts.min_members) {
        out = DirectionSet{};
        out.diagnostic = "insufficient sampling";
        return out;
    }
    return make_direction_set(std::move(kept), opts.set);
}

DirectionSet earliest_part(const DirectionSet& c, const EarliestOptions& opts) {
    std::vector<BoundaryLightVector> kept;
    for (int i = 0; i < c.size(); ++i) {
        const Vec3 gi = generator_of(c.members[i].p);
        const double ti = c.members[i].p.T;
        bool preceded = false;
        for (int j = 0; j < c.size() && !preceded; ++j) {
            if (j == i) continue;
            if ((generator_of(c.members[j].p) - gi).norm() > opts.generator_tol) continue;
            if (c.members[j].p.T < ti - opts.delta_distinct) preceded = true;
        }
        if (!preceded) kept.push_back(c.members[i]);
    }
    DirectionSet out = make_direction_set(std::move(kept));
    out.diagnostic = c.diagnostic;
    return out;
}

DirectionSet smooth_part(const DirectionSet& c, const SmoothOptions& opts) {
    const BaseCloud bases = collapse_bases(c, opts.merge_tol);
    const int nb = static_cast<int>(bases.points.size());

    std::vector<char> base_kept(nb, 0);
    int short_of_neighbours = 0;
    for (int b = 0; b < nb; ++b) {
        if (nb - 1 < opts.k) {
            ++short_of_neighbours;
            continue;
        }
        std::vector<std::pair<double, int>> d;
        d.reserve(nb - 1);
        for (int j = 0; j < nb; ++j) {
            if (j == b) continue;
            d.emplace_back((bases.points[j].X - bases.points[b].X).squaredNorm(), j);
        }
        std::partial_sort(d.begin(), d.begin() + opts.k, d.end());
        std::vector<Vec3> pts;
        pts.reserve(opts.k + 1);
        pts.push_back(bases.points[b].X);
        for (int i = 0; i < opts.k; ++i) pts.push_back(bases.points[d[i].second].X);
        const MongePatch patch = fit_monge_patch(pts, bases.points[b].X);
        if (patch.rms < opts.eps_smooth) base_kept[b] = 1;
    }

    std::vector<BoundaryLightVector> kept;
    for (int i = 0; i < c.size(); ++i)
        if (base_kept[bases.base_of[i]]) kept.push_back(c.members[i]);
    DirectionSet out = make_direction_set(std::move(kept));
    out.diagnostic = c.diagnostic;
    if (short_of_neighbours > 0) {
        if (!out.diagnostic.empty()) out.diagnostic += "; ";
        out.diagnostic +=
            std::to_string(short_of_neighbours) + " bases short of " + std::to_string(opts.k) +
            " neighbours";
    }
    return out;
}

TangencyRecord tangency_order(const DirectionSet& ca, const DirectionSet& cb, const Point& p,
                              const TangencyOptions& opts) {
    const BaseCloud ba = collapse_bases(ca);
    const BaseCloud bb = collapse_bases(cb);
    const auto pa = patch_near(ba.points, p.X, opts.k, opts.search_radius);
    const auto pb = patch_near(bb.points, p.X, opts.k, opts.search_radius);
    if (!pa || !pb) throw error(errc::numeric, "insufficient data");

    TangencyRecord rec;
    rec.p = p;
    rec.normal_a = patch_normal_at(*pa, p.X);
    rec.normal_b = patch_normal_at(*pb, p.X);
    if (rec.normal_a.dot(rec.normal_b) < 0.0) rec.normal_b = -rec.normal_b;
    rec.angle = plane_angle(rec.normal_a, rec.normal_b);
    rec.verdict = rec.angle < opts.theta_tan ? TangencyVerdict::tangential
                                             : TangencyVerdict::transversal;

    const OrderTally tally = generator_order(ba.points, bb.points, p.X, opts.search_radius,
                                             opts.generator_tol, opts.delta_order);
    rec.matched_generators = tally.matched;
    if (tally.earlier > 0 && tally.later == 0)
        rec.ordering = TangencyOrdering::first_earlier;
    else if (tally.later > 0 && tally.earlier == 0)
        rec.ordering = TangencyOrdering::second_earlier;
    else
        rec.ordering = TangencyOrdering::incomparable;
    return rec;
}

DirectionSet regular_part(const DirectionSet& c_ear, const std::vector<DirectionSet>& library,
                          const RegularOptions& opts) {
    if (library.empty()) throw error(errc::config, "library required");
    const DirectionSet c_inf = smooth_part(c_ear, opts.smooth);
    if (c_inf.empty()) return c_inf;

    const BaseCloud bases = collapse_bases(c_inf);

    struct LibEntry {
        BaseCloud bases;
        Vec3 centroid = Vec3::Zero();
        double r_min = 0.0, r_max = 0.0;
    };
    std::vector<LibEntry> lib;
    lib.reserve(library.size());
    for (const auto& set : library) {
        LibEntry e;
        e.bases = collapse_bases(set);
        if (e.bases.points.empty()) {
            lib.push_back(std::move(e));
            continue;
        }
        for (const auto& q : e.bases.points) e.centroid += q.X;
        e.centroid /= static_cast<double>(e.bases.points.size());
        e.r_min = std::numeric_limits<double>::infinity();
        for (const auto& q : e.bases.points) {
            const double r = (q.X - e.centroid).norm();
            e.r_min = std::min(e.r_min, r);
            e.r_max = std::max(e.r_max, r);
        }
        lib.push_back(std::move(e));
    }

    const double radius = opts.tangency.search_radius;
    std::vector<char> base_certified(bases.points.size(), 0);
    for (std::size_t b = 0; b < bases.points.size(); ++b) {
        const Point& p = bases.points[b];
        const auto own = patch_near(bases.points, p.X, opts.tangency.k, radius);
        if (!own) continue;
        const Vec3 n_own = patch_normal_at(*own, p.X);
        for (const auto& e : lib) {
            if (e.bases.points.empty()) continue;
            const double d = (p.X - e.centroid).norm();
            if (d - e.r_max > radius || e.r_min - d > radius) continue;
            const auto lp = patch_near(e.bases.points, p.X, opts.tangency.k, radius);
            if (!lp) continue;
            if (plane_angle(n_own, patch_normal_at(*lp, p.X)) >= opts.tangency.theta_tan) continue;
            // library surface must arrive strictly earlier along shared generators
            const OrderTally tally =
                generator_order(e.bases.points, bases.points, p.X, radius, opts.tangency.generator_tol,
                                opts.tangency.delta_order);
            if (tally.earlier > 0 && tally.later == 0) {
                base_certified[b] = 1;
                break;
            }
        }
    }

    std::vector<BoundaryLightVector> kept;
    for (int i = 0; i < c_inf.size(); ++i)
        if (base_certified[bases.base_of[i]]) kept.push_back(c_inf.members[i]);
    DirectionSet out = make_direction_set(std::move(kept));
    out.diagnostic = c_inf.diagnostic;
    return out;
}

bool v_one_membership(const RelationSource& R, const VMinusSpec& vminus,
                      const BoundaryLightVector& v1, const DirectionSet& c_reg,
                      const BoundaryLightVector& v0, const BoundaryLightVector& v0_tilde,
                      const VOneOptions& opts) {
    if (!within_set(v0, c_reg, 1e-9) || !within_set(v0_tilde, c_reg, 1e-9))
        throw error(errc::config, "head not in the recovered set");
    if (raw_distance(v0, v0_tilde) <= opts.set.delta_distinct)
        throw error(errc::config, "heads not distinct");

    const auto common = R.common_sources(v0, v0_tilde);
    if (static_cast<int>(common.size()) < opts.set.k + 1) return false;

    int self = -1;
    for (int i = 0; i < static_cast<int>(common.size()); ++i) {
        if (raw_distance(common[i], v1) < 1e-9) {
            self = i;
            break;
        }
    }
    if (self < 0) return false;

    std::vector<Vec8> cloud(common.size());
    for (std::size_t i = 0; i < common.size(); ++i) cloud[i] = quotient_embed(common[i]);
    std::vector<int> nb = k_nearest(cloud, cloud[self], opts.set.k, self);
    nb.push_back(self);
    const Eigen::VectorXd s = neighbourhood_singulars(common, nb);
    if (!three_dominant(s, opts.dominance_gap, opts.dominance_floor)) return false;

    // every sampled neighbourhood triple of distinct rays must be a source
    // candidate triple
    std::mt19937 rng(opts.seed);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(nb.size()) - 1);
    int tested = 0;
    for (int attempt = 0; attempt < 20 * opts.triple_checks && tested < opts.triple_checks;
         ++attempt) {
        const int a = nb[pick(rng)];
        const int b = nb[pick(rng)];
        const int c = nb[pick(rng)];
        if (a == b || a == c || b == c) continue;
        if (member_distance(common[a], common[b]) <= opts.set.delta_distinct ||
            member_distance(common[a], common[c]) <= opts.set.delta_distinct ||
            member_distance(common[b], common[c]) <= opts.set.delta_distinct)
            continue;
        ++tested;
        if (!vminus.member(common[a], common[b], common[c])) return false;
    }
    return tested > 0;
}

std::vector<RecoveredSet> reconstruct_all(const RelationSource& R, const VMinusSpec& vminus,
                                          const PatchSpec& u_minus, const PatchSpec& u_plus,
                                          const ReconstructOptions& opts) {
    struct Staged {
        BoundaryLightVector a, b;
        DirectionSet ear;
        DirectionSet inf;
    };
    std::vector<Staged> staged;

    // a source pair only qualifies if it extends to an admissible triple
    const auto all_sources = R.source_samples();
    auto pair_admissible = [&](const BoundaryLightVector& a, const BoundaryLightVector& b) {
        int tried = 0;
        for (const auto& s : all_sources) {
            if (raw_distance(s, a) < 1e-9 || raw_distance(s, b) < 1e-9) continue;
            if (vminus.member(a, b, s)) return true;
            if (++tried >= 64) break;
        }
        return false;
    };

    for (const auto& [a, b] : R.source_pairs()) {
        if (!u_minus.contains(a.p) || !u_minus.contains(b.p)) continue;
        if (!pair_admissible(a, b)) continue;
        DirectionSet cone = candidate_cone(R, a, b, opts.cone);
        if (!cone.diagnostic.empty() || cone.empty()) continue;
        std::vector<BoundaryLightVector> in_patch;
        for (const auto& m : cone.members)
            if (u_plus.contains(m.p)) in_patch.push_back(m);
        cone = make_direction_set(std::move(in_patch), opts.cone.set);
        if (cone.size() < opts.cone.min_members) continue;

        Staged st;
        st.a = a;
        st.b = b;
        st.ear = earliest_part(cone, opts.earliest);
        st.inf = smooth_part(st.ear, opts.regular.smooth);
        if (st.inf.size() < opts.cone.min_members) continue;
        staged.push_back(std::move(st));
    }

    std::vector<DirectionSet> library;
    library.reserve(staged.size());
    for (const auto& st : staged) library.push_back(st.inf);

    std::vector<RecoveredSet> survivors;
    for (const auto& st : staged) {
        DirectionSet reg = regular_part(st.ear, library, opts.regular);
        if (reg.size() < opts.cone.min_members) continue;

        // hunt witness heads rich in sources near the tested pair
        auto candidates = [&](const BoundaryLightVector& src) {
            std::vector<int> out;
            for (int i = 0; i < reg.size(); ++i) {
                const auto srcs = R.sources_of(reg.members[i]);
                int support = 0;
                for (const auto& s : srcs)
                    if (member_distance(s, src) <= opts.vone_support_radius) ++support;
                if (support >= opts.vone_support) out.push_back(i);
            }
            return out;
        };
        const std::vector<int> cand_a = candidates(st.a);
        std::vector<int> cand;
        {
            const std::vector<int> cand_b = candidates(st.b);
            std::set_intersection(cand_a.begin(), cand_a.end(), cand_b.begin(), cand_b.end(),
                                  std::back_inserter(cand));
        }

        bool passed = false;
        int attempts = 0;
        for (std::size_t i = 0; i < cand.size() && !passed && attempts < opts.vone_attempts; ++i) {
            for (std::size_t j = i + 1; j < cand.size() && !passed && attempts < opts.vone_attempts;
                 ++j) {
                const auto& h0 = reg.members[cand[i]];
                const auto& h1 = reg.members[cand[j]];
                if (raw_distance(h0, h1) <= opts.vone.set.delta_distinct) continue;
                ++attempts;
                try {
                    if (v_one_membership(R, vminus, st.a, reg, h0, h1, opts.vone) &&
                        v_one_membership(R, vminus, st.b, reg, h0, h1, opts.vone))
                        passed = true;
                } catch (const error&) {
                    // ineligible witness pair; keep hunting
                }
            }
        }
        if (!passed) continue;

        RecoveredSet rec;
        rec.c_reg = std::move(reg);
        rec.c_ear = st.ear;
        rec.v1 = st.a;
        rec.v2 = st.b;
        survivors.push_back(std::move(rec));
    }

    // deduplicate by symmetric set distance
    std::vector<RecoveredSet> groups;
    for (auto& s : survivors) {
        bool merged = false;
        for (auto& g : groups) {
            const double thr = opts.dedup_scale > 0.0
                                   ? opts.dedup_scale
                                   : std::max(s.c_reg.grid_scale, g.c_reg.grid_scale);
            if (set_hausdorff(s.c_reg, g.c_reg, thr) < thr) {
                g.merged_pairs.emplace_back(s.v1, s.v2);
                if (s.c_reg.size() > g.c_reg.size()) {
                    std::swap(g.c_reg, s.c_reg);
                    std::swap(g.c_ear, s.c_ear);
                    std::swap(g.v1, s.v1);
                    std::swap(g.v2, s.v2);
                }
                merged = true;
                break;
            }
        }
        if (!merged) groups.push_back(std::move(s));
    }
    return groups;
}

PointRecovery point_recovery(const MetricSpec& spec, const DirectionSet& c_reg,
                             const PointRecoveryOptions& opts) {
    const BaseCloud bases = collapse_bases(c_reg);

    std::vector<Trajectory> rays;
    for (std::size_t b = 0; b < bases.points.size(); ++b) {
        const auto& m = c_reg.members[bases.representative[b]];
        try {
            TraceResult tr = trace_to_boundary(spec, m.p, m.w, TraceDirection::backward,
                                               opts.s_max, opts.integrate);
            if (tr.trajectory.nodes.size() >= 2) rays.push_back(std::move(tr.trajectory));
        } catch (const error&) {
            // ray failed to cross; leave it out
        }
    }

    PointRecovery out;
    out.rays_used = static_cast<int>(rays.size());
    if (rays.size() < 2) {
        out.ill_posed = true;
        if (!rays.empty()) out.estimate = rays[0].point(rays[0].s_end() / 2.0);
        return out;
    }

    auto closest_parameter = [&](const Trajectory& t, const Vec4& q) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int i = 0; i < static_cast<int>(t.nodes.size()); ++i) {
            const double d = (t.position4(t.nodes[i].s) - q).squaredNorm();
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
        double f1 = (t.position4(x1) - q).squaredNorm();
        double f2 = (t.position4(x2) - q).squaredNorm();
        for (int it = 0; it < 80 && hi - lo > 1e-14; ++it) {
            if (f1 < f2) {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - gr * (hi - lo);
                f1 = (t.position4(x1) - q).squaredNorm();
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + gr * (hi - lo);
                f2 = (t.position4(x2) - q).squaredNorm();
            }
        }
        return 0.5 * (lo + hi);
    };

    // initial guess: median of pairwise closest-approach midpoints
    std::vector<double> comp[4];
    const int m = static_cast<int>(rays.size());
    const int stride = std::max(1, m / 8);
    for (int i = 0; i < m; i += stride) {
        const int j = (i + m / 2) % m;
        if (j == i) continue;
        const auto& ta = rays[i];
        const auto& tb = rays[j];
        double best_d = std::numeric_limits<double>::infinity();
        Vec4 mid = Vec4::Zero();
        for (const auto& na : ta.nodes) {
            const Vec4 xa = ta.position4(na.s);
            for (const auto& nbn : tb.nodes) {
                const Vec4 xb = tb.position4(nbn.s);
                const double d = (xa - xb).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    mid = 0.5 * (xa + xb);
                }
            }
        }
        for (int cidx = 0; cidx < 4; ++cidx) comp[cidx].push_back(mid[cidx]);
    }
    Vec4 q = Vec4::Zero();
    for (int cidx = 0; cidx < 4; ++cidx) {
        auto& v = comp[cidx];
        auto midit = v.begin() + v.size() / 2;
        std::nth_element(v.begin(), midit, v.end());
        q[cidx] = *midit;
    }

    std::vector<Vec4> feet(rays.size());
    for (int it = 0; it < opts.max_iterations; ++it) {
        for (std::size_t i = 0; i < rays.size(); ++i)
            feet[i] = rays[i].position4(closest_parameter(rays[i], q));
        Vec4 next = Vec4::Zero();
        for (const auto& f : feet) next += f;
        next /= static_cast<double>(feet.size());
        const double shift = (next - q).norm();
        q = next;
        if (shift < opts.tol) break;
    }

    double ss = 0.0;
    for (const auto& f : feet) ss += (f - q).squaredNorm();
    out.residual = std::sqrt(ss / static_cast<double>(feet.size()));
    out.estimate = Point::from_coords(q);
    return out;
}

double earliest_observation_time(const DirectionSet& c_reg, const BoundaryCurve& mu,
                                 const CrossingOptions& opts) {
    if (c_reg.empty()) throw error(errc::config, "empty observation set");
    const BaseCloud bases = collapse_bases(c_reg);

    std::map<int, MongePatch> patch_cache;
    auto patch_of = [&](int b) -> const MongePatch* {
        auto it = patch_cache.find(b);
        if (it != patch_cache.end()) return &it->second;
        auto p = patch_near(bases.points, bases.points[b].X, opts.k, opts.search_radius);
        if (!p) return nullptr;
        return &patch_cache.emplace(b, *p).first->second;
    };

    auto nearest_base = [&](const Point& y) {
        int best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (int b = 0; b < static_cast<int>(bases.points.size()); ++b) {
            const double d = (bases.points[b].coords() - y.coords()).norm();
            if (d < best_d) {
                best_d = d;
                best = b;
            }
        }
        return std::pair{best, best_d};
    };

    struct Sample {
        double s = 0.0;
        double offset = 0.0;
        Vec3 normal = Vec3::Zero();
        int base = -1;
        bool valid = false;
    };

    auto evaluate = [&](double s) {
        Sample smp;
        smp.s = s;
        const Point y = mu.gamma(s);
        if (std::abs(f_plus(y)) > 1e-7)
            throw error(errc::config, "curve leaves the future sheet");
        const auto [b, d] = nearest_base(y);
        if (b < 0 || d > opts.search_radius) return smp;
        const MongePatch* patch = patch_of(b);
        if (!patch) return smp;
        smp.offset = patch->signed_offset(y.X);
        smp.normal = patch_normal_at(*patch, y.X);
        smp.base = b;
        smp.valid = true;
        return smp;
    };

    std::vector<Sample> scan(opts.coarse_samples);
    bool have_ref = false;
    Vec3 ref_normal = Vec3::Zero();
    for (int i = 0; i < opts.coarse_samples; ++i) {
        const double s = -1.0 + 2.0 * i / (opts.coarse_samples - 1);
        Sample smp = evaluate(s);
        if (smp.valid) {
            if (have_ref && smp.normal.dot(ref_normal) < 0.0) {
                smp.normal = -smp.normal;
                smp.offset = -smp.offset;
            }
            ref_normal = smp.normal;
            have_ref = true;
        }
        scan[i] = smp;
    }

    std::vector<std::pair<int, int>> brackets;
    for (int i = 0; i + 1 < opts.coarse_samples; ++i) {
        if (!scan[i].valid || !scan[i + 1].valid) continue;
        if (scan[i].offset == 0.0) continue;
        if (scan[i].offset * scan[i + 1].offset < 0.0) brackets.emplace_back(i, i + 1);
    }
    for (int i = 0; i < opts.coarse_samples; ++i)
        if (scan[i].valid && scan[i].offset == 0.0) brackets.emplace_back(i, i);

    if (brackets.size() != 1) throw error(errc::numeric, "outside R(mu)");
    auto [ilo, ihi] = brackets.front();
    if (ilo == ihi) return scan[ilo].s;

    // bisect against one fixed patch spanning the bracket
    double lo = scan[ilo].s;
    double hi = scan[ihi].s;
    const Point y_mid = mu.gamma(0.5 * (lo + hi));
    const auto [bfix, dfix] = nearest_base(y_mid);
    const MongePatch* fixed = patch_of(bfix >= 0 ? bfix : scan[ilo].base);
    if (!fixed) throw error(errc::numeric, "outside R(mu)");
    auto offset_fixed = [&](double s) { return fixed->signed_offset(mu.gamma(s).X); };
    double flo = offset_fixed(lo);
    if (flo == 0.0) return lo;
    for (int it = 0; it < 200 && hi - lo > opts.tol; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = offset_fixed(mid);
        if (fm == 0.0) return mid;
        if (flo * fm < 0.0) {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    return 0.5 * (lo + hi);
}

Chart chart_build(const SetFamily& family, const std::vector<BoundaryCurve>& curves,
                  const ChartOptions& opts) {
    const int nc = static_cast<int>(curves.size());
    if (nc < 4) throw error(errc::config, "at least four boundary curves required");

    const double h = opts.fd_step;
    std::array<DirectionSet, 9> sets;  // centre, then -/+ per label axis
    sets[0] = family(Vec4::Zero());
    for (int a = 0; a < 4; ++a) {
        Vec4 off = Vec4::Zero();
        off[a] = -h;
        sets[1 + 2 * a] = family(off);
        off[a] = h;
        sets[2 + 2 * a] = family(off);
    }

    std::vector<int> usable;
    std::vector<double> centre(nc, 0.0);
    std::vector<Eigen::RowVector4d> rows(nc);
    for (int j = 0; j < nc; ++j) {
        try {
            centre[j] = earliest_observation_time(sets[0], curves[j], opts.crossing);
            Eigen::RowVector4d row;
            for (int a = 0; a < 4; ++a) {
                const double xm = earliest_observation_time(sets[1 + 2 * a], curves[j], opts.crossing);
                const double xp = earliest_observation_time(sets[2 + 2 * a], curves[j], opts.crossing);
                row[a] = (xp - xm) / (2.0 * h);
            }
            rows[j] = row;
            usable.push_back(j);
        } catch (const error& e) {
            if (e.code() == errc::config) throw;
            // curve misses the surface family; skip it
        }
    }
    if (static_cast<int>(usable.size()) < 4)
        throw error(errc::numeric, "degenerate curve family");

    double best = -1.0;
    std::array<int, 4> best_pick{};
    Mat4 best_jac = Mat4::Zero();
    const int nu = static_cast<int>(usable.size());
    for (int i = 0; i < nu; ++i)
        for (int j = i + 1; j < nu; ++j)
            for (int k = j + 1; k < nu; ++k)
                for (int l = k + 1; l < nu; ++l) {
                    Mat4 jac;
                    jac.row(0) = rows[usable[i]];
                    jac.row(1) = rows[usable[j]];
                    jac.row(2) = rows[usable[k]];
                    jac.row(3) = rows[usable[l]];
                    const Eigen::Vector4d s =
                        jac.jacobiSvd(Eigen::ComputeFullU | Eigen::ComputeFullV).singularValues();
                    if (s(0) <= 0.0) continue;
                    const double rel = s(3) / s(0);
                    if (rel > best) {
                        best = rel;
                        best_pick = {usable[i], usable[j], usable[k], usable[l]};
                        best_jac = jac;
                    }
                }
    if (best < opts.sigma_chart) throw error(errc::numeric, "degenerate curve family");

    Chart chart;
    chart.curve_index = best_pick;
    for (int i = 0; i < 4; ++i) chart.x_center[i] = centre[best_pick[i]];
    chart.jacobian = best_jac;
    chart.sigma_min = best;
    return chart;
}

Vec4 family_direction(const TangencyFamily& f) {
    const int n = static_cast<int>(f.parameters.size());
    if (n < 2 || static_cast<int>(f.estimates.size()) != n)
        throw error(errc::config, "degenerate tangency family");
    double pbar = 0.0;
    Vec4 ebar = Vec4::Zero();
    for (int i = 0; i < n; ++i) {
        pbar += f.parameters[i];
        ebar += f.estimates[i];
    }
    pbar /= n;
    ebar /= n;
    double denom = 0.0;
    Vec4 num = Vec4::Zero();
    for (int i = 0; i < n; ++i) {
        const double dp = f.parameters[i] - pbar;
        denom += dp * dp;
        num += dp * (f.estimates[i] - ebar);
    }
    if (denom <= 0.0) throw error(errc::config, "degenerate tangency family");
    Vec4 v = num / denom;
    const double norm = v.norm();
    if (norm <= 0.0) throw error(errc::config, "degenerate tangency family");
    v /= norm;
    for (int i = 0; i < 4; ++i) {
        if (v[i] > 0.0) break;
        if (v[i] < 0.0) {
            v = -v;
            break;
        }
    }
    return v;
}

ConformalFit conformal_recover(const std::vector<Vec4>& rays) {
    std::vector<Vec4> dirs;
    for (const auto& r : rays) {
        const double n = r.norm();
        if (n > 0.0) dirs.push_back(r / n);
    }
    const int m = static_cast<int>(dirs.size());
    if (m < 9) throw error(errc::numeric, "underdetermined conformal fit");

    Eigen::MatrixXd a(m, 10);
    for (int i = 0; i < m; ++i) {
        const Vec4& v = dirs[i];
        a.row(i) << v[0] * v[0], v[1] * v[1], v[2] * v[2], v[3] * v[3], 2.0 * v[0] * v[1],
            2.0 * v[0] * v[2], 2.0 * v[0] * v[3], 2.0 * v[1] * v[2], 2.0 * v[1] * v[3],
            2.0 * v[2] * v[3];
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const Eigen::VectorXd s = svd.singularValues();
    if (s(8) < 1e-8 * s(0)) throw error(errc::numeric, "underdetermined conformal fit");
    const Eigen::VectorXd qv = svd.matrixV().col(9);

    ConformalFit fit;
    Mat4& Q = fit.Q;
    Q(0, 0) = qv(0);
    Q(1, 1) = qv(1);
    Q(2, 2) = qv(2);
    Q(3, 3) = qv(3);
    Q(0, 1) = Q(1, 0) = qv(4);
    Q(0, 2) = Q(2, 0) = qv(5);
    Q(0, 3) = Q(3, 0) = qv(6);
    Q(1, 2) = Q(2, 1) = qv(7);
    Q(1, 3) = Q(3, 1) = qv(8);
    Q(2, 3) = Q(3, 2) = qv(9);
    Q /= Q.norm();
    if (Q(0, 0) > 0.0 || (Q(0, 0) == 0.0 && Q.trace() > 0.0)) Q = -Q;

    double ss = 0.0;
    for (const auto& v : dirs) {
        const double r = v.dot(Q * v);
        ss += r * r;
    }
    fit.residual = std::sqrt(ss / m);
    fit.rays = m;
    return fit;
}

ConformalFit conformal_recover(const std::vector<TangencyFamily>& families) {
    std::vector<Vec4> rays;
    rays.reserve(families.size());
    for (const auto& f : families) rays.push_back(family_direction(f));
    return conformal_recover(rays);
}

Vec4 screen_to_ray(const MetricSpec& spec, const Point& p, const Vec4& s1, const Vec4& s2,
                   double tol) {
    if (!on_boundary(p, Side::Splus, 1e-7))
        throw error(errc::config, "point not on the future sheet");
    const double r = p.r();
    const Vec3 xhat = p.X / r;
    Vec4 df;
    df << 1.0, xhat[0], xhat[1], xhat[2];
    if (std::abs(df.dot(s1)) > tol * s1.norm() || std::abs(df.dot(s2)) > tol * s2.norm())
        throw error(errc::config, "screen not tangent to the sheet");
    Eigen::Matrix<double, 4, 2> sb;
    sb.col(0) = s1;
    sb.col(1) = s2;
    if (sb.jacobiSvd().singularValues()(1) < tol * sb.norm())
        throw error(errc::config, "screen directions not independent");

    // sheet generator: future normal direction, null and tangent to the sheet
    Vec4 ell = -sharp(spec, p, df);
    if (ell[0] < 0.0) ell = -ell;
    {
        // least-squares projection of the generator onto the screen
        const Eigen::Vector2d ab = sb.colPivHouseholderQr().solve(ell);
        if ((ell - sb * ab).norm() < 1e-6 * ell.norm())
            throw error(errc::numeric, "radical-degenerate screen");
    }

    const Mat4 g = metric_matrix(spec, p);
    Eigen::Matrix<double, 2, 4> ortho;
    ortho.row(0) = (g * s1).transpose();
    ortho.row(1) = (g * s2).transpose();
    Eigen::JacobiSVD<Eigen::Matrix<double, 2, 4>> svd(ortho, Eigen::ComputeFullV);
    const Vec4 n1 = svd.matrixV().col(2);
    const Vec4 n2 = svd.matrixV().col(3);

    // pick the complement direction transverse to the generator
    const Vec4 eln = ell.normalized();
    Vec4 m = n1 - n1.dot(eln) * eln;
    if (const Vec4 m2 = n2 - n2.dot(eln) * eln; m2.norm() > m.norm()) m = m2;
    if (m.norm() < tol) throw error(errc::numeric, "radical-degenerate screen");
    m.normalize();

    const double gmm = m.dot(g * m);
    const double glm = ell.dot(g * m);
    Vec4 w;
    if (std::abs(gmm) < 1e-12 * g.norm()) {
        // complement direction already null
        w = m;
    } else {
        w = ell - (2.0 * glm / gmm) * m;
    }
    // orient to the future and outward
    const Vec4 dt = Vec4::Unit(0);
    if (w.dot(g * dt) > 0.0) w = -w;
    if (df.dot(w) <= tol * w.norm()) throw error(errc::numeric, "radical-degenerate screen");
    return gplus_normalize(spec, p, w);
}

}  // namespace diamond
