#include "diamond/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace diamond {

namespace {

double cubic(double ya, double yb, double da, double db, double h, double t) {
    const double t2 = t * t;
    const double t3 = t2 * t;
    return ya * (2 * t3 - 3 * t2 + 1) + yb * (-2 * t3 + 3 * t2) + h * da * (t3 - 2 * t2 + t) +
           h * db * (t3 - t2);
}

double cubic_d(double ya, double yb, double da, double db, double h, double t) {
    const double t2 = t * t;
    return (ya * (6 * t2 - 6 * t) + yb * (-6 * t2 + 6 * t)) / h + da * (3 * t2 - 4 * t + 1) +
           db * (3 * t2 - 2 * t);
}

} // namespace

int CongruenceMesh::segment(double t) const {
    const int n = static_cast<int>(tgrid.size());
    int lo = 0;
    int hi = n - 1;
    while (hi - lo > 1) {
        const int mid = (lo + hi) / 2;
        if (tgrid[mid] <= t)
            lo = mid;
        else
            hi = mid;
    }
    return lo;
}

Vec4 CongruenceMesh::curve_point(int dir, double t) const {
    const int k = segment(t);
    const double h = tgrid[k + 1] - tgrid[k];
    const double u = (t - tgrid[k]) / h;
    Vec4 out;
    for (int i = 0; i < 4; ++i)
        out[i] = cubic(pos[dir][k][i], pos[dir][k + 1][i], vel[dir][k][i], vel[dir][k + 1][i], h, u);
    return out;
}

Vec4 CongruenceMesh::curve_velocity(int dir, double t) const {
    const int k = segment(t);
    const double h = tgrid[k + 1] - tgrid[k];
    const double u = (t - tgrid[k]) / h;
    Vec4 out;
    for (int i = 0; i < 4; ++i)
        out[i] =
            cubic_d(pos[dir][k][i], pos[dir][k + 1][i], vel[dir][k][i], vel[dir][k + 1][i], h, u);
    return out;
}

Vec4 CongruenceMesh::point(int tri, double b1, double b2, double t) const {
    const auto& tr = tris[tri];
    return (1.0 - b1 - b2) * curve_point(tr[0], t) + b1 * curve_point(tr[1], t) +
           b2 * curve_point(tr[2], t);
}

Vec4 CongruenceMesh::dpoint_db1(int tri, double t) const {
    const auto& tr = tris[tri];
    return curve_point(tr[1], t) - curve_point(tr[0], t);
}

Vec4 CongruenceMesh::dpoint_db2(int tri, double t) const {
    const auto& tr = tris[tri];
    return curve_point(tr[2], t) - curve_point(tr[0], t);
}

Vec4 CongruenceMesh::dpoint_dt(int tri, double b1, double b2, double t) const {
    const auto& tr = tris[tri];
    return (1.0 - b1 - b2) * curve_velocity(tr[0], t) + b1 * curve_velocity(tr[1], t) +
           b2 * curve_velocity(tr[2], t);
}

double CongruenceMesh::sample_spacing() const {
    double h = 0.0;
    const int nk = static_cast<int>(tgrid.size());
    for (const auto& tr : tris) {
        for (int k = 0; k < nk; ++k) {
            h = std::max(h, (pos[tr[0]][k] - pos[tr[1]][k]).norm());
            h = std::max(h, (pos[tr[1]][k] - pos[tr[2]][k]).norm());
            h = std::max(h, (pos[tr[2]][k] - pos[tr[0]][k]).norm());
        }
    }
    for (const auto& curve : pos)
        for (int k = 0; k + 1 < nk; ++k) h = std::max(h, (curve[k] - curve[k + 1]).norm());
    return h;
}

void CongruenceMesh::build_adjacency() const {
    neighbors_.assign(tris.size(), {-1, -1, -1});
    std::map<std::pair<int, int>, std::pair<int, int>> edges; // edge -> (tri, opposite local vertex)
    for (int t = 0; t < static_cast<int>(tris.size()); ++t) {
        for (int v = 0; v < 3; ++v) {
            int a = tris[t][(v + 1) % 3];
            int b = tris[t][(v + 2) % 3];
            if (a > b) std::swap(a, b);
            const auto key = std::make_pair(a, b);
            auto it = edges.find(key);
            if (it == edges.end()) {
                edges.emplace(key, std::make_pair(t, v));
            } else {
                neighbors_[t][v] = it->second.first;
                neighbors_[it->second.first][it->second.second] = t;
            }
        }
    }
}

int CongruenceMesh::neighbor(int tri, int local_vertex) const {
    if (neighbors_.empty()) build_adjacency();
    return neighbors_[tri][local_vertex];
}

void icosphere(int level, std::vector<Vec3>& verts, std::vector<std::array<int, 3>>& tris) {
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    verts = {{-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
             {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
             {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
    for (auto& v : verts) v.normalize();
    tris = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
            {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
            {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
            {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    for (int l = 0; l < level; ++l) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            const auto key = std::make_pair(std::min(a, b), std::max(a, b));
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            const int idx = static_cast<int>(verts.size());
            verts.push_back((verts[a] + verts[b]).normalized());
            midpoint.emplace(key, idx);
            return idx;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(tris.size() * 4);
        for (const auto& t : tris) {
            const int ab = mid(t[0], t[1]);
            const int bc = mid(t[1], t[2]);
            const int ca = mid(t[2], t[0]);
            next.push_back({t[0], ab, ca});
            next.push_back({t[1], bc, ab});
            next.push_back({t[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        tris = std::move(next);
    }
}

} // namespace diamond
