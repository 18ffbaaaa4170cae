#pragma once

#include "diamond/geometry.hpp"

#include <array>
#include <vector>

namespace diamond {

// Triangulated two-parameter family of curves: one curve per base direction,
// all sampled on a shared parameter grid. Surface points interpolate
// barycentrically across a triangle and by cubic Hermite along the grid.
struct CongruenceMesh {
    std::vector<Vec3> base_dirs;
    std::vector<std::array<int, 3>> tris;
    std::vector<double> tgrid;
    std::vector<std::vector<Vec4>> pos;  // pos[dir][k] at tgrid[k]
    std::vector<std::vector<Vec4>> vel;  // d pos / d t

    // invariant: pos[i].size() == vel[i].size() == tgrid.size() for every i
    int segment(double t) const;
    Vec4 curve_point(int dir, double t) const;
    Vec4 curve_velocity(int dir, double t) const;

    // x(tri; b1, b2, t) with barycentric weights (1-b1-b2, b1, b2)
    Vec4 point(int tri, double b1, double b2, double t) const;
    Vec4 dpoint_db1(int tri, double t) const;
    Vec4 dpoint_db2(int tri, double t) const;
    Vec4 dpoint_dt(int tri, double b1, double b2, double t) const;

    // largest distance between adjacent samples, used to scale search gates
    double sample_spacing() const;

    // triangle sharing the edge opposite the given local vertex, or -1;
    // adjacency is built on first use
    int neighbor(int tri, int local_vertex) const;
    void build_adjacency() const;

private:
    mutable std::vector<std::array<int, 3>> neighbors_;
};

// Geodesic icosphere: unit vertices and triangles after `level` 4-to-1
// subdivisions of the icosahedron (level 0: 12 vertices, 1: 42, 2: 162,
// 3: 642).
void icosphere(int level, std::vector<Vec3>& verts, std::vector<std::array<int, 3>>& tris);

} // namespace diamond
