#pragma once

#include "diamond/geometry.hpp"

#include <cmath>
#include <vector>

namespace diamond {

// Evenly spread unit directions (golden-angle lattice).
inline std::vector<Vec3> fibonacci_sphere(int n) {
    std::vector<Vec3> out;
    out.reserve(n);
    const double ga = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / n;
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = ga * i;
        out.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
    }
    return out;
}

// Deterministic orthonormal pair completing u to a basis.
inline void orthonormal_complement(const Vec3& u, Vec3& e1, Vec3& e2) {
    const Vec3 un = u.normalized();
    int k = 0;
    for (int c = 1; c < 3; ++c)
        if (std::abs(un[c]) < std::abs(un[k])) k = c;
    e1 = (Vec3::Unit(k) - un[k] * un).normalized();
    e2 = un.cross(e1);
}

// Unit directions within angular radius theta_max of center (sunflower layout).
inline std::vector<Vec3> sunflower_cap(const Vec3& center, double theta_max, int n) {
    Vec3 e1, e2;
    orthonormal_complement(center, e1, e2);
    const Vec3 c = center.normalized();
    const double ga = M_PI * (3.0 - std::sqrt(5.0));
    std::vector<Vec3> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        const double theta = theta_max * std::sqrt((i + 0.5) / n);
        const double phi = ga * i;
        out.push_back(std::cos(theta) * c +
                      std::sin(theta) * (std::cos(phi) * e1 + std::sin(phi) * e2));
    }
    return out;
}

} // namespace diamond
