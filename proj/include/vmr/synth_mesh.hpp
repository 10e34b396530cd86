#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "vmr/geometry.hpp"

namespace vmr {

/// Lat-long sphere with a per-face UV chart (seam handled by duplicating
/// u = 1 on the wrapping faces) and a mirror pairing across the z = 0 plane
/// (row r pairs with row R - r, poles pair with each other).
struct SphereTemplate {
    TriMesh mesh;
    UvChart chart;
};

inline SphereTemplate make_uv_sphere(int rings, int segments, double radius = 1.0,
                                     int tex_h = 32, int tex_w = 32) {
    if (rings < 2 || segments < 3)
        throw std::runtime_error("make_uv_sphere: need rings >= 2, segments >= 3");
    SphereTemplate out;
    TriMesh& mesh = out.mesh;

    const int north = 0;
    auto idx = [&](int r, int s) { return 1 + (r - 1) * segments + (s % segments); };
    const int south = 1 + (rings - 1) * segments;

    mesh.vertices.push_back(Vec3(0, 0, radius));
    for (int r = 1; r < rings; ++r) {
        double theta = M_PI * r / rings;
        for (int s = 0; s < segments; ++s) {
            double phi = 2.0 * M_PI * s / segments;
            mesh.vertices.push_back(radius * Vec3(std::sin(theta) * std::cos(phi),
                                                  std::sin(theta) * std::sin(phi),
                                                  std::cos(theta)));
        }
    }
    mesh.vertices.push_back(Vec3(0, 0, -radius));

    // u along longitude, v = 1 at the north pole; wrap column carries u = 1
    auto col_u = [&](int s) { return static_cast<double>(s) / segments; };
    auto row_v = [&](int r) { return 1.0 - static_cast<double>(r) / rings; };

    auto push_face = [&](int a, int b, int c, const Vec2& ua, const Vec2& ub,
                         const Vec2& uc) {
        mesh.faces.push_back({a, b, c});
        out.chart.face_uv.push_back({ua, ub, uc});
    };

    for (int s = 0; s < segments; ++s) {
        double u0 = col_u(s), u1 = (s + 1 == segments) ? 1.0 : col_u(s + 1);
        // pole corner takes the midpoint u so the UV triangle stays inside the strip
        push_face(north, idx(1, s), idx(1, s + 1), Vec2(0.5 * (u0 + u1), 1.0),
                  Vec2(u0, row_v(1)), Vec2(u1, row_v(1)));
    }
    for (int r = 1; r < rings - 1; ++r) {
        for (int s = 0; s < segments; ++s) {
            double u0 = col_u(s), u1 = (s + 1 == segments) ? 1.0 : col_u(s + 1);
            double v0 = row_v(r), v1 = row_v(r + 1);
            int a = idx(r, s), b = idx(r, s + 1), c = idx(r + 1, s), d = idx(r + 1, s + 1);
            push_face(a, c, b, Vec2(u0, v0), Vec2(u0, v1), Vec2(u1, v0));
            push_face(b, c, d, Vec2(u1, v0), Vec2(u0, v1), Vec2(u1, v1));
        }
    }
    for (int s = 0; s < segments; ++s) {
        double u0 = col_u(s), u1 = (s + 1 == segments) ? 1.0 : col_u(s + 1);
        push_face(south, idx(rings - 1, s + 1), idx(rings - 1, s),
                  Vec2(0.5 * (u0 + u1), 0.0), Vec2(u1, row_v(rings - 1)),
                  Vec2(u0, row_v(rings - 1)));
    }

    mesh.mirror_axis = 2;
    mesh.mirror_pair.assign(mesh.num_vertices(), -1);
    mesh.mirror_pair[north] = south;
    mesh.mirror_pair[south] = north;
    for (int r = 1; r < rings; ++r)
        for (int s = 0; s < segments; ++s)
            mesh.mirror_pair[idx(r, s)] = idx(rings - r, s);

    validate_mesh(mesh);
    out.chart.tex_h = tex_h;
    out.chart.tex_w = tex_w;
    build_texel_table(out.chart);
    return out;
}

/// Subdivided icosahedron on the unit sphere (no UV chart).
inline TriMesh make_icosphere(int subdivisions, double radius = 1.0) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> verts = {
        {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
        {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    for (auto& v : verts) v.normalize();
    std::vector<std::array<int, 3>> faces = {
        {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
        {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
        {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};

    for (int level = 0; level < subdivisions; ++level) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            Vec3 m = (verts[a] + verts[b]).normalized();
            verts.push_back(m);
            int id = static_cast<int>(verts.size()) - 1;
            midpoint[key] = id;
            return id;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(faces.size() * 4);
        for (const auto& f : faces) {
            int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({f[1], bc, ab});
            next.push_back({f[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        faces = std::move(next);
    }

    TriMesh mesh;
    mesh.vertices = std::move(verts);
    for (auto& v : mesh.vertices) v *= radius;
    mesh.faces = std::move(faces);
    validate_mesh(mesh);
    return mesh;
}

}  // namespace vmr
