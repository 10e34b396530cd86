#pragma once

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>

#include "vmr/geometry.hpp"
#include "vmr/synth_mesh.hpp"

namespace vmr::test {

inline TriMesh single_triangle() {
    TriMesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
    m.faces = {{0, 1, 2}};
    return m;
}

inline TriMesh tetrahedron() {
    TriMesh m;
    m.vertices = {Vec3(1, 1, 1), Vec3(1, -1, -1), Vec3(-1, 1, -1), Vec3(-1, -1, 1)};
    m.faces = {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
    return m;
}

inline TriMesh two_equilateral() {
    // edge (0,1) shared by two equilateral triangles in the plane
    TriMesh m;
    double h = std::sqrt(3.0) / 2.0;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0.5, h, 0), Vec3(0.5, -h, 0)};
    m.faces = {{0, 1, 2}, {0, 3, 1}};
    return m;
}

inline TriMesh icosahedron() { return make_icosphere(0, 1.0); }

inline std::vector<Vec3> jitter(const std::vector<Vec3>& verts, double amp, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-amp, amp);
    std::vector<Vec3> out = verts;
    for (auto& v : out) v += Vec3(u(rng), u(rng), u(rng));
    return out;
}

inline Mat3 random_rotation(uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Vector4d q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

/// Scratch directory under the system temp path, wiped on construction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& name) {
        path = std::filesystem::temp_directory_path() / name;
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    std::string str() const { return path.string(); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace vmr::test
