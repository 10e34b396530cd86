#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace vmr {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Triangle mesh with fixed topology. All meshes in one problem share faces.
struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;
    /// Optional left/right vertex pairing for the symmetry mode.
    /// mirror_pair[i] == j means i and j mirror each other across the
    /// symmetry plane; plane-fixed vertices pair with themselves.
    /// Empty when the topology carries no pairing.
    std::vector<int> mirror_pair;
    /// Axis index (0/1/2) of the mirror plane normal, valid when mirror_pair
    /// is nonempty.
    int mirror_axis = 2;

    int num_vertices() const { return static_cast<int>(vertices.size()); }
    int num_faces() const { return static_cast<int>(faces.size()); }
};

/// Point on the mesh surface: face index + barycentric coordinates.
struct SurfacePoint {
    int face = -1;
    Vec3 bary = Vec3::Zero();
};

inline void validate_mesh(const TriMesh& mesh) {
    const int nv = mesh.num_vertices();
    std::map<std::pair<int, int>, int> edge_count;
    for (int f = 0; f < mesh.num_faces(); ++f) {
        const auto& face = mesh.faces[f];
        for (int k = 0; k < 3; ++k) {
            if (face[k] < 0 || face[k] >= nv)
                throw std::runtime_error("face " + std::to_string(f) +
                                         " references vertex " + std::to_string(face[k]) +
                                         " out of range");
        }
        if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2])
            throw std::runtime_error("degenerate face " + std::to_string(f));
        for (int k = 0; k < 3; ++k) {
            int a = face[k], b = face[(k + 1) % 3];
            if (a > b) std::swap(a, b);
            edge_count[{a, b}]++;
        }
    }
    for (const auto& [edge, count] : edge_count) {
        if (count > 2)
            throw std::runtime_error("edge (" + std::to_string(edge.first) + "," +
                                     std::to_string(edge.second) +
                                     ") shared by more than 2 faces");
    }
}

/// Vertices sharing an edge with vertex i.
inline std::set<int> one_ring(const TriMesh& mesh, int i) {
    if (i < 0 || i >= mesh.num_vertices())
        throw std::out_of_range("one_ring: vertex index out of range");
    std::set<int> ring;
    for (const auto& face : mesh.faces) {
        for (int k = 0; k < 3; ++k) {
            if (face[k] == i) {
                ring.insert(face[(k + 1) % 3]);
                ring.insert(face[(k + 2) % 3]);
            }
        }
    }
    ring.erase(i);
    return ring;
}

/// Neighbor lists for every vertex, built in one sweep.
inline std::vector<std::vector<int>> vertex_rings(const TriMesh& mesh) {
    std::vector<std::set<int>> rings(mesh.num_vertices());
    for (const auto& face : mesh.faces) {
        for (int k = 0; k < 3; ++k) {
            int a = face[k], b = face[(k + 1) % 3];
            rings[a].insert(b);
            rings[b].insert(a);
        }
    }
    std::vector<std::vector<int>> out(mesh.num_vertices());
    for (int i = 0; i < mesh.num_vertices(); ++i)
        out[i].assign(rings[i].begin(), rings[i].end());
    return out;
}

/// Symmetric cotangent weight table, w_ij = 0.5 (cot a + cot b) over the
/// angles opposite edge (i,j). Negative weights are clamped to 0.
struct CotanWeights {
    int num_vertices = 0;
    // adjacency[i] holds (j, w_ij) sorted by j
    std::vector<std::vector<std::pair<int, double>>> adjacency;

    double weight(int i, int j) const {
        for (const auto& [k, w] : adjacency[i])
            if (k == j) return w;
        return 0.0;
    }
};

inline CotanWeights cotangent_weights(const TriMesh& mesh) {
    const int nv = mesh.num_vertices();
    std::map<std::pair<int, int>, double> acc;
    for (int f = 0; f < mesh.num_faces(); ++f) {
        const auto& face = mesh.faces[f];
        const Vec3& p0 = mesh.vertices[face[0]];
        const Vec3& p1 = mesh.vertices[face[1]];
        const Vec3& p2 = mesh.vertices[face[2]];
        double area2 = (p1 - p0).cross(p2 - p0).norm();
        if (area2 < 1e-14)
            throw std::runtime_error("degenerate (zero-area) face " + std::to_string(f));
        for (int k = 0; k < 3; ++k) {
            // angle at vertex k is opposite edge (k+1, k+2)
            int ia = face[(k + 1) % 3], ib = face[(k + 2) % 3];
            const Vec3& apex = mesh.vertices[face[k]];
            Vec3 u = mesh.vertices[ia] - apex;
            Vec3 v = mesh.vertices[ib] - apex;
            double cot = u.dot(v) / u.cross(v).norm();
            int a = ia, b = ib;
            if (a > b) std::swap(a, b);
            acc[{a, b}] += 0.5 * cot;
        }
    }
    CotanWeights out;
    out.num_vertices = nv;
    out.adjacency.resize(nv);
    for (const auto& [edge, w] : acc) {
        double wc = std::max(w, 0.0);
        out.adjacency[edge.first].push_back({edge.second, wc});
        out.adjacency[edge.second].push_back({edge.first, wc});
    }
    for (auto& row : out.adjacency)
        std::sort(row.begin(), row.end());
    return out;
}

/// Mean squared norm of uniform-Laplacian vectors d_i = v_i - mean(one-ring).
inline double laplacian_smoothness(const std::vector<Vec3>& verts,
                                   const std::vector<std::vector<int>>& rings) {
    const int nv = static_cast<int>(verts.size());
    double total = 0.0;
    for (int i = 0; i < nv; ++i) {
        if (rings[i].empty())
            throw std::runtime_error("isolated vertex " + std::to_string(i));
        Vec3 mean = Vec3::Zero();
        for (int j : rings[i]) mean += verts[j];
        mean /= static_cast<double>(rings[i].size());
        total += (verts[i] - mean).squaredNorm();
    }
    return total / nv;
}

/// Gradient of laplacian_smoothness w.r.t. the vertex positions, accumulated
/// into grad (scaled by weight).
inline void laplacian_smoothness_backward(const std::vector<Vec3>& verts,
                                          const std::vector<std::vector<int>>& rings,
                                          double weight,
                                          std::vector<Vec3>& grad) {
    const int nv = static_cast<int>(verts.size());
    const double scale = 2.0 * weight / nv;
    for (int i = 0; i < nv; ++i) {
        const double inv_deg = 1.0 / rings[i].size();
        Vec3 mean = Vec3::Zero();
        for (int j : rings[i]) mean += verts[j];
        mean *= inv_deg;
        Vec3 d = verts[i] - mean;
        grad[i] += scale * d;
        for (int j : rings[i]) grad[j] -= scale * inv_deg * d;
    }
}

/// Fixed UV parameterization: one UV triangle per face, coordinates in [0,1]^2.
struct UvChart {
    int tex_h = 0;
    int tex_w = 0;
    std::vector<std::array<Vec2, 3>> face_uv;

    // texel-center -> surface lookup, built lazily by build_texel_table
    std::vector<SurfacePoint> texel_table;

    bool has_texel_table() const { return !texel_table.empty(); }
    const SurfacePoint& texel(int row, int col) const {
        return texel_table[row * tex_w + col];
    }
};

inline Vec3 uv_barycentric(const std::array<Vec2, 3>& tri, const Vec2& p) {
    Vec2 e0 = tri[1] - tri[0];
    Vec2 e1 = tri[2] - tri[0];
    double det = e0.x() * e1.y() - e0.y() * e1.x();
    if (std::abs(det) < 1e-16) return Vec3(-1, -1, -1);
    Vec2 d = p - tri[0];
    double b1 = (d.x() * e1.y() - d.y() * e1.x()) / det;
    double b2 = (e0.x() * d.y() - e0.y() * d.x()) / det;
    return Vec3(1.0 - b1 - b2, b1, b2);
}

/// Locate a UV point inside the chart. Throws if no UV triangle covers it.
inline SurfacePoint uv_to_surface(const UvChart& chart, const Vec2& uv) {
    constexpr double eps = 1e-9;
    for (int f = 0; f < static_cast<int>(chart.face_uv.size()); ++f) {
        Vec3 b = uv_barycentric(chart.face_uv[f], uv);
        if (b.minCoeff() >= -eps) {
            b = b.cwiseMax(0.0);
            b /= b.sum();
            return SurfacePoint{f, b};
        }
    }
    throw std::runtime_error("uncharted texel: uv (" + std::to_string(uv.x()) + "," +
                             std::to_string(uv.y()) + ") outside all UV triangles");
}

/// 3D position of a surface point on the given vertex positions.
inline Vec3 surface_position(const std::vector<Vec3>& verts,
                             const std::vector<std::array<int, 3>>& faces,
                             const SurfacePoint& p) {
    if (p.face < 0 || p.face >= static_cast<int>(faces.size()))
        throw std::out_of_range("surface_position: face index out of range");
    const auto& f = faces[p.face];
    return p.bary[0] * verts[f[0]] + p.bary[1] * verts[f[1]] + p.bary[2] * verts[f[2]];
}

inline Vec3 surface_position(const TriMesh& mesh, const SurfacePoint& p) {
    return surface_position(mesh.vertices, mesh.faces, p);
}

/// UV coordinates of a texel center.
inline Vec2 texel_center_uv(const UvChart& chart, int row, int col) {
    return Vec2((col + 0.5) / chart.tex_w, (row + 0.5) / chart.tex_h);
}

/// Precompute the texel-center -> SurfacePoint table. Uncharted texels get
/// face = -1 and are excluded from aggregation by callers.
inline void build_texel_table(UvChart& chart) {
    chart.texel_table.assign(static_cast<size_t>(chart.tex_h) * chart.tex_w, SurfacePoint{});
    constexpr double eps = 1e-9;
    for (int r = 0; r < chart.tex_h; ++r) {
        for (int c = 0; c < chart.tex_w; ++c) {
            Vec2 uv = texel_center_uv(chart, r, c);
            for (int f = 0; f < static_cast<int>(chart.face_uv.size()); ++f) {
                Vec3 b = uv_barycentric(chart.face_uv[f], uv);
                if (b.minCoeff() >= -eps) {
                    b = b.cwiseMax(0.0);
                    b /= b.sum();
                    chart.texel_table[r * chart.tex_w + c] = SurfacePoint{f, b};
                    break;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Wavefront OBJ I/O (v / vt / f records, 1-based indices)

struct ObjData {
    TriMesh mesh;
    UvChart chart;       // face_uv filled only when the file carries vt records
    bool has_uv = false;
};

inline ObjData load_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open OBJ file: " + path);
    ObjData out;
    std::vector<Vec2> uvs;
    std::vector<std::array<int, 3>> face_uv_idx;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "v") {
            double x, y, z;
            if (!(ss >> x >> y >> z))
                throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                         ": malformed vertex line");
            out.mesh.vertices.push_back(Vec3(x, y, z));
        } else if (tag == "vt") {
            double u, v;
            if (!(ss >> u >> v))
                throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                         ": malformed vt line");
            uvs.push_back(Vec2(u, v));
        } else if (tag == "f") {
            std::vector<int> vi, ti;
            std::string tok;
            while (ss >> tok) {
                int v = 0, t = 0;
                size_t slash = tok.find('/');
                if (slash == std::string::npos) {
                    v = std::stoi(tok);
                } else {
                    v = std::stoi(tok.substr(0, slash));
                    std::string rest = tok.substr(slash + 1);
                    size_t slash2 = rest.find('/');
                    std::string tpart = slash2 == std::string::npos ? rest : rest.substr(0, slash2);
                    if (!tpart.empty()) t = std::stoi(tpart);
                }
                vi.push_back(v);
                ti.push_back(t);
            }
            if (vi.size() != 3)
                throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                         ": non-triangle face (" + std::to_string(vi.size()) +
                                         " vertices)");
            std::array<int, 3> face{}, tface{};
            for (int k = 0; k < 3; ++k) {
                face[k] = vi[k] - 1;
                tface[k] = ti[k] - 1;
            }
            out.mesh.faces.push_back(face);
            face_uv_idx.push_back(tface);
        }
    }
    validate_mesh(out.mesh);
    bool all_have_uv = !uvs.empty();
    for (const auto& tf : face_uv_idx)
        for (int k = 0; k < 3; ++k)
            if (tf[k] < 0 || tf[k] >= static_cast<int>(uvs.size())) all_have_uv = false;
    if (all_have_uv) {
        out.has_uv = true;
        out.chart.face_uv.resize(out.mesh.num_faces());
        for (int f = 0; f < out.mesh.num_faces(); ++f)
            for (int k = 0; k < 3; ++k)
                out.chart.face_uv[f][k] = uvs[face_uv_idx[f][k]];
    }
    return out;
}

inline void save_obj(const std::string& path, const TriMesh& mesh,
                     const UvChart* chart = nullptr) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write OBJ file: " + path);
    out.precision(12);
    for (const auto& v : mesh.vertices)
        out << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
    if (chart) {
        for (const auto& tri : chart->face_uv)
            for (const auto& uv : tri)
                out << "vt " << uv.x() << " " << uv.y() << "\n";
        for (int f = 0; f < mesh.num_faces(); ++f) {
            out << "f";
            for (int k = 0; k < 3; ++k)
                out << " " << mesh.faces[f][k] + 1 << "/" << 3 * f + k + 1;
            out << "\n";
        }
    } else {
        for (const auto& face : mesh.faces)
            out << "f " << face[0] + 1 << " " << face[1] + 1 << " " << face[2] + 1 << "\n";
    }
}

}  // namespace vmr
