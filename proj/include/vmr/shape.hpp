#pragma once

#include <Eigen/Core>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "vmr/camera.hpp"
#include "vmr/geometry.hpp"
#include "vmr/image.hpp"

namespace vmr {

/// The N_b basis vertex arrays, all sharing the problem topology.
struct ShapeBasisSet {
    std::vector<std::vector<Vec3>> bases;

    int count() const { return static_cast<int>(bases.size()); }
    int num_vertices() const { return bases.empty() ? 0 : static_cast<int>(bases[0].size()); }
};

/// Per-frame shape parameters: basis logits and free deformation offsets.
struct ShapeParams {
    Eigen::VectorXd beta;        // N_b logits, passed through softmax
    std::vector<Vec3> delta_v;   // |V| x 3

    static ShapeParams zeros(int n_bases, int n_verts) {
        ShapeParams p;
        p.beta = Eigen::VectorXd::Zero(n_bases);
        p.delta_v.assign(n_verts, Vec3::Zero());
        return p;
    }
};

inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
    return e / e.sum();
}

struct ComposedShape {
    std::vector<Vec3> vertices;       // V = V_base + delta_v
    std::vector<Vec3> base_vertices;  // V_base = sum softmax(beta)_i * V_i
    Eigen::VectorXd weights;          // softmax(beta)
};

/// V_base = sum_i softmax(beta)_i V_i ; V = V_base + delta_v.
inline ComposedShape compose_shape(const ShapeBasisSet& bases, const ShapeParams& params) {
    if (params.beta.size() != bases.count())
        throw std::runtime_error("compose_shape: beta size != basis count");
    const int nv = bases.num_vertices();
    if (static_cast<int>(params.delta_v.size()) != nv)
        throw std::runtime_error("compose_shape: delta_v size != vertex count");
    ComposedShape out;
    out.weights = softmax(params.beta);
    out.base_vertices.assign(nv, Vec3::Zero());
    for (int b = 0; b < bases.count(); ++b) {
        double w = out.weights[b];
        for (int i = 0; i < nv; ++i) out.base_vertices[i] += w * bases.bases[b][i];
    }
    out.vertices.resize(nv);
    for (int i = 0; i < nv; ++i) out.vertices[i] = out.base_vertices[i] + params.delta_v[i];
    return out;
}

/// Chain gradients w.r.t. V and V_base back to (beta, delta_v).
/// d_vertices feeds both delta_v and the base; d_base_extra carries terms that
/// touch V_base only (ARAP, base-shape swap).
inline void compose_shape_backward(const ShapeBasisSet& bases, const ComposedShape& composed,
                                   const std::vector<Vec3>& d_vertices,
                                   const std::vector<Vec3>& d_base_extra,
                                   Eigen::VectorXd& d_beta, std::vector<Vec3>& d_delta_v) {
    const int nv = bases.num_vertices();
    const int nb = bases.count();
    Eigen::VectorXd d_w = Eigen::VectorXd::Zero(nb);
    for (int i = 0; i < nv; ++i) {
        Vec3 d_base = d_vertices[i] + d_base_extra[i];
        d_delta_v[i] += d_vertices[i];
        for (int b = 0; b < nb; ++b) d_w[b] += d_base.dot(bases.bases[b][i]);
    }
    // softmax Jacobian: d_beta_k = w_k (d_w_k - sum_j w_j d_w_j)
    const Eigen::VectorXd& w = composed.weights;
    double dot = w.dot(d_w);
    d_beta += (w.array() * (d_w.array() - dot)).matrix();
}

// ---------------------------------------------------------------------------
// K-Means basis extraction (Lloyd's algorithm on flattened 3|V| vectors,
// k-means++ style seeding)

namespace detail {
inline Eigen::VectorXd flatten(const std::vector<Vec3>& verts) {
    Eigen::VectorXd v(3 * verts.size());
    for (size_t i = 0; i < verts.size(); ++i) v.segment<3>(3 * i) = verts[i];
    return v;
}
inline std::vector<Vec3> unflatten(const Eigen::VectorXd& v) {
    std::vector<Vec3> out(v.size() / 3);
    for (size_t i = 0; i < out.size(); ++i) out[i] = v.segment<3>(3 * i);
    return out;
}
}  // namespace detail

inline ShapeBasisSet kmeans_bases(const std::vector<std::vector<Vec3>>& meshes, int n_bases,
                                  uint64_t seed, int max_iters = 100) {
    const int m = static_cast<int>(meshes.size());
    if (m < n_bases)
        throw std::runtime_error("kmeans_bases: fewer meshes than requested bases");
    for (const auto& mesh : meshes)
        if (mesh.size() != meshes[0].size())
            throw std::runtime_error("kmeans_bases: meshes do not share topology");

    std::vector<Eigen::VectorXd> points(m);
    for (int i = 0; i < m; ++i) points[i] = detail::flatten(meshes[i]);

    std::mt19937_64 rng(seed);
    std::vector<Eigen::VectorXd> centers;
    // k-means++ seeding
    {
        std::uniform_int_distribution<int> first(0, m - 1);
        centers.push_back(points[first(rng)]);
        std::vector<double> d2(m);
        while (static_cast<int>(centers.size()) < n_bases) {
            double total = 0.0;
            for (int i = 0; i < m; ++i) {
                double best = std::numeric_limits<double>::max();
                for (const auto& c : centers)
                    best = std::min(best, (points[i] - c).squaredNorm());
                d2[i] = best;
                total += best;
            }
            int pick = 0;
            if (total > 0) {
                std::uniform_real_distribution<double> u(0.0, total);
                double r = u(rng), acc = 0.0;
                for (int i = 0; i < m; ++i) {
                    acc += d2[i];
                    if (acc >= r) { pick = i; break; }
                }
            } else {
                std::uniform_int_distribution<int> any(0, m - 1);
                pick = any(rng);
            }
            centers.push_back(points[pick]);
        }
    }

    std::vector<int> assign(m, -1);
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (int i = 0; i < m; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::max();
            for (int c = 0; c < n_bases; ++c) {
                double d = (points[i] - centers[c]).squaredNorm();
                if (d < best_d) { best_d = d; best = c; }
            }
            if (assign[i] != best) { assign[i] = best; changed = true; }
        }
        if (!changed && iter > 0) break;
        std::vector<Eigen::VectorXd> sums(n_bases,
                                          Eigen::VectorXd::Zero(points[0].size()));
        std::vector<int> counts(n_bases, 0);
        for (int i = 0; i < m; ++i) {
            sums[assign[i]] += points[i];
            counts[assign[i]]++;
        }
        for (int c = 0; c < n_bases; ++c) {
            if (counts[c] == 0) {
                // re-seed an empty cluster from the farthest point
                int far = 0;
                double far_d = -1.0;
                for (int i = 0; i < m; ++i) {
                    double d = (points[i] - centers[assign[i]]).squaredNorm();
                    if (d > far_d) { far_d = d; far = i; }
                }
                centers[c] = points[far];
            } else {
                centers[c] = sums[c] / counts[c];
            }
        }
    }

    ShapeBasisSet out;
    for (const auto& c : centers) out.bases.push_back(detail::unflatten(c));
    return out;
}

/// Sum of squared distances to assigned centers; exposed for the
/// non-increasing-objective property test.
inline double kmeans_objective(const std::vector<std::vector<Vec3>>& meshes,
                               const ShapeBasisSet& bases) {
    double total = 0.0;
    for (const auto& mesh : meshes) {
        Eigen::VectorXd p = detail::flatten(mesh);
        double best = std::numeric_limits<double>::max();
        for (const auto& b : bases.bases)
            best = std::min(best, (p - detail::flatten(b)).squaredNorm());
        total += best;
    }
    return total;
}

/// All optimizable parameters of one video frame.
struct FrameState {
    WeakPerspectiveCamera camera;
    ShapeParams shape;
    Image texture_flow;  // H_uv x W_uv x 2, NDC image coordinates in [-1,1]^2

    void clamp_flow() {
        for (double& v : texture_flow.data) v = std::clamp(v, -1.0, 1.0);
    }
};

/// Project a deformation field onto the mirror-symmetric subspace defined by
/// the topology's pairing table. Idempotent by construction.
inline std::vector<Vec3> mirror_symmetrize(const std::vector<Vec3>& delta_v,
                                           const std::vector<int>& pairing, int axis) {
    if (pairing.size() != delta_v.size())
        throw std::runtime_error("mirror_symmetrize: missing or mismatched pairing table");
    std::vector<Vec3> out(delta_v.size());
    for (size_t i = 0; i < delta_v.size(); ++i) {
        int j = pairing[i];
        Vec3 mirrored = delta_v[j];
        mirrored[axis] = -mirrored[axis];
        out[i] = 0.5 * (delta_v[i] + mirrored);
    }
    return out;
}

}  // namespace vmr
