#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>
#include <stdexcept>
#include <vector>

#include "vmr/geometry.hpp"

namespace vmr {

struct ArapRotations {
    std::vector<Mat3> rotations;
    std::vector<int> degenerate;  // vertices whose covariance was rank-deficient
};

/// Best-fit per-vertex rotations mapping base edges onto deformed edges:
/// R_i = argmin_R sum_j w_ij | (V_i - V_j) - R (Vb_i - Vb_j) |^2,
/// via SVD of the weighted covariance with determinant sign correction.
inline ArapRotations best_rotations(const std::vector<Vec3>& base,
                                    const std::vector<Vec3>& deformed,
                                    const CotanWeights& weights) {
    if (base.size() != deformed.size())
        throw std::runtime_error("best_rotations: vertex count mismatch");
    const int nv = static_cast<int>(base.size());
    ArapRotations out;
    out.rotations.resize(nv);
    for (int i = 0; i < nv; ++i) {
        Mat3 cov = Mat3::Zero();
        for (const auto& [j, w] : weights.adjacency[i]) {
            Vec3 e = base[i] - base[j];
            Vec3 ep = deformed[i] - deformed[j];
            cov += w * e * ep.transpose();
        }
        Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
        if (svd.singularValues()(1) < 1e-12) {
            // rank < 2: rotation not identifiable, fall back to identity
            out.rotations[i] = Mat3::Identity();
            out.degenerate.push_back(i);
            continue;
        }
        Mat3 u = svd.matrixU();
        Mat3 v = svd.matrixV();
        Mat3 r = v * u.transpose();
        if (r.determinant() < 0) {
            u.col(2) *= -1.0;  // flip the smallest-singular-value column
            r = v * u.transpose();
        }
        out.rotations[i] = r;
    }
    return out;
}

/// Eq-style ARAP energy with squared residuals; each undirected edge is
/// counted from both endpoints.
inline double arap_energy_with_rotations(const std::vector<Vec3>& base,
                                         const std::vector<Vec3>& deformed,
                                         const CotanWeights& weights,
                                         const ArapRotations& rot) {
    const int nv = static_cast<int>(base.size());
    double total = 0.0;
    for (int i = 0; i < nv; ++i) {
        for (const auto& [j, w] : weights.adjacency[i]) {
            Vec3 e = base[i] - base[j];
            Vec3 ep = deformed[i] - deformed[j];
            total += w * (ep - rot.rotations[i] * e).squaredNorm();
        }
    }
    return total;
}

inline double arap_energy(const std::vector<Vec3>& base, const std::vector<Vec3>& deformed,
                          const CotanWeights& weights) {
    return arap_energy_with_rotations(base, deformed, weights,
                                      best_rotations(base, deformed, weights));
}

/// Gradient of arap_energy w.r.t. deformed and base vertices, with rotations
/// re-solved at the current point and then held fixed (local-global scheme).
/// Accumulates weight * grad into the output buffers.
inline double arap_energy_backward(const std::vector<Vec3>& base,
                                   const std::vector<Vec3>& deformed,
                                   const CotanWeights& weights, double weight,
                                   std::vector<Vec3>& d_deformed,
                                   std::vector<Vec3>& d_base) {
    const int nv = static_cast<int>(base.size());
    ArapRotations rot = best_rotations(base, deformed, weights);
    double total = 0.0;
    for (int i = 0; i < nv; ++i) {
        const Mat3& r = rot.rotations[i];
        for (const auto& [j, w] : weights.adjacency[i]) {
            Vec3 e = base[i] - base[j];
            Vec3 ep = deformed[i] - deformed[j];
            Vec3 resid = ep - r * e;
            total += w * resid.squaredNorm();
            Vec3 g = 2.0 * weight * w * resid;
            d_deformed[i] += g;
            d_deformed[j] -= g;
            Vec3 gb = r.transpose() * g;
            d_base[i] -= gb;
            d_base[j] += gb;
        }
    }
    return total;
}

/// One global ARAP step: solve the weighted Laplacian system for deformed
/// positions with rotations fixed. Used only as a solver sanity check (the
/// engine itself runs gradient descent). The translational null space is
/// pinned by matching the centroid of the input.
inline std::vector<Vec3> arap_global_step(const std::vector<Vec3>& base,
                                          const std::vector<Vec3>& deformed,
                                          const CotanWeights& weights) {
    const int nv = static_cast<int>(base.size());
    ArapRotations rot = best_rotations(base, deformed, weights);
    Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(nv, nv);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(nv, 3);
    for (int i = 0; i < nv; ++i) {
        for (const auto& [j, w] : weights.adjacency[i]) {
            lap(i, i) += w;
            lap(i, j) -= w;
            Vec3 b = 0.5 * w * (rot.rotations[i] + rot.rotations[j]) * (base[i] - base[j]);
            rhs.row(i) += b.transpose();
        }
    }
    // pin translation: add a small multiple of the all-ones rank-1 term
    lap.array() += 1.0 / nv;
    Vec3 centroid = Vec3::Zero();
    for (const auto& v : deformed) centroid += v;
    centroid /= nv;
    for (int i = 0; i < nv; ++i) rhs.row(i) += centroid.transpose();
    Eigen::MatrixXd sol = lap.ldlt().solve(rhs);
    std::vector<Vec3> out(nv);
    for (int i = 0; i < nv; ++i) out[i] = sol.row(i).transpose();
    return out;
}

}  // namespace vmr
