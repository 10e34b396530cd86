#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "vmr/geometry.hpp"

namespace vmr {

using Vec4 = Eigen::Vector4d;

/// q stored as (w, x, y, z); must have norm > 1e-12.
inline Vec4 normalize_quaternion(const Vec4& raw) {
    double n = raw.norm();
    if (n < 1e-12) throw std::runtime_error("near-zero quaternion");
    return raw / n;
}

/// Pull a gradient w.r.t. the unit quaternion back through normalization.
inline Vec4 quaternion_normalize_backward(const Vec4& raw, const Vec4& d_unit) {
    double n = raw.norm();
    Vec4 q = raw / n;
    return (d_unit - q * q.dot(d_unit)) / n;
}

/// Rotate v by the unit quaternion q = (w, u).
inline Vec3 quat_rotate(const Vec4& q, const Vec3& v) {
    double w = q[0];
    Vec3 u = q.tail<3>();
    return v + 2.0 * w * u.cross(v) + 2.0 * u.cross(u.cross(v));
}

inline Mat3 quat_to_matrix(const Vec4& q) {
    Mat3 m;
    m.col(0) = quat_rotate(q, Vec3::UnitX());
    m.col(1) = quat_rotate(q, Vec3::UnitY());
    m.col(2) = quat_rotate(q, Vec3::UnitZ());
    return m;
}

inline Mat3 cross_matrix(const Vec3& v) {
    Mat3 m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

/// d(quat_rotate)/d(w) and d(quat_rotate)/d(u) for a unit quaternion,
/// using v' = v + 2w (u x v) + 2 (u (u.v) - v (u.u)).
inline void quat_rotate_jacobian(const Vec4& q, const Vec3& v, Vec3& d_w, Mat3& d_u) {
    double w = q[0];
    Vec3 u = q.tail<3>();
    d_w = 2.0 * u.cross(v);
    d_u = -2.0 * w * cross_matrix(v) +
          2.0 * (u.dot(v) * Mat3::Identity() + u * v.transpose() - 2.0 * v * u.transpose());
}

/// Weak perspective camera: theta = (s, tx, ty, qw, qx, qy, qz).
/// Projection drops z after rotation; image coordinates are NDC in [-1,1]^2
/// with y up.
struct WeakPerspectiveCamera {
    double scale = 1.0;
    Vec2 trans = Vec2::Zero();
    Vec4 quat = Vec4(1, 0, 0, 0);  // unit (w, x, y, z)

    static WeakPerspectiveCamera identity() { return {}; }

    Eigen::Matrix<double, 7, 1> params() const {
        Eigen::Matrix<double, 7, 1> p;
        p << scale, trans.x(), trans.y(), quat[0], quat[1], quat[2], quat[3];
        return p;
    }

    static WeakPerspectiveCamera from_params(const Eigen::Matrix<double, 7, 1>& p) {
        WeakPerspectiveCamera cam;
        cam.scale = p[0];
        cam.trans = Vec2(p[1], p[2]);
        cam.quat = normalize_quaternion(Vec4(p[3], p[4], p[5], p[6]));
        return cam;
    }
};

inline Vec2 project_point(const WeakPerspectiveCamera& cam, const Vec3& v) {
    Vec3 r = quat_rotate(cam.quat, v);
    return cam.scale * r.head<2>() + cam.trans;
}

/// Rotated z, used as depth by the z-buffer (larger z = nearer).
inline double camera_depth(const WeakPerspectiveCamera& cam, const Vec3& v) {
    return quat_rotate(cam.quat, v).z();
}

inline std::vector<Vec2> project_vertices(const WeakPerspectiveCamera& cam,
                                          const std::vector<Vec3>& verts) {
    std::vector<Vec2> out(verts.size());
    for (size_t i = 0; i < verts.size(); ++i) out[i] = project_point(cam, verts[i]);
    return out;
}

/// Gradient accumulator for the 7 camera parameters. d_quat is w.r.t. the
/// unit quaternion; chain through quaternion_normalize_backward for raw
/// parameters.
struct CameraGrad {
    double d_scale = 0.0;
    Vec2 d_trans = Vec2::Zero();
    Vec4 d_quat = Vec4::Zero();

    CameraGrad& operator+=(const CameraGrad& o) {
        d_scale += o.d_scale;
        d_trans += o.d_trans;
        d_quat += o.d_quat;
        return *this;
    }
};

/// Accumulate gradients of a scalar loss through p = s * drop_z(R v) + t,
/// given dL/dp. Adds into cam_grad and d_v.
inline void project_point_backward(const WeakPerspectiveCamera& cam, const Vec3& v,
                                   const Vec2& d_p, CameraGrad& cam_grad, Vec3& d_v) {
    Vec3 r = quat_rotate(cam.quat, v);
    cam_grad.d_scale += d_p.dot(r.head<2>());
    cam_grad.d_trans += d_p;
    // dL/dr, nonzero only in x,y
    Vec3 d_r(cam.scale * d_p.x(), cam.scale * d_p.y(), 0.0);
    Vec3 jw;
    Mat3 ju;
    quat_rotate_jacobian(cam.quat, v, jw, ju);
    cam_grad.d_quat[0] += d_r.dot(jw);
    cam_grad.d_quat.tail<3>() += ju.transpose() * d_r;
    d_v += quat_to_matrix(cam.quat).transpose() * d_r;
}

/// Same chain for a loss term on depth (rotated z) alone.
inline void camera_depth_backward(const WeakPerspectiveCamera& cam, const Vec3& v,
                                  double d_z, CameraGrad& cam_grad, Vec3& d_v) {
    Vec3 d_r(0.0, 0.0, d_z);
    Vec3 jw;
    Mat3 ju;
    quat_rotate_jacobian(cam.quat, v, jw, ju);
    cam_grad.d_quat[0] += d_r.dot(jw);
    cam_grad.d_quat.tail<3>() += ju.transpose() * d_r;
    d_v += quat_to_matrix(cam.quat).transpose() * d_r;
}

/// Canonical form for read-out and serialization: q_w >= 0. Never applied
/// inside the gradient path.
inline WeakPerspectiveCamera canonicalize(WeakPerspectiveCamera cam) {
    if (cam.quat[0] < 0) cam.quat = -cam.quat;
    return cam;
}

}  // namespace vmr
