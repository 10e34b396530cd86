#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "vmr/adaptation.hpp"
#include "vmr/camera.hpp"
#include "vmr/geometry.hpp"
#include "vmr/image.hpp"
#include "vmr/losses.hpp"
#include "vmr/render.hpp"
#include "vmr/shape.hpp"
#include "vmr/synth_mesh.hpp"

namespace vmr {

// ---------------------------------------------------------------------------
// Metrics

/// Jaccard index on masks thresholded at 0.5; both empty -> 1.
inline double mask_iou(const Image& pred, const Image& gt) {
    if (!pred.same_shape(gt)) throw std::runtime_error("mask_iou: shape mismatch");
    long inter = 0, uni = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        bool a = pred.data[i] >= 0.5, b = gt.data[i] >= 0.5;
        inter += (a && b);
        uni += (a || b);
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

namespace detail {
/// Boundary pixels of a thresholded mask: foreground with a 4-neighbor
/// background (image border counts as background).
inline std::vector<Vec2> mask_boundary(const Image& mask) {
    std::vector<Vec2> out;
    auto fg = [&](int r, int c) {
        if (r < 0 || r >= mask.h || c < 0 || c >= mask.w) return false;
        return mask.at(r, c) >= 0.5;
    };
    for (int r = 0; r < mask.h; ++r)
        for (int c = 0; c < mask.w; ++c) {
            if (!fg(r, c)) continue;
            if (!fg(r - 1, c) || !fg(r + 1, c) || !fg(r, c - 1) || !fg(r, c + 1))
                out.push_back(Vec2(c, r));
        }
    return out;
}

inline double boundary_match_fraction(const std::vector<Vec2>& from,
                                      const std::vector<Vec2>& to, double tol) {
    if (from.empty()) return 0.0;
    int matched = 0;
    double tol2 = tol * tol;
    for (const auto& p : from) {
        for (const auto& q : to) {
            if ((p - q).squaredNorm() <= tol2) {
                ++matched;
                break;
            }
        }
    }
    return static_cast<double>(matched) / from.size();
}
}  // namespace detail

/// Boundary F-measure with hard pixel-distance matching. tolerance_px < 0
/// selects the default of 1 px at 64x64, scaled with resolution.
inline double contour_f(const Image& pred, const Image& gt, double tolerance_px = -1.0) {
    if (!pred.same_shape(gt)) throw std::runtime_error("contour_f: shape mismatch");
    if (tolerance_px < 0) tolerance_px = std::max(pred.h, pred.w) / 64.0;
    std::vector<Vec2> bp = detail::mask_boundary(pred);
    std::vector<Vec2> bg = detail::mask_boundary(gt);
    if (bp.empty() && bg.empty()) return 1.0;
    double precision = detail::boundary_match_fraction(bp, bg, tolerance_px);
    double recall = detail::boundary_match_fraction(bg, bp, tolerance_px);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

/// Fraction of visible keypoints within alpha * gt-bbox-diagonal.
inline double pck(const std::vector<Vec2>& pred, const KeypointSet& gt,
                  double alpha = 0.1) {
    int visible = 0;
    Vec2 lo(std::numeric_limits<double>::max(), std::numeric_limits<double>::max());
    Vec2 hi = -lo;
    for (int i = 0; i < gt.count(); ++i) {
        if (!gt.visible[i]) continue;
        ++visible;
        lo = lo.cwiseMin(gt.points[i]);
        hi = hi.cwiseMax(gt.points[i]);
    }
    if (visible == 0) throw std::runtime_error("pck: zero visible keypoints");
    double thresh = alpha * (hi - lo).norm();
    int ok = 0;
    for (int i = 0; i < gt.count(); ++i) {
        if (!gt.visible[i]) continue;
        if ((pred[i] - gt.points[i]).norm() <= thresh) ++ok;
    }
    return static_cast<double>(ok) / visible;
}

/// Symmetric mean squared nearest-neighbor distance between vertex sets.
inline double chamfer_3d(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    if (a.empty() || b.empty()) throw std::runtime_error("chamfer_3d: empty point set");
    double fwd = 0.0, bwd = 0.0;
    for (const auto& p : a) {
        double best = std::numeric_limits<double>::max();
        for (const auto& q : b) best = std::min(best, (p - q).squaredNorm());
        fwd += best;
    }
    for (const auto& q : b) {
        double best = std::numeric_limits<double>::max();
        for (const auto& p : a) best = std::min(best, (p - q).squaredNorm());
        bwd += best;
    }
    return fwd / a.size() + bwd / b.size();
}

// ---------------------------------------------------------------------------
// Synthetic animated sequence with full ground truth

struct SynthConfig {
    int frames = 60;
    int res = 64;
    int tex_res = 64;
    int rings = 8;
    int segments = 12;
    int n_bases = 4;
    int num_parts = 6;
    int num_keypoints = 15;
    double mask_noise = 0.0;  // per-pixel label flip probability
};

struct SyntheticVideo {
    VideoProblem problem;
    std::vector<std::vector<Vec3>> gt_vertices;  // per frame, canonical frame
    std::vector<WeakPerspectiveCamera> gt_cameras;
    std::vector<Image> gt_flows;   // per frame, H_uv x W_uv x 2
    std::vector<Image> gt_masks;   // noise-free
    std::vector<SurfacePoint> gt_keypoints;  // canonical surface points
    Image gt_texture;              // canonical UV appearance
    std::vector<ShapeParams> gt_params;
};

namespace detail {

inline Vec4 quat_from_axis_angle(const Vec3& axis, double angle) {
    Vec3 a = axis.normalized();
    return Vec4(std::cos(angle / 2), a.x() * std::sin(angle / 2),
                a.y() * std::sin(angle / 2), a.z() * std::sin(angle / 2));
}

inline Vec4 quat_mul(const Vec4& a, const Vec4& b) {
    double w1 = a[0], w2 = b[0];
    Vec3 u1 = a.tail<3>(), u2 = b.tail<3>();
    Vec4 out;
    out[0] = w1 * w2 - u1.dot(u2);
    out.tail<3>() = w1 * u2 + w2 * u1 + u1.cross(u2);
    return out;
}

/// Asymmetric blob: anisotropically squashed sphere plus a smooth bump.
inline Vec3 blob_deform(const Vec3& p) {
    Vec3 q(0.85 * p.x(), 0.6 * p.y(), 0.7 * p.z());
    q.x() += 0.07 * std::max(0.0, p.z()) * p.z();  // breaks the z symmetry
    q.y() += 0.04 * std::sin(3.0 * p.x());
    return q;
}

}  // namespace detail

/// Seeded, fully deterministic synthetic video. The template is a UV-charted
/// lat-long sphere deformed into a blob; the animation mixes the basis set
/// over time, adds bounded asymmetric deformation, and rotates the camera.
inline SyntheticVideo make_synthetic_video(uint64_t seed, const SynthConfig& cfg) {
    if (cfg.frames < 1) throw std::runtime_error("make_synthetic_video: frames < 1");
    std::mt19937_64 rng(seed);
    SyntheticVideo out;
    VideoProblem& prob = out.problem;

    SphereTemplate tpl = make_uv_sphere(cfg.rings, cfg.segments, 0.7, cfg.tex_res,
                                        cfg.tex_res);
    for (auto& v : tpl.mesh.vertices) v = detail::blob_deform(v / 0.7) * 0.7;
    prob.mesh = tpl.mesh;
    prob.chart = tpl.chart;
    prob.num_parts = cfg.num_parts;
    prob.raster.h = cfg.res;
    prob.raster.w = cfg.res;
    const int nv = prob.mesh.num_vertices();

    // basis set: the blob stretched along seeded random directions
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int b = 0; b < cfg.n_bases; ++b) {
        // bias stretch axes toward the image plane so basis differences show
        // up in silhouettes under the limited camera rotation range
        Vec3 axis(unit(rng), unit(rng), 0.35 * unit(rng));
        if (axis.norm() < 0.2) axis = Vec3(1, 0, 0);
        axis.normalize();
        double amp = 0.55 + 0.2 * unit(rng);
        double bend = 0.18 * unit(rng);
        std::vector<Vec3> basis(nv);
        for (int i = 0; i < nv; ++i) {
            const Vec3& v = prob.mesh.vertices[i];
            basis[i] = v + amp * v.dot(axis) * axis;
            basis[i].x() += bend * v.z() * v.z();
        }
        prob.bases.bases.push_back(basis);
    }

    // canonical appearance: high-frequency procedural UV texture
    out.gt_texture = Image(cfg.tex_res, cfg.tex_res, 3);
    for (int r = 0; r < cfg.tex_res; ++r)
        for (int c = 0; c < cfg.tex_res; ++c) {
            double u = (c + 0.5) / cfg.tex_res, v = (r + 0.5) / cfg.tex_res;
            out.gt_texture.at(r, c, 0) =
                0.5 + 0.5 * std::sin(2.0 * M_PI * 3.0 * u) * std::cos(2.0 * M_PI * 2.0 * v);
            out.gt_texture.at(r, c, 1) = 0.2 + 0.8 * u;
            out.gt_texture.at(r, c, 2) = 0.2 + 0.8 * v;
        }

    // vertex part labels: 3 bands along z x sign of y
    std::vector<int> vertex_part(nv);
    {
        std::vector<double> zs(nv);
        for (int i = 0; i < nv; ++i) zs[i] = prob.mesh.vertices[i].z();
        std::vector<double> sorted = zs;
        std::sort(sorted.begin(), sorted.end());
        double z1 = sorted[nv / 3], z2 = sorted[2 * nv / 3];
        for (int i = 0; i < nv; ++i) {
            int band = zs[i] < z1 ? 0 : (zs[i] < z2 ? 1 : 2);
            vertex_part[i] = 1 + band * 2 + (prob.mesh.vertices[i].y() >= 0 ? 0 : 1);
        }
    }

    // canonical keypoints: evenly spread over the charted texels
    {
        // restrict to the chart half that faces the camera: under the bounded
        // rotation range the opposite polar cap is never observed
        std::vector<std::pair<int, int>> charted;
        for (int r = prob.chart.tex_h / 2; r < prob.chart.tex_h; ++r)
            for (int c = 0; c < prob.chart.tex_w; ++c)
                if (prob.chart.texel(r, c).face >= 0) charted.push_back({r, c});
        for (int k = 0; k < cfg.num_keypoints; ++k) {
            size_t pick = static_cast<size_t>((k + 0.5) / cfg.num_keypoints * charted.size());
            out.gt_keypoints.push_back(
                prob.chart.texel(charted[pick].first, charted[pick].second));
        }
    }

    // Instance identity: a peaked basis mixture held nearly constant over the
    // video (mild oscillation); most per-frame motion lives in delta_v.
    std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
    Eigen::VectorXd beta_logits(cfg.n_bases);
    {
        std::uniform_int_distribution<int> pick(0, cfg.n_bases - 1);
        int dominant = pick(rng);
        for (int b = 0; b < cfg.n_bases; ++b)
            beta_logits[b] = (b == dominant ? 3.0 : 0.0) + 0.6 * unit(rng);
    }
    double cam_phase = phase(rng);
    std::vector<double> beta_phase(cfg.n_bases);
    for (int b = 0; b < cfg.n_bases; ++b) beta_phase[b] = phase(rng);

    std::mt19937_64 noise_rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    for (int t = 0; t < cfg.frames; ++t) {
        double tau = cfg.frames > 1 ? static_cast<double>(t) / cfg.frames : 0.0;

        ShapeParams params = ShapeParams::zeros(cfg.n_bases, nv);
        params.beta = beta_logits;
        for (int b = 0; b < cfg.n_bases; ++b)
            params.beta[b] += 0.1 * std::sin(2.0 * M_PI * tau + beta_phase[b]);
        for (int i = 0; i < nv; ++i) {
            const Vec3& v = prob.mesh.vertices[i];
            double wave = std::sin(2.0 * M_PI * 2.0 * tau + 3.0 * v.z() + v.x());
            params.delta_v[i] = 0.03 * wave * Vec3(0.4, 0.8, 0.5);
        }
        ComposedShape composed = compose_shape(prob.bases, params);

        WeakPerspectiveCamera cam;
        cam.scale = 1.0 + 0.08 * std::sin(2.0 * M_PI * tau + cam_phase);
        cam.trans = Vec2(0.06 * std::sin(2.0 * M_PI * tau),
                         0.05 * std::cos(2.0 * M_PI * tau + 1.0));
        double yaw = 0.6 * std::sin(2.0 * M_PI * tau + cam_phase);
        double pitch = 0.3 * std::sin(4.0 * M_PI * tau + 1.0);
        cam.quat = normalize_quaternion(
            detail::quat_mul(detail::quat_from_axis_angle(Vec3(0, 0, 1), yaw),
                             detail::quat_from_axis_angle(Vec3(1, 0, 0), pitch)));

        std::vector<Vec2> v2(nv);
        std::vector<double> depth(nv);
        for (int i = 0; i < nv; ++i) {
            Vec3 r = quat_rotate(cam.quat, composed.vertices[i]);
            v2[i] = cam.scale * r.head<2>() + cam.trans;
            depth[i] = r.z();
        }
        TextureRender vis =
            rasterize_visibility(v2, depth, prob.mesh.faces, cfg.res, cfg.res);
        shade(vis, prob.chart, out.gt_texture);

        Image mask(cfg.res, cfg.res, 1, 0.0);
        Image parts(cfg.res, cfg.res, 1, 0.0);
        for (int r = 0; r < cfg.res; ++r)
            for (int c = 0; c < cfg.res; ++c) {
                const auto& hit = vis.hits[r * cfg.res + c];
                if (hit.face < 0) continue;
                mask.at(r, c) = 1.0;
                int k = 0;
                if (hit.bary[1] > hit.bary[k]) k = 1;
                if (hit.bary[2] > hit.bary[k]) k = 2;
                parts.at(r, c) = vertex_part[prob.mesh.faces[hit.face][k]];
            }

        Image noisy = mask;
        if (cfg.mask_noise > 0.0) {
            for (double& v : noisy.data)
                if (coin(noise_rng) < cfg.mask_noise) v = 1.0 - v;
        }

        // ground-truth texture flow: projection of every charted texel
        Image flow(prob.chart.tex_h, prob.chart.tex_w, 2, 0.0);
        for (int r = 0; r < prob.chart.tex_h; ++r)
            for (int c = 0; c < prob.chart.tex_w; ++c) {
                const SurfacePoint& sp = prob.chart.texel(r, c);
                if (sp.face < 0) continue;
                Vec3 pos = surface_position(composed.vertices, prob.mesh.faces, sp);
                Vec2 ndc = project_point(cam, pos);
                flow.at(r, c, 0) = std::clamp(ndc.x(), -1.0, 1.0);
                flow.at(r, c, 1) = std::clamp(ndc.y(), -1.0, 1.0);
            }

        // keypoints: project, depth-test against the visibility buffer
        KeypointSet k2d;
        for (const auto& sp : out.gt_keypoints) {
            Vec3 pos = surface_position(composed.vertices, prob.mesh.faces, sp);
            Vec2 ndc = project_point(cam, pos);
            double z = camera_depth(cam, pos);
            Vec2 px = ndc_to_pixel(ndc, cfg.res, cfg.res);
            int pr = static_cast<int>(std::lround(px.y()));
            int pc = static_cast<int>(std::lround(px.x()));
            bool visible = false;
            if (pr >= 0 && pr < cfg.res && pc >= 0 && pc < cfg.res) {
                const auto& hit = vis.hits[pr * cfg.res + pc];
                if (hit.face >= 0) {
                    double hz = hit.bary[0] * depth[prob.mesh.faces[hit.face][0]] +
                                hit.bary[1] * depth[prob.mesh.faces[hit.face][1]] +
                                hit.bary[2] * depth[prob.mesh.faces[hit.face][2]];
                    visible = z >= hz - 0.05;
                }
            }
            k2d.points.push_back(ndc);
            k2d.visible.push_back(visible);
        }

        prob.frames.push_back(vis.rgb);
        prob.masks.push_back(noisy);
        prob.part_maps.push_back(parts);
        prob.keypoints.push_back(k2d);
        out.gt_vertices.push_back(composed.vertices);
        out.gt_cameras.push_back(cam);
        out.gt_flows.push_back(flow);
        out.gt_masks.push_back(mask);
        out.gt_params.push_back(params);
    }
    return out;
}

}  // namespace vmr
