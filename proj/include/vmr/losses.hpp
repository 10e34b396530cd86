#pragma once

#include <cmath>
#include <iostream>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "vmr/camera.hpp"
#include "vmr/geometry.hpp"
#include "vmr/image.hpp"
#include "vmr/render.hpp"
#include "vmr/shape.hpp"

namespace vmr {

// ---------------------------------------------------------------------------
// Keypoints

struct KeypointSet {
    std::vector<Vec2> points;  // NDC
    std::vector<bool> visible;

    int count() const { return static_cast<int>(points.size()); }
};

/// Mean L2 re-projection error over visible keypoints:
///   L = (1/N_k) sum_i | R(K3D_i, theta) - K2D_i |.
inline double loss_keypoint(const std::vector<SurfacePoint>& k3d,
                            const std::vector<Vec3>& verts,
                            const std::vector<std::array<int, 3>>& faces,
                            const WeakPerspectiveCamera& cam, const KeypointSet& k2d) {
    int visible = 0;
    double total = 0.0;
    for (int i = 0; i < k2d.count(); ++i) {
        if (!k2d.visible[i]) continue;
        ++visible;
        Vec3 pos = surface_position(verts, faces, k3d[i]);
        total += (project_point(cam, pos) - k2d.points[i]).norm();
    }
    if (visible == 0) {
        std::cerr << "loss_keypoint: no visible keypoints, loss = 0\n";
        return 0.0;
    }
    return total / visible;
}

inline double loss_keypoint_backward(const std::vector<SurfacePoint>& k3d,
                                     const std::vector<Vec3>& verts,
                                     const std::vector<std::array<int, 3>>& faces,
                                     const WeakPerspectiveCamera& cam,
                                     const KeypointSet& k2d, double weight,
                                     std::vector<Vec3>& d_verts, CameraGrad& d_cam) {
    int visible = 0;
    for (int i = 0; i < k2d.count(); ++i)
        if (k2d.visible[i]) ++visible;
    if (visible == 0) return 0.0;
    double total = 0.0;
    for (int i = 0; i < k2d.count(); ++i) {
        if (!k2d.visible[i]) continue;
        Vec3 pos = surface_position(verts, faces, k3d[i]);
        Vec2 p = project_point(cam, pos);
        Vec2 diff = p - k2d.points[i];
        double n = diff.norm();
        total += n;
        if (n < 1e-12) continue;
        Vec2 d_p = (weight / visible) * diff / n;
        Vec3 d_pos = Vec3::Zero();
        project_point_backward(cam, pos, d_p, d_cam, d_pos);
        const auto& f = faces[k3d[i].face];
        for (int k = 0; k < 3; ++k) d_verts[f[k]] += k3d[i].bary[k] * d_pos;
    }
    return total / visible;
}

// ---------------------------------------------------------------------------
// Chamfer distance (2D)

/// Symmetric mean of squared nearest-neighbor distances.
inline double chamfer_2d(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
    if (a.empty() || b.empty()) throw std::runtime_error("chamfer_2d: empty point set");
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

/// Gradient of chamfer_2d w.r.t. the points of A (B held fixed).
inline double chamfer_2d_backward(const std::vector<Vec2>& a, const std::vector<Vec2>& b,
                                  double weight, std::vector<Vec2>& d_a) {
    if (a.empty() || b.empty()) throw std::runtime_error("chamfer_2d: empty point set");
    double fwd = 0.0, bwd = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double best = std::numeric_limits<double>::max();
        int best_j = 0;
        for (size_t j = 0; j < b.size(); ++j) {
            double d = (a[i] - b[j]).squaredNorm();
            if (d < best) { best = d; best_j = static_cast<int>(j); }
        }
        fwd += best;
        d_a[i] += (2.0 * weight / a.size()) * (a[i] - b[best_j]);
    }
    for (size_t j = 0; j < b.size(); ++j) {
        double best = std::numeric_limits<double>::max();
        int best_i = 0;
        for (size_t i = 0; i < a.size(); ++i) {
            double d = (b[j] - a[i]).squaredNorm();
            if (d < best) { best = d; best_i = static_cast<int>(i); }
        }
        bwd += best;
        d_a[best_i] += (2.0 * weight / b.size()) * (a[best_i] - b[j]);
    }
    return fwd / a.size() + bwd / b.size();
}

// ---------------------------------------------------------------------------
// Soft negative IoU

/// 1 - sum(A*B) / sum(A + B - A*B); both all-zero masks define 0.
inline double niou(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::runtime_error("niou: shape mismatch");
    double inter = 0.0, uni = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double ab = a.data[i] * b.data[i];
        inter += ab;
        uni += a.data[i] + b.data[i] - ab;
    }
    if (uni <= 0.0) return 0.0;
    return 1.0 - inter / uni;
}

/// dL/dA of niou, scaled by weight and accumulated into d_a.
inline double niou_backward(const Image& a, const Image& b, double weight, Image& d_a) {
    if (!a.same_shape(b)) throw std::runtime_error("niou: shape mismatch");
    double inter = 0.0, uni = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double ab = a.data[i] * b.data[i];
        inter += ab;
        uni += a.data[i] + b.data[i] - ab;
    }
    if (uni <= 0.0) return 0.0;
    // d(1 - I/U)/da_i = -(B_i U - I (1 - B_i)) / U^2
    double inv_u = 1.0 / uni;
    for (size_t i = 0; i < a.size(); ++i) {
        double bi = b.data[i];
        d_a.data[i] += -weight * (bi * uni - inter * (1.0 - bi)) * inv_u * inv_u;
    }
    return 1.0 - inter / uni;
}

// ---------------------------------------------------------------------------
// UV aggregation machinery (canonical keypoints, video-level parts)

/// Isotropic Gaussian heat maps at keypoint annotations; one channel per
/// keypoint, invisible keypoints get an all-zero channel.
inline Image make_keypoint_heatmaps(const KeypointSet& k2d, int h, int w,
                                    double sigma_ndc = 0.02) {
    Image out(h, w, k2d.count(), 0.0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            Vec2 p = pixel_to_ndc(r, c, h, w);
            for (int k = 0; k < k2d.count(); ++k) {
                if (!k2d.visible[k]) continue;
                double d2 = (p - k2d.points[k]).squaredNorm();
                out.at(r, c, k) = std::exp(-d2 / (2.0 * sigma_ndc * sigma_ndc));
            }
        }
    return out;
}

/// Channel-wise pullback of an image-space heat map into UV space via the
/// texture flow. Identical to sample_texture_flow (which is channel-generic).
inline Image heatmap_to_uv(const Image& heatmap, const Image& flow) {
    return sample_texture_flow(heatmap, flow);
}

struct CanonicalKeypointMap {
    Image heat;                           // H_uv x W_uv x N_k
    std::vector<SurfacePoint> keypoints;  // per-channel argmax on the chart
    std::vector<std::pair<int, int>> argmax_texels;  // (row, col)
};

/// Element-wise mean of per-instance UV heat maps; per-channel argmax over
/// charted texels becomes the canonical 3D keypoint.
inline CanonicalKeypointMap aggregate_canonical_keypoints(
    const std::vector<Image>& uv_heatmaps, const UvChart& chart) {
    if (uv_heatmaps.empty())
        throw std::runtime_error("aggregate_canonical_keypoints: no instances");
    CanonicalKeypointMap out;
    out.heat = uv_heatmaps[0];
    for (size_t i = 1; i < uv_heatmaps.size(); ++i) {
        if (!out.heat.same_shape(uv_heatmaps[i]))
            throw std::runtime_error("aggregate_canonical_keypoints: shape mismatch");
        for (size_t j = 0; j < out.heat.size(); ++j)
            out.heat.data[j] += uv_heatmaps[i].data[j];
    }
    for (double& v : out.heat.data) v /= uv_heatmaps.size();

    const int nk = out.heat.c;
    out.keypoints.resize(nk);
    out.argmax_texels.resize(nk);
    for (int k = 0; k < nk; ++k) {
        double best = -1.0;
        int best_r = -1, best_c = -1;
        for (int r = 0; r < out.heat.h; ++r)
            for (int c = 0; c < out.heat.w; ++c) {
                if (chart.texel(r, c).face < 0) continue;  // uncharted
                double v = out.heat.at(r, c, k);
                if (v > best) { best = v; best_r = r; best_c = c; }
            }
        if (best_r < 0)
            throw std::runtime_error("aggregate_canonical_keypoints: no charted texel");
        out.keypoints[k] = chart.texel(best_r, best_c);
        out.argmax_texels[k] = {best_r, best_c};
    }
    return out;
}

// ---------------------------------------------------------------------------
// Part correspondence

struct PartUv {
    std::vector<int> texel_label;   // per texel, 0 = background/unassigned
    std::vector<int> vertex_part;   // per vertex, 0 = unassigned, else part id
    int num_parts = 0;
};

/// Pull per-frame part label maps into UV space through the flows, average
/// across frames, argmax per texel, then assign each vertex the majority
/// label of its charted texels.
inline PartUv build_part_uv(const std::vector<Image>& part_maps,
                            const std::vector<Image>& flows, const UvChart& chart,
                            const TriMesh& mesh, int num_parts) {
    if (part_maps.size() != flows.size() || part_maps.empty())
        throw std::runtime_error("build_part_uv: frame count mismatch");
    const int h_uv = chart.tex_h, w_uv = chart.tex_w;
    Image acc(h_uv, w_uv, num_parts, 0.0);
    for (size_t f = 0; f < part_maps.size(); ++f) {
        const Image& labels = part_maps[f];
        Image onehot(labels.h, labels.w, num_parts, 0.0);
        for (int r = 0; r < labels.h; ++r)
            for (int c = 0; c < labels.w; ++c) {
                int lab = static_cast<int>(labels.at(r, c) + 0.5);
                if (lab >= 1 && lab <= num_parts) onehot.at(r, c, lab - 1) = 1.0;
            }
        Image uv = sample_texture_flow(onehot, flows[f]);
        for (size_t j = 0; j < acc.size(); ++j) acc.data[j] += uv.data[j];
    }
    for (double& v : acc.data) v /= part_maps.size();

    PartUv out;
    out.num_parts = num_parts;
    out.texel_label.assign(static_cast<size_t>(h_uv) * w_uv, 0);
    for (int r = 0; r < h_uv; ++r)
        for (int c = 0; c < w_uv; ++c) {
            if (chart.texel(r, c).face < 0) continue;
            double best = 0.0;
            int best_p = 0;
            for (int p = 0; p < num_parts; ++p) {
                double v = acc.at(r, c, p);
                if (v > best) { best = v; best_p = p + 1; }
            }
            out.texel_label[r * w_uv + c] = best_p;
        }

    // each charted texel votes for the face vertex with the largest
    // barycentric weight; vertices take their majority label
    std::vector<std::vector<int>> votes(mesh.num_vertices(),
                                        std::vector<int>(num_parts + 1, 0));
    for (int r = 0; r < h_uv; ++r)
        for (int c = 0; c < w_uv; ++c) {
            const SurfacePoint& sp = chart.texel(r, c);
            if (sp.face < 0) continue;
            int k = 0;
            if (sp.bary[1] > sp.bary[k]) k = 1;
            if (sp.bary[2] > sp.bary[k]) k = 2;
            votes[mesh.faces[sp.face][k]][out.texel_label[r * w_uv + c]]++;
        }
    out.vertex_part.assign(mesh.num_vertices(), 0);
    for (int i = 0; i < mesh.num_vertices(); ++i) {
        int total = 0;
        for (int p = 0; p <= num_parts; ++p) total += votes[i][p];
        if (total == 0) continue;  // no charted texel: excluded from the loss
        int best_p = 0, best_n = -1;
        for (int p = 1; p <= num_parts; ++p)
            if (votes[i][p] > best_n) { best_n = votes[i][p]; best_p = p; }
        if (best_n > 0) out.vertex_part[i] = best_p;
    }
    return out;
}

/// Per-part 2D sample targets Y_i^j drawn from the foreground pixels of each
/// part map (up to max_samples per part, seeded).
inline std::vector<std::vector<Vec2>> sample_part_points(const Image& part_map,
                                                         int num_parts, uint64_t seed,
                                                         int max_samples = 128) {
    std::vector<std::vector<Vec2>> pools(num_parts);
    for (int r = 0; r < part_map.h; ++r)
        for (int c = 0; c < part_map.w; ++c) {
            int lab = static_cast<int>(part_map.at(r, c) + 0.5);
            if (lab >= 1 && lab <= num_parts)
                pools[lab - 1].push_back(pixel_to_ndc(r, c, part_map.h, part_map.w));
        }
    std::mt19937_64 rng(seed);
    for (auto& pool : pools) {
        if (static_cast<int>(pool.size()) <= max_samples) continue;
        std::shuffle(pool.begin(), pool.end(), rng);
        pool.resize(max_samples);
    }
    return pools;
}

/// Part correspondence term for a single frame:
///   sum_i (1/|V_i|) Chamfer(R(V_i, theta), Y_i).
inline double loss_part_correspondence(const std::vector<Vec3>& verts,
                                       const WeakPerspectiveCamera& cam,
                                       const std::vector<int>& vertex_part,
                                       const std::vector<std::vector<Vec2>>& samples,
                                       int num_parts) {
    double total = 0.0;
    bool any = false;
    for (int p = 1; p <= num_parts; ++p) {
        std::vector<Vec2> proj;
        for (size_t i = 0; i < verts.size(); ++i)
            if (vertex_part[i] == p) proj.push_back(project_point(cam, verts[i]));
        if (proj.empty() || samples[p - 1].empty()) continue;
        any = true;
        total += chamfer_2d(proj, samples[p - 1]) / proj.size();
    }
    if (!any) throw std::runtime_error("loss_part_correspondence: all parts empty");
    return total;
}

inline double loss_part_correspondence_backward(
    const std::vector<Vec3>& verts, const WeakPerspectiveCamera& cam,
    const std::vector<int>& vertex_part, const std::vector<std::vector<Vec2>>& samples,
    int num_parts, double weight, std::vector<Vec3>& d_verts, CameraGrad& d_cam) {
    double total = 0.0;
    bool any = false;
    for (int p = 1; p <= num_parts; ++p) {
        std::vector<int> ids;
        std::vector<Vec2> proj;
        for (size_t i = 0; i < verts.size(); ++i)
            if (vertex_part[i] == p) {
                ids.push_back(static_cast<int>(i));
                proj.push_back(project_point(cam, verts[i]));
            }
        if (proj.empty() || samples[p - 1].empty()) continue;
        any = true;
        std::vector<Vec2> d_proj(proj.size(), Vec2::Zero());
        total += chamfer_2d_backward(proj, samples[p - 1], weight / proj.size(), d_proj) /
                 proj.size();
        for (size_t k = 0; k < ids.size(); ++k)
            project_point_backward(cam, verts[ids[k]], d_proj[k], d_cam, d_verts[ids[k]]);
    }
    if (!any) throw std::runtime_error("loss_part_correspondence: all parts empty");
    return total;
}

// ---------------------------------------------------------------------------
// Swap losses (value-level entry points; the adaptation engine evaluates the
// same terms with cached visibility for gradients)

/// Eq-style texture swap: render each frame with the other frame's texture
/// and compare against the masked input frame.
inline double loss_texture_swap(const std::vector<Vec3>& verts_i,
                                const std::vector<Vec3>& verts_j,
                                const std::vector<std::array<int, 3>>& faces,
                                const WeakPerspectiveCamera& cam_i,
                                const WeakPerspectiveCamera& cam_j, const Image& uv_tex_i,
                                const Image& uv_tex_j, const UvChart& chart,
                                const Image& frame_i, const Image& frame_j,
                                const Image& mask_i, const Image& mask_j,
                                ImageDistance kind = ImageDistance::kPyramidL1) {
    auto term = [&](const std::vector<Vec3>& v, const WeakPerspectiveCamera& cam,
                    const Image& tex, const Image& frame, const Image& mask) {
        Image rendered = render_texture(v, faces, cam, tex, chart, frame.h, frame.w);
        Image ra = rendered, rb = frame;
        for (int r = 0; r < frame.h; ++r)
            for (int c = 0; c < frame.w; ++c)
                for (int ch = 0; ch < 3; ++ch) {
                    ra.at(r, c, ch) *= mask.at(r, c);
                    rb.at(r, c, ch) *= mask.at(r, c);
                }
        return image_distance(ra, rb, kind);
    };
    return term(verts_i, cam_i, uv_tex_j, frame_i, mask_i) +
           term(verts_j, cam_j, uv_tex_i, frame_j, mask_j);
}

/// Eq-style base-shape swap: silhouettes of V_base^j + dV^i under theta^i
/// (and vice versa) against the frame masks.
inline double loss_base_swap(const std::vector<Vec3>& base_i, const std::vector<Vec3>& base_j,
                             const std::vector<Vec3>& delta_i, const std::vector<Vec3>& delta_j,
                             const std::vector<std::array<int, 3>>& faces,
                             const WeakPerspectiveCamera& cam_i,
                             const WeakPerspectiveCamera& cam_j, const Image& mask_i,
                             const Image& mask_j, const SoftRasterConfig& cfg) {
    auto term = [&](const std::vector<Vec3>& base, const std::vector<Vec3>& delta,
                    const WeakPerspectiveCamera& cam, const Image& mask) {
        std::vector<Vec3> v(base.size());
        for (size_t k = 0; k < base.size(); ++k) v[k] = base[k] + delta[k];
        SilhouetteRender sr = render_silhouette(project_vertices(cam, v), faces, cfg);
        return niou(sr.mask, mask);
    };
    return term(base_j, delta_i, cam_i, mask_i) + term(base_i, delta_j, cam_j, mask_j);
}

}  // namespace vmr
