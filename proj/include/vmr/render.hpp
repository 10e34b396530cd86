#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "vmr/camera.hpp"
#include "vmr/geometry.hpp"
#include "vmr/image.hpp"

namespace vmr {

/// Soft rasterizer settings. gamma is kept for config compatibility but the
/// product aggregation used here does not consume it.
struct SoftRasterConfig {
    double sigma = 1e-4;  // distance sharpness, NDC^2 units
    double gamma = 1.0;
    int h = 64;
    int w = 64;
};

namespace detail {

inline double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

inline bool point_in_triangle(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c) {
    double c0 = cross2(b - a, p - a);
    double c1 = cross2(c - b, p - b);
    double c2 = cross2(a - c, p - c);
    return (c0 >= 0 && c1 >= 0 && c2 >= 0) || (c0 <= 0 && c1 <= 0 && c2 <= 0);
}

/// Squared distance from p to segment [a,b] plus the clamped parameter t.
inline double point_segment_dist2(const Vec2& p, const Vec2& a, const Vec2& b, double& t) {
    Vec2 e = b - a;
    double len2 = e.squaredNorm();
    t = len2 > 0 ? std::clamp((p - a).dot(e) / len2, 0.0, 1.0) : 0.0;
    return (p - (a + t * e)).squaredNorm();
}

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace detail

/// Per-face soft coverage of a pixel:
///   d = sigmoid(sign * dist^2(p, boundary) / sigma), sign = +1 inside.
inline double soft_coverage(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c,
                            double sigma) {
    double t;
    double r2 = detail::point_segment_dist2(p, a, b, t);
    r2 = std::min(r2, detail::point_segment_dist2(p, b, c, t));
    r2 = std::min(r2, detail::point_segment_dist2(p, c, a, t));
    double sign = detail::point_in_triangle(p, a, b, c) ? 1.0 : -1.0;
    return detail::sigmoid(sign * r2 / sigma);
}

/// Gradient of soft_coverage w.r.t. the three triangle vertices, scaled by
/// d_out. The sign term is piecewise constant and carries no gradient.
inline void soft_coverage_backward(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c,
                                   double sigma, double d_out, Vec2& d_a, Vec2& d_b,
                                   Vec2& d_c) {
    const Vec2* pts[3] = {&a, &b, &c};
    Vec2* grads[3] = {&d_a, &d_b, &d_c};
    double best_r2 = 0.0, best_t = 0.0;
    int best_edge = -1;
    for (int k = 0; k < 3; ++k) {
        double t;
        double r2 = detail::point_segment_dist2(p, *pts[k], *pts[(k + 1) % 3], t);
        if (best_edge < 0 || r2 < best_r2) {
            best_r2 = r2;
            best_t = t;
            best_edge = k;
        }
    }
    double sign = detail::point_in_triangle(p, a, b, c) ? 1.0 : -1.0;
    double d = detail::sigmoid(sign * best_r2 / sigma);
    double d_r2 = d_out * d * (1.0 - d) * sign / sigma;
    const Vec2& ea = *pts[best_edge];
    const Vec2& eb = *pts[best_edge == 2 ? 0 : best_edge + 1];
    Vec2 closest = ea + best_t * (eb - ea);
    Vec2 diff = p - closest;  // d r2 / d closest = -2 diff
    // envelope: t is the (clamped) minimizer, treated as constant
    *grads[best_edge] += d_r2 * (-2.0) * (1.0 - best_t) * diff;
    *grads[best_edge == 2 ? 0 : best_edge + 1] += d_r2 * (-2.0) * best_t * diff;
}

/// Soft silhouette render with retained per-pixel face bins for the backward
/// pass. mask(p) = 1 - prod_f (1 - d_f(p)).
struct SilhouetteRender {
    Image mask;
    SoftRasterConfig cfg;
    std::vector<Vec2> verts2d;
    std::vector<std::array<int, 3>> faces;
    // per pixel: (face index, coverage d)
    std::vector<std::vector<std::pair<int, double>>> bins;
};

inline SilhouetteRender render_silhouette(const std::vector<Vec2>& verts2d,
                                          const std::vector<std::array<int, 3>>& faces,
                                          const SoftRasterConfig& cfg) {
    SilhouetteRender out;
    out.cfg = cfg;
    out.verts2d = verts2d;
    out.faces = faces;
    out.mask = Image(cfg.h, cfg.w, 1, 0.0);
    out.bins.resize(static_cast<size_t>(cfg.h) * cfg.w);

    // faces contribute meaningfully only within a band around their boundary;
    // the wide cutoff keeps the culling jump (~sigmoid(-45)) far below
    // finite-difference resolution
    const double band = std::sqrt(cfg.sigma * 45.0);
    const double px_w = 2.0 / cfg.w, px_h = 2.0 / cfg.h;

    for (int f = 0; f < static_cast<int>(faces.size()); ++f) {
        const Vec2& a = verts2d[faces[f][0]];
        const Vec2& b = verts2d[faces[f][1]];
        const Vec2& c = verts2d[faces[f][2]];
        double min_x = std::min({a.x(), b.x(), c.x()}) - band;
        double max_x = std::max({a.x(), b.x(), c.x()}) + band;
        double min_y = std::min({a.y(), b.y(), c.y()}) - band;
        double max_y = std::max({a.y(), b.y(), c.y()}) + band;
        int c0 = std::max(0, static_cast<int>(std::floor((min_x + 1.0) / px_w - 0.5)));
        int c1 = std::min(cfg.w - 1, static_cast<int>(std::ceil((max_x + 1.0) / px_w - 0.5)));
        int r0 = std::max(0, static_cast<int>(std::floor((1.0 - max_y) / px_h - 0.5)));
        int r1 = std::min(cfg.h - 1, static_cast<int>(std::ceil((1.0 - min_y) / px_h - 0.5)));
        for (int r = r0; r <= r1; ++r) {
            for (int col = c0; col <= c1; ++col) {
                Vec2 p = pixel_to_ndc(r, col, cfg.h, cfg.w);
                double d = soft_coverage(p, a, b, c, cfg.sigma);
                if (d > 1e-12) out.bins[r * cfg.w + col].push_back({f, d});
            }
        }
    }
    for (int r = 0; r < cfg.h; ++r) {
        for (int col = 0; col < cfg.w; ++col) {
            double prod = 1.0;
            for (const auto& [f, d] : out.bins[r * cfg.w + col]) prod *= 1.0 - d;
            out.mask.at(r, col) = 1.0 - prod;
        }
    }
    return out;
}

/// Backward: dL/dmask image -> gradients on the projected vertices.
inline void render_silhouette_backward(const SilhouetteRender& render, const Image& d_mask,
                                       std::vector<Vec2>& d_verts2d) {
    const auto& cfg = render.cfg;
    std::vector<double> prefix, suffix;
    for (int r = 0; r < cfg.h; ++r) {
        for (int col = 0; col < cfg.w; ++col) {
            const auto& bin = render.bins[r * cfg.w + col];
            if (bin.empty()) continue;
            double dm = d_mask.at(r, col);
            if (dm == 0.0) continue;
            const int n = static_cast<int>(bin.size());
            prefix.assign(n + 1, 1.0);
            suffix.assign(n + 1, 1.0);
            for (int k = 0; k < n; ++k) prefix[k + 1] = prefix[k] * (1.0 - bin[k].second);
            for (int k = n - 1; k >= 0; --k) suffix[k] = suffix[k + 1] * (1.0 - bin[k].second);
            Vec2 p = pixel_to_ndc(r, col, cfg.h, cfg.w);
            for (int k = 0; k < n; ++k) {
                // d mask / d d_k = prod_{g != k} (1 - d_g)
                double d_d = dm * prefix[k] * suffix[k + 1];
                if (d_d == 0.0) continue;
                const auto& face = render.faces[bin[k].first];
                soft_coverage_backward(p, render.verts2d[face[0]], render.verts2d[face[1]],
                                       render.verts2d[face[2]], cfg.sigma, d_d,
                                       d_verts2d[face[0]], d_verts2d[face[1]],
                                       d_verts2d[face[2]]);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Hard-visibility textured rendering (z-buffered, differentiable w.r.t. the
// UV texture only)

struct TextureRender {
    Image rgb;
    struct Hit {
        int face = -1;
        Vec3 bary = Vec3::Zero();
    };
    std::vector<Hit> hits;  // per pixel
    int h = 0, w = 0;
};

/// Rasterize visibility: per-pixel nearest face + barycentric coordinates.
/// depth = barycentric blend of rotated z, larger z nearer.
inline TextureRender rasterize_visibility(const std::vector<Vec2>& verts2d,
                                          const std::vector<double>& depths,
                                          const std::vector<std::array<int, 3>>& faces,
                                          int h, int w) {
    TextureRender out;
    out.h = h;
    out.w = w;
    out.hits.resize(static_cast<size_t>(h) * w);
    std::vector<double> zbuf(static_cast<size_t>(h) * w,
                             -std::numeric_limits<double>::infinity());
    const double px_w = 2.0 / w, px_h = 2.0 / h;
    for (int f = 0; f < static_cast<int>(faces.size()); ++f) {
        const Vec2& a = verts2d[faces[f][0]];
        const Vec2& b = verts2d[faces[f][1]];
        const Vec2& c = verts2d[faces[f][2]];
        double det = detail::cross2(b - a, c - a);
        if (std::abs(det) < 1e-14) continue;
        int c0 = std::max(0, static_cast<int>(std::floor((std::min({a.x(), b.x(), c.x()}) + 1.0) / px_w - 0.5)));
        int c1 = std::min(w - 1, static_cast<int>(std::ceil((std::max({a.x(), b.x(), c.x()}) + 1.0) / px_w - 0.5)));
        int r0 = std::max(0, static_cast<int>(std::floor((1.0 - std::max({a.y(), b.y(), c.y()})) / px_h - 0.5)));
        int r1 = std::min(h - 1, static_cast<int>(std::ceil((1.0 - std::min({a.y(), b.y(), c.y()})) / px_h - 0.5)));
        for (int r = r0; r <= r1; ++r) {
            for (int col = c0; col <= c1; ++col) {
                Vec2 p = pixel_to_ndc(r, col, h, w);
                double b1 = detail::cross2(p - a, c - a) / det;
                double b2 = detail::cross2(b - a, p - a) / det;
                double b0 = 1.0 - b1 - b2;
                if (b0 < 0 || b1 < 0 || b2 < 0) continue;
                double z = b0 * depths[faces[f][0]] + b1 * depths[faces[f][1]] +
                           b2 * depths[faces[f][2]];
                if (z > zbuf[r * w + col]) {
                    zbuf[r * w + col] = z;
                    out.hits[r * w + col] = {f, Vec3(b0, b1, b2)};
                }
            }
        }
    }
    return out;
}

/// UV coordinates of a hit via the chart's per-face UV triangle.
inline Vec2 hit_uv(const UvChart& chart, const TextureRender::Hit& hit) {
    const auto& tri = chart.face_uv[hit.face];
    return hit.bary[0] * tri[0] + hit.bary[1] * tri[1] + hit.bary[2] * tri[2];
}

/// Color the visibility buffer from a UV texture (bilinear). Background black.
inline void shade(TextureRender& render, const UvChart& chart, const Image& uv_texture) {
    render.rgb = Image(render.h, render.w, 3, 0.0);
    for (int r = 0; r < render.h; ++r) {
        for (int col = 0; col < render.w; ++col) {
            const auto& hit = render.hits[r * render.w + col];
            if (hit.face < 0) continue;
            Vec2 uv = hit_uv(chart, hit);
            double tc = uv.x() * chart.tex_w - 0.5;
            double tr = uv.y() * chart.tex_h - 0.5;
            for (int ch = 0; ch < 3; ++ch)
                render.rgb.at(r, col, ch) = bilinear_sample(uv_texture, tc, tr, ch);
        }
    }
}

/// Scatter dL/drgb back onto the UV texture through the bilinear taps.
inline void shade_backward(const TextureRender& render, const UvChart& chart,
                           const Image& d_rgb, Image& d_uv_texture) {
    int idx[4];
    double wgt[4];
    for (int r = 0; r < render.h; ++r) {
        for (int col = 0; col < render.w; ++col) {
            const auto& hit = render.hits[r * render.w + col];
            if (hit.face < 0) continue;
            Vec2 uv = hit_uv(chart, hit);
            bilinear_weights(uv.x() * chart.tex_w - 0.5, uv.y() * chart.tex_h - 0.5,
                             chart.tex_h, chart.tex_w, idx, wgt);
            for (int ch = 0; ch < 3; ++ch) {
                double g = d_rgb.at(r, col, ch);
                if (g == 0.0) continue;
                for (int k = 0; k < 4; ++k) d_uv_texture.data[idx[k] * 3 + ch] += wgt[k] * g;
            }
        }
    }
}

/// Convenience: full textured render of a mesh under a camera.
inline Image render_texture(const std::vector<Vec3>& verts,
                            const std::vector<std::array<int, 3>>& faces,
                            const WeakPerspectiveCamera& cam, const Image& uv_texture,
                            const UvChart& chart, int h, int w) {
    std::vector<Vec2> v2(verts.size());
    std::vector<double> depth(verts.size());
    for (size_t i = 0; i < verts.size(); ++i) {
        Vec3 r = quat_rotate(cam.quat, verts[i]);
        v2[i] = cam.scale * r.head<2>() + cam.trans;
        depth[i] = r.z();
    }
    TextureRender tr = rasterize_visibility(v2, depth, faces, h, w);
    shade(tr, chart, uv_texture);
    return tr.rgb;
}

// ---------------------------------------------------------------------------
// Texture flow sampling: I_uv(u,v) = bilinear(frame, flow(u,v))

/// flow: H_uv x W_uv x 2 grid of NDC image coordinates in [-1,1]^2.
inline Image sample_texture_flow(const Image& frame, const Image& flow) {
    if (flow.c != 2) throw std::runtime_error("sample_texture_flow: flow needs 2 channels");
    Image uv_tex(flow.h, flow.w, frame.c);
    for (int r = 0; r < flow.h; ++r) {
        for (int col = 0; col < flow.w; ++col) {
            Vec2 ndc(std::clamp(flow.at(r, col, 0), -1.0, 1.0),
                     std::clamp(flow.at(r, col, 1), -1.0, 1.0));
            Vec2 px = ndc_to_pixel(ndc, frame.h, frame.w);
            for (int ch = 0; ch < frame.c; ++ch)
                uv_tex.at(r, col, ch) = bilinear_sample(frame, px.x(), px.y(), ch);
        }
    }
    return uv_tex;
}

/// dL/dflow from dL/d(uv texture); optionally also accumulates dL/dframe.
inline void sample_texture_flow_backward(const Image& frame, const Image& flow,
                                         const Image& d_uv_tex, Image& d_flow,
                                         Image* d_frame = nullptr) {
    int idx[4];
    double wgt[4];
    for (int r = 0; r < flow.h; ++r) {
        for (int col = 0; col < flow.w; ++col) {
            Vec2 ndc(std::clamp(flow.at(r, col, 0), -1.0, 1.0),
                     std::clamp(flow.at(r, col, 1), -1.0, 1.0));
            Vec2 px = ndc_to_pixel(ndc, frame.h, frame.w);
            Vec2 d_px = Vec2::Zero();
            for (int ch = 0; ch < frame.c; ++ch) {
                double g = d_uv_tex.at(r, col, ch);
                if (g == 0.0) continue;
                d_px += g * bilinear_sample_grad(frame, px.x(), px.y(), ch);
                if (d_frame) {
                    bilinear_weights(px.x(), px.y(), frame.h, frame.w, idx, wgt);
                    for (int k = 0; k < 4; ++k)
                        d_frame->data[idx[k] * frame.c + ch] += wgt[k] * g;
                }
            }
            // chain px = ndc_to_pixel(ndc): d col/d x = w/2, d row/d y = -h/2
            bool x_clamped = flow.at(r, col, 0) < -1.0 || flow.at(r, col, 0) > 1.0;
            bool y_clamped = flow.at(r, col, 1) < -1.0 || flow.at(r, col, 1) > 1.0;
            if (!x_clamped) d_flow.at(r, col, 0) += d_px.x() * 0.5 * frame.w;
            if (!y_clamped) d_flow.at(r, col, 1) += d_px.y() * (-0.5 * frame.h);
        }
    }
}

}  // namespace vmr
