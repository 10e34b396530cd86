#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "vmr/adam.hpp"
#include "vmr/arap.hpp"
#include "vmr/camera.hpp"
#include "vmr/geometry.hpp"
#include "vmr/image.hpp"
#include "vmr/losses.hpp"
#include "vmr/parallel.hpp"
#include "vmr/render.hpp"
#include "vmr/shape.hpp"

namespace vmr {

// ---------------------------------------------------------------------------
// Problem definition

/// Objective weights. Adaptation and image-stage defaults follow the cited
/// training configuration; keys match the key=value weight files.
struct LossWeights {
    double silhouette = 0.1;
    double texture = 0.5;
    double laplacian = 0.0006;
    double arap = 2.0;
    double texture_swap = 2.0;
    double part = 1.0;
    double base_swap = 1.0;
    double keypoint = 0.0;

    static LossWeights adaptation_defaults() { return LossWeights{}; }

    static LossWeights image_stage_defaults() {
        LossWeights w;
        w.silhouette = 3.0;
        w.texture = 3.0;
        w.laplacian = 0.0008;
        w.keypoint = 5.0;
        w.arap = 10.0;
        w.texture_swap = 0.0;
        w.part = 0.0;
        w.base_swap = 0.0;
        return w;
    }

    double& by_key(const std::string& key) {
        if (key == "silhouette") return silhouette;
        if (key == "texture") return texture;
        if (key == "laplacian") return laplacian;
        if (key == "arap") return arap;
        if (key == "texture_swap") return texture_swap;
        if (key == "part") return part;
        if (key == "base_swap") return base_swap;
        if (key == "keypoint") return keypoint;
        throw std::runtime_error("unknown loss weight key: " + key);
    }
};

enum class SupervisionMode { kWeak, kSelfSupervised };

/// A frame sequence plus everything the adaptation engine consumes.
struct VideoProblem {
    TriMesh mesh;   // template topology and geometry (carries mirror pairing)
    UvChart chart;  // fixed UV chart with texel table built
    ShapeBasisSet bases;
    std::vector<Image> frames;     // RGB, [0,1]
    std::vector<Image> masks;      // single channel, [0,1]
    std::vector<Image> part_maps;  // label images (empty when parts unused)
    std::vector<KeypointSet> keypoints;  // empty when unavailable
    int num_parts = 6;
    LossWeights weights;
    SupervisionMode mode = SupervisionMode::kWeak;
    SoftRasterConfig raster;
    ImageDistance dist_kind = ImageDistance::kPyramidL1;

    int num_frames() const { return static_cast<int>(frames.size()); }
};

struct Window {
    int begin = 0;
    int end = 0;
    int anchor = 0;  // part-painting anchor (middle frame)

    int length() const { return end - begin; }
};

struct WindowSchedule {
    int window = 50;  // N_w
    int stride = 10;  // N_s
    int iters = 40;   // N_t
};

/// Sliding windows [0,N_w), [N_s, N_s+N_w), ...; the final window clips to
/// N_f. Short videos collapse to a single window.
inline std::vector<Window> make_windows(int num_frames, const WindowSchedule& sched) {
    if (num_frames <= 0) throw std::runtime_error("make_windows: empty video");
    if (sched.stride < 1 || sched.window < sched.stride)
        throw std::runtime_error("make_windows: invalid schedule");
    std::vector<Window> out;
    for (int start = 0;; start += sched.stride) {
        Window w;
        w.begin = start;
        w.end = std::min(start + sched.window, num_frames);
        w.anchor = std::min(start + sched.window / 2, w.end - 1);
        out.push_back(w);
        if (w.end >= num_frames) break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parameter packing

struct ParamLayout {
    int n_bases = 0, n_verts = 0, flow_h = 0, flow_w = 0;

    int cam_offset() const { return 0; }
    int beta_offset() const { return 7; }
    int delta_offset() const { return 7 + n_bases; }
    int flow_offset() const { return delta_offset() + 3 * n_verts; }
    int size() const { return flow_offset() + 2 * flow_h * flow_w; }
};

inline std::vector<double> pack_state(const FrameState& s, const ParamLayout& lay) {
    std::vector<double> p(lay.size());
    auto cam = s.camera.params();
    for (int k = 0; k < 7; ++k) p[k] = cam[k];
    for (int b = 0; b < lay.n_bases; ++b) p[lay.beta_offset() + b] = s.shape.beta[b];
    for (int i = 0; i < lay.n_verts; ++i)
        for (int k = 0; k < 3; ++k)
            p[lay.delta_offset() + 3 * i + k] = s.shape.delta_v[i][k];
    std::copy(s.texture_flow.data.begin(), s.texture_flow.data.end(),
              p.begin() + lay.flow_offset());
    return p;
}

inline FrameState unpack_state(const std::vector<double>& p, const ParamLayout& lay) {
    FrameState s;
    Eigen::Matrix<double, 7, 1> cam;
    for (int k = 0; k < 7; ++k) cam[k] = p[k];
    s.camera = WeakPerspectiveCamera::from_params(cam);
    s.shape.beta = Eigen::VectorXd(lay.n_bases);
    for (int b = 0; b < lay.n_bases; ++b) s.shape.beta[b] = p[lay.beta_offset() + b];
    s.shape.delta_v.resize(lay.n_verts);
    for (int i = 0; i < lay.n_verts; ++i)
        for (int k = 0; k < 3; ++k)
            s.shape.delta_v[i][k] = p[lay.delta_offset() + 3 * i + k];
    s.texture_flow = Image(lay.flow_h, lay.flow_w, 2);
    std::copy(p.begin() + lay.flow_offset(), p.end(), s.texture_flow.data.begin());
    return s;
}

/// Gradient buffers for one frame, expressed against the forward quantities
/// (composed vertices, base vertices, unit-quaternion camera, flow grid).
struct FrameGrad {
    CameraGrad cam;
    std::vector<Vec3> d_verts;       // w.r.t. composed V
    std::vector<Vec3> d_base_extra;  // w.r.t. V_base beyond the V chain
    std::vector<Vec3> d_delta_direct;  // terms that touch delta_v directly
    Image d_flow;

    static FrameGrad zeros(const ParamLayout& lay) {
        FrameGrad g;
        g.d_verts.assign(lay.n_verts, Vec3::Zero());
        g.d_base_extra.assign(lay.n_verts, Vec3::Zero());
        g.d_delta_direct.assign(lay.n_verts, Vec3::Zero());
        g.d_flow = Image(lay.flow_h, lay.flow_w, 2, 0.0);
        return g;
    }
};

/// Chain a FrameGrad to the packed raw-parameter gradient.
inline std::vector<double> chain_to_params(const FrameGrad& g, const std::vector<double>& params,
                                           const ShapeBasisSet& bases,
                                           const ComposedShape& composed,
                                           const ParamLayout& lay) {
    std::vector<double> out(lay.size(), 0.0);
    out[0] = g.cam.d_scale;
    out[1] = g.cam.d_trans.x();
    out[2] = g.cam.d_trans.y();
    Vec4 raw(params[3], params[4], params[5], params[6]);
    Vec4 dq = quaternion_normalize_backward(raw, g.cam.d_quat);
    for (int k = 0; k < 4; ++k) out[3 + k] = dq[k];

    Eigen::VectorXd d_beta = Eigen::VectorXd::Zero(lay.n_bases);
    std::vector<Vec3> d_delta(lay.n_verts, Vec3::Zero());
    compose_shape_backward(bases, composed, g.d_verts, g.d_base_extra, d_beta, d_delta);
    for (int b = 0; b < lay.n_bases; ++b) out[lay.beta_offset() + b] = d_beta[b];
    for (int i = 0; i < lay.n_verts; ++i) {
        Vec3 d = d_delta[i] + g.d_delta_direct[i];
        for (int k = 0; k < 3; ++k) out[lay.delta_offset() + 3 * i + k] = d[k];
    }
    std::copy(g.d_flow.data.begin(), g.d_flow.data.end(), out.begin() + lay.flow_offset());
    return out;
}

// ---------------------------------------------------------------------------
// Per-problem caches and per-window auxiliary data

struct ProblemCache {
    CotanWeights cotan;
    std::vector<std::vector<int>> rings;
    std::vector<std::vector<std::vector<Vec2>>> part_samples;  // frame -> part -> pts
    std::vector<Image> keypoint_heatmaps;                      // frame -> H x W x N_k

    static ProblemCache build(const VideoProblem& problem, uint64_t seed) {
        ProblemCache cache;
        cache.cotan = cotangent_weights(problem.mesh);
        cache.rings = vertex_rings(problem.mesh);
        if (!problem.part_maps.empty()) {
            cache.part_samples.resize(problem.num_frames());
            for (int f = 0; f < problem.num_frames(); ++f)
                cache.part_samples[f] = sample_part_points(
                    problem.part_maps[f], problem.num_parts,
                    seed * 1000003ull + static_cast<uint64_t>(f));
        }
        if (!problem.keypoints.empty()) {
            cache.keypoint_heatmaps.resize(problem.num_frames());
            for (int f = 0; f < problem.num_frames(); ++f)
                cache.keypoint_heatmaps[f] = make_keypoint_heatmaps(
                    problem.keypoints[f], problem.raster.h, problem.raster.w);
        }
        return cache;
    }
};

/// Data recomputed at the start of each window from the current states.
struct WindowAux {
    std::vector<SurfacePoint> canonical_keypoints;  // empty if keypoints unused
    PartUv part_uv;                                 // vertex_part empty if unused
};

inline WindowAux build_window_aux(const VideoProblem& problem, const ProblemCache& cache,
                                  const Window& window,
                                  const std::vector<FrameState>& states) {
    WindowAux aux;
    if (!problem.keypoints.empty() && problem.weights.keypoint > 0 &&
        problem.mode == SupervisionMode::kWeak) {
        std::vector<Image> uv_maps;
        for (int f = window.begin; f < window.end; ++f)
            uv_maps.push_back(
                heatmap_to_uv(cache.keypoint_heatmaps[f], states[f].texture_flow));
        aux.canonical_keypoints =
            aggregate_canonical_keypoints(uv_maps, problem.chart).keypoints;
    }
    if (!problem.part_maps.empty() && problem.weights.part > 0) {
        std::vector<Image> maps, flows;
        for (int f = window.begin; f < window.end; ++f) {
            maps.push_back(problem.part_maps[f]);
            flows.push_back(states[f].texture_flow);
        }
        aux.part_uv = build_part_uv(maps, flows, problem.chart, problem.mesh,
                                    problem.num_parts);
    }
    return aux;
}

// ---------------------------------------------------------------------------
// Total loss over a window

struct LossBreakdown {
    double total = 0.0;
    std::map<std::string, double> terms;

    void add(const std::string& name, double value) {
        if (!std::isfinite(value))
            throw std::runtime_error("non-finite loss term: " + name);
        terms[name] += value;
        total += value;
    }
};

namespace detail {

struct FrameEval {
    WeakPerspectiveCamera cam;
    ComposedShape composed;
    std::vector<Vec2> verts2d;
    std::vector<double> depths;
    SilhouetteRender sil;
    TextureRender vis;
    Image uv_texture;
    bool has_sil = false, has_vis = false, has_tex = false;
};

inline FrameEval eval_frame(const VideoProblem& problem, const ShapeBasisSet& bases,
                            const FrameState& state, const LossWeights& w, int frame) {
    FrameEval e;
    e.cam = state.camera;
    e.composed = compose_shape(bases, state.shape);
    const int nv = static_cast<int>(e.composed.vertices.size());
    e.verts2d.resize(nv);
    e.depths.resize(nv);
    for (int i = 0; i < nv; ++i) {
        Vec3 r = quat_rotate(e.cam.quat, e.composed.vertices[i]);
        e.verts2d[i] = e.cam.scale * r.head<2>() + e.cam.trans;
        e.depths[i] = r.z();
    }
    if (w.silhouette > 0) {
        e.sil = render_silhouette(e.verts2d, problem.mesh.faces, problem.raster);
        e.has_sil = true;
    }
    if (w.texture > 0 || w.texture_swap > 0) {
        e.vis = rasterize_visibility(e.verts2d, e.depths, problem.mesh.faces,
                                     problem.raster.h, problem.raster.w);
        e.has_vis = true;
        e.uv_texture = sample_texture_flow(problem.frames[frame], state.texture_flow);
        e.has_tex = true;
    }
    return e;
}

/// dist(rendered * mask, frame * mask); gradient (if requested) accumulated
/// into d_rendered.
inline double masked_frame_distance(const Image& rendered, const Image& frame,
                                    const Image& mask, ImageDistance kind, double weight,
                                    Image* d_rendered) {
    Image a = rendered, b = frame;
    for (int r = 0; r < frame.h; ++r)
        for (int c = 0; c < frame.w; ++c) {
            double m = mask.at(r, c);
            for (int ch = 0; ch < frame.c; ++ch) {
                a.at(r, c, ch) *= m;
                b.at(r, c, ch) *= m;
            }
        }
    if (!d_rendered) return image_distance(a, b, kind);
    Image d_a(frame.h, frame.w, frame.c, 0.0);
    double value = image_distance(a, b, kind);
    image_distance_backward(a, b, weight, d_a, kind);
    for (int r = 0; r < frame.h; ++r)
        for (int c = 0; c < frame.w; ++c) {
            double m = mask.at(r, c);
            for (int ch = 0; ch < frame.c; ++ch)
                d_rendered->at(r, c, ch) += d_a.at(r, c, ch) * m;
        }
    return value;
}

/// Gradient chain projected-vertex -> (camera, 3D vertex) for every vertex.
inline void verts2d_backward(const FrameEval& e, const std::vector<Vec2>& d_verts2d,
                             FrameGrad& g) {
    for (size_t i = 0; i < d_verts2d.size(); ++i) {
        if (d_verts2d[i].isZero()) continue;
        project_point_backward(e.cam, e.composed.vertices[i], d_verts2d[i], g.cam,
                               g.d_verts[i]);
    }
}

}  // namespace detail

/// Weighted sum of all objectives over a window, with analytic gradients
/// accumulated per frame when `grads` is non-null.
inline LossBreakdown total_loss(const VideoProblem& problem, const ShapeBasisSet& bases,
                                const ProblemCache& cache, const WindowAux& aux,
                                const Window& window,
                                const std::vector<FrameState>& states,
                                const std::vector<std::pair<int, int>>& pairs,
                                const LossWeights& w, int threads,
                                std::vector<FrameGrad>* grads) {
    const int len = window.length();
    std::vector<detail::FrameEval> evals(len);
    parallel_for(0, len, threads, [&](int k) {
        evals[k] = detail::eval_frame(problem, bases, states[window.begin + k], w,
                                      window.begin + k);
    });

    struct FrameTerms {
        double sil = 0, tex = 0, lap = 0, arap = 0, kp = 0, part = 0;
    };
    std::vector<FrameTerms> terms(len);
    parallel_for(0, len, threads, [&](int k) {
        const int f = window.begin + k;
        detail::FrameEval& e = evals[k];
        FrameGrad* g = grads ? &(*grads)[f] : nullptr;
        FrameTerms& t = terms[k];
        if (w.silhouette > 0) {
            if (!g) {
                t.sil = w.silhouette * niou(e.sil.mask, problem.masks[f]);
            } else {
                Image d_mask(problem.raster.h, problem.raster.w, 1, 0.0);
                t.sil = w.silhouette *
                        niou_backward(e.sil.mask, problem.masks[f], w.silhouette, d_mask);
                std::vector<Vec2> d_v2(e.verts2d.size(), Vec2::Zero());
                render_silhouette_backward(e.sil, d_mask, d_v2);
                detail::verts2d_backward(e, d_v2, *g);
            }
        }
        if (w.texture > 0) {
            shade(e.vis, problem.chart, e.uv_texture);
            if (!g) {
                t.tex = w.texture *
                        detail::masked_frame_distance(e.vis.rgb, problem.frames[f],
                                                      problem.masks[f], problem.dist_kind,
                                                      0.0, nullptr);
            } else {
                Image d_rgb(problem.raster.h, problem.raster.w, 3, 0.0);
                t.tex = w.texture * detail::masked_frame_distance(
                                        e.vis.rgb, problem.frames[f], problem.masks[f],
                                        problem.dist_kind, w.texture, &d_rgb);
                Image d_uv_tex(problem.chart.tex_h, problem.chart.tex_w, 3, 0.0);
                shade_backward(e.vis, problem.chart, d_rgb, d_uv_tex);
                sample_texture_flow_backward(problem.frames[f], states[f].texture_flow,
                                             d_uv_tex, g->d_flow);
            }
        }
        if (w.laplacian > 0) {
            t.lap = w.laplacian * laplacian_smoothness(e.composed.vertices, cache.rings);
            if (g)
                laplacian_smoothness_backward(e.composed.vertices, cache.rings,
                                              w.laplacian, g->d_verts);
        }
        if (w.arap > 0) {
            if (!g) {
                t.arap = w.arap * arap_energy(e.composed.base_vertices,
                                              e.composed.vertices, cache.cotan);
            } else {
                t.arap = w.arap * arap_energy_backward(e.composed.base_vertices,
                                                       e.composed.vertices, cache.cotan,
                                                       w.arap, g->d_verts, g->d_base_extra);
            }
        }
        if (w.keypoint > 0 && !aux.canonical_keypoints.empty() &&
            f < static_cast<int>(problem.keypoints.size())) {
            if (!g) {
                t.kp = w.keypoint *
                       loss_keypoint(aux.canonical_keypoints, e.composed.vertices,
                                     problem.mesh.faces, e.cam, problem.keypoints[f]);
            } else {
                t.kp = w.keypoint * loss_keypoint_backward(
                                        aux.canonical_keypoints, e.composed.vertices,
                                        problem.mesh.faces, e.cam, problem.keypoints[f],
                                        w.keypoint, g->d_verts, g->cam);
            }
        }
        if (w.part > 0 && !aux.part_uv.vertex_part.empty()) {
            if (!g) {
                t.part = w.part * loss_part_correspondence(
                                      e.composed.vertices, e.cam, aux.part_uv.vertex_part,
                                      cache.part_samples[f], problem.num_parts);
            } else {
                t.part = w.part * loss_part_correspondence_backward(
                                      e.composed.vertices, e.cam, aux.part_uv.vertex_part,
                                      cache.part_samples[f], problem.num_parts, w.part,
                                      g->d_verts, g->cam);
            }
        }
    });

    LossBreakdown out;
    double sil = 0, tex = 0, lap = 0, arap = 0, kp = 0, part = 0;
    for (const auto& t : terms) {
        sil += t.sil;
        tex += t.tex;
        lap += t.lap;
        arap += t.arap;
        kp += t.kp;
        part += t.part;
    }
    if (w.silhouette > 0) out.add("silhouette", sil);
    if (w.texture > 0) out.add("texture", tex);
    if (w.laplacian > 0) out.add("laplacian", lap);
    if (w.arap > 0) out.add("arap", arap);
    if (w.keypoint > 0) out.add("keypoint", kp);
    if (w.part > 0) out.add("part", part);

    // frame-pair invariance terms
    double tswap = 0, bswap = 0;
    for (const auto& [fi, fj] : pairs) {
        const int ki = fi - window.begin, kj = fj - window.begin;
        detail::FrameEval& ei = evals[ki];
        detail::FrameEval& ej = evals[kj];
        if (w.texture_swap > 0) {
            auto swap_term = [&](detail::FrameEval& e, int frame, const Image& other_tex,
                                 int other_frame) {
                shade(e.vis, problem.chart, other_tex);
                if (!grads)
                    return detail::masked_frame_distance(e.vis.rgb, problem.frames[frame],
                                                         problem.masks[frame],
                                                         problem.dist_kind, 0.0, nullptr);
                Image d_rgb(problem.raster.h, problem.raster.w, 3, 0.0);
                double v = detail::masked_frame_distance(
                    e.vis.rgb, problem.frames[frame], problem.masks[frame],
                    problem.dist_kind, w.texture_swap, &d_rgb);
                Image d_uv_tex(problem.chart.tex_h, problem.chart.tex_w, 3, 0.0);
                shade_backward(e.vis, problem.chart, d_rgb, d_uv_tex);
                sample_texture_flow_backward(problem.frames[other_frame],
                                             states[other_frame].texture_flow, d_uv_tex,
                                             (*grads)[other_frame].d_flow);
                return v;
            };
            tswap += w.texture_swap * (swap_term(ei, fi, ej.uv_texture, fj) +
                                       swap_term(ej, fj, ei.uv_texture, fi));
        }
        if (w.base_swap > 0) {
            auto swap_term = [&](const detail::FrameEval& e_base,
                                 const detail::FrameEval& e_pose, int pose_frame,
                                 int base_frame) {
                const int nv = problem.mesh.num_vertices();
                std::vector<Vec3> hybrid(nv);
                for (int i = 0; i < nv; ++i)
                    hybrid[i] = e_base.composed.base_vertices[i] +
                                states[pose_frame].shape.delta_v[i];
                std::vector<Vec2> v2 = project_vertices(e_pose.cam, hybrid);
                SilhouetteRender sr =
                    render_silhouette(v2, problem.mesh.faces, problem.raster);
                if (!grads) return niou(sr.mask, problem.masks[pose_frame]);
                Image d_mask(problem.raster.h, problem.raster.w, 1, 0.0);
                double v = niou_backward(sr.mask, problem.masks[pose_frame], w.base_swap,
                                         d_mask);
                std::vector<Vec2> d_v2(nv, Vec2::Zero());
                render_silhouette_backward(sr, d_mask, d_v2);
                for (int i = 0; i < nv; ++i) {
                    if (d_v2[i].isZero()) continue;
                    Vec3 d_hybrid = Vec3::Zero();
                    project_point_backward(e_pose.cam, hybrid[i], d_v2[i],
                                           (*grads)[pose_frame].cam, d_hybrid);
                    (*grads)[base_frame].d_base_extra[i] += d_hybrid;
                    (*grads)[pose_frame].d_delta_direct[i] += d_hybrid;
                }
                return v;
            };
            bswap += w.base_swap *
                     (swap_term(ej, ei, fi, fj) + swap_term(ei, ej, fj, fi));
        }
    }
    if (w.texture_swap > 0) out.add("texture_swap", tswap);
    if (w.base_swap > 0) out.add("base_swap", bswap);
    return out;
}

// ---------------------------------------------------------------------------
// Window optimization

struct OptimizerConfig {
    double lr = 3e-2;
    uint64_t seed = 0;
    int threads = 0;       // 0: resolve from VMR_THREADS / hardware
    bool shared_beta = true;
};

/// Fresh state: identity camera, uniform beta, zero deformation, flow
/// initialized to the projected texel surface positions.
inline FrameState init_frame_state(const VideoProblem& problem,
                                   const ShapeBasisSet& bases) {
    FrameState s;
    s.camera = WeakPerspectiveCamera::identity();
    s.shape = ShapeParams::zeros(bases.count(), bases.num_vertices());
    s.texture_flow = Image(problem.chart.tex_h, problem.chart.tex_w, 2, 0.0);
    ComposedShape composed = compose_shape(bases, s.shape);
    for (int r = 0; r < problem.chart.tex_h; ++r)
        for (int c = 0; c < problem.chart.tex_w; ++c) {
            const SurfacePoint& sp = problem.chart.texel(r, c);
            if (sp.face < 0) continue;
            Vec3 pos = surface_position(composed.vertices, problem.mesh.faces, sp);
            Vec2 ndc = project_point(s.camera, pos);
            s.texture_flow.at(r, c, 0) = std::clamp(ndc.x(), -1.0, 1.0);
            s.texture_flow.at(r, c, 1) = std::clamp(ndc.y(), -1.0, 1.0);
        }
    return s;
}

/// N_t adaptive-moment iterations on every FrameState in the window.
/// delta_v is frozen for the first ceil(N_t/2) iterations (warm-up); each
/// iteration samples ceil(len/2) random frame pairs for the swap losses.
/// Returns the per-iteration total-loss trace.
inline std::vector<double> optimize_window(const VideoProblem& problem,
                                           const ShapeBasisSet& bases,
                                           const ProblemCache& cache, const Window& window,
                                           const WindowSchedule& sched,
                                           const OptimizerConfig& cfg,
                                           std::vector<FrameState>& states) {
    const int len = window.length();
    const int threads = resolve_threads(cfg.threads);
    ParamLayout lay{bases.count(), bases.num_vertices(), problem.chart.tex_h,
                    problem.chart.tex_w};

    WindowAux aux = build_window_aux(problem, cache, window, states);

    std::vector<std::vector<double>> params(len);
    std::vector<AdamOptimizer> opts(len, AdamOptimizer(lay.size(), cfg.lr));
    for (int k = 0; k < len; ++k)
        params[k] = pack_state(states[window.begin + k], lay);

    // parameter activity mask; delta_v switched on after warm-up
    const int warmup = (sched.iters + 1) / 2;
    std::vector<char> active(lay.size(), 1);
    auto set_delta_active = [&](bool on) {
        for (int i = lay.delta_offset(); i < lay.flow_offset(); ++i)
            active[i] = on ? 1 : 0;
    };

    std::mt19937_64 pair_rng(cfg.seed ^ (static_cast<uint64_t>(window.begin) << 20));
    const int pairs_per_iter = len > 1 ? (len + 1) / 2 : 0;

    const bool symmetric = problem.mode == SupervisionMode::kSelfSupervised;
    std::vector<double> trace;
    trace.reserve(sched.iters);

    for (int iter = 0; iter < sched.iters; ++iter) {
        set_delta_active(iter >= warmup);

        // random perfect matching: every frame lands in exactly one pair,
        // which keeps the stochastic swap gradients evenly spread
        std::vector<std::pair<int, int>> pairs;
        if (pairs_per_iter > 0) {
            std::vector<int> order(len);
            std::iota(order.begin(), order.end(), window.begin);
            std::shuffle(order.begin(), order.end(), pair_rng);
            for (int k = 0; k + 1 < len; k += 2)
                pairs.push_back({std::min(order[k], order[k + 1]),
                                 std::max(order[k], order[k + 1])});
            if (len % 2 == 1) {
                std::uniform_int_distribution<int> pick(0, len - 2);
                int mate = order[pick(pair_rng)];
                pairs.push_back({std::min(order[len - 1], mate),
                                 std::max(order[len - 1], mate)});
            }
        }

        std::vector<FrameGrad> grads(problem.num_frames());
        for (int k = 0; k < len; ++k) grads[window.begin + k] = FrameGrad::zeros(lay);

        LossBreakdown loss = total_loss(problem, bases, cache, aux, window, states, pairs,
                                        problem.weights, threads, &grads);
        trace.push_back(loss.total);

        // shared-beta mode ties the basis logits across the window
        std::vector<std::vector<double>> packed_grads(len);
        parallel_for(0, len, threads, [&](int k) {
            const int f = window.begin + k;
            ComposedShape composed = compose_shape(bases, states[f].shape);
            packed_grads[k] = chain_to_params(grads[f], params[k], bases, composed, lay);
        });
        if (cfg.shared_beta) {
            for (int b = 0; b < lay.n_bases; ++b) {
                double mean_p = 0.0, mean_g = 0.0;
                for (int k = 0; k < len; ++k) {
                    mean_p += params[k][lay.beta_offset() + b];
                    mean_g += packed_grads[k][lay.beta_offset() + b];
                }
                mean_p /= len;
                mean_g /= len;
                for (int k = 0; k < len; ++k) {
                    params[k][lay.beta_offset() + b] = mean_p;
                    packed_grads[k][lay.beta_offset() + b] = mean_g;
                }
            }
        }

        for (int k = 0; k < len; ++k) {
            opts[k].step(params[k], packed_grads[k], &active);
            // keep parameters in their valid domains
            params[k][0] = std::max(params[k][0], 1e-3);  // scale > 0
            for (int i = lay.flow_offset(); i < lay.size(); ++i)
                params[k][i] = std::clamp(params[k][i], -1.0, 1.0);
            FrameState s = unpack_state(params[k], lay);
            if (symmetric)
                s.shape.delta_v = mirror_symmetrize(s.shape.delta_v,
                                                    problem.mesh.mirror_pair,
                                                    problem.mesh.mirror_axis);
            states[window.begin + k] = s;
            params[k] = pack_state(s, lay);
        }
    }
    return trace;
}

// ---------------------------------------------------------------------------
// Full video run

struct FrameReconstruction {
    std::vector<Vec3> vertices;
    std::vector<Vec3> base_vertices;
    WeakPerspectiveCamera camera;
    Image uv_texture;
};

struct VideoResult {
    std::vector<FrameReconstruction> frames;
    std::vector<std::vector<double>> window_traces;
    std::vector<FrameState> states;
};

/// Sliding-window adaptation over the whole video. Frames in window overlap
/// carry their optimized state forward; frames entering a window for the
/// first time warm-start from the latest optimized frame.
inline VideoResult run_video(const VideoProblem& problem, const WindowSchedule& sched,
                             const OptimizerConfig& cfg) {
    if (problem.num_frames() == 0) throw std::runtime_error("run_video: empty video");

    // self-supervised mode: single basis (mean of the provided set)
    ShapeBasisSet bases = problem.bases;
    if (problem.mode == SupervisionMode::kSelfSupervised && bases.count() > 1) {
        std::vector<Vec3> mean(bases.num_vertices(), Vec3::Zero());
        for (const auto& b : bases.bases)
            for (int i = 0; i < bases.num_vertices(); ++i) mean[i] += b[i];
        for (auto& v : mean) v /= bases.count();
        bases.bases = {mean};
    }
    if (bases.count() == 0)
        bases.bases = {problem.mesh.vertices};

    ProblemCache cache = ProblemCache::build(problem, cfg.seed);
    std::vector<Window> windows = make_windows(problem.num_frames(), sched);

    std::vector<FrameState> states(problem.num_frames());
    std::vector<char> initialized(problem.num_frames(), 0);
    FrameState fresh = init_frame_state(problem, bases);

    VideoResult result;
    int last_optimized = -1;
    for (const Window& window : windows) {
        for (int f = window.begin; f < window.end; ++f) {
            if (initialized[f]) continue;
            states[f] = last_optimized >= 0 ? states[last_optimized] : fresh;
            initialized[f] = 1;
        }
        result.window_traces.push_back(
            optimize_window(problem, bases, cache, window, sched, cfg, states));
        last_optimized = window.end - 1;
    }

    result.frames.resize(problem.num_frames());
    for (int f = 0; f < problem.num_frames(); ++f) {
        ComposedShape composed = compose_shape(bases, states[f].shape);
        result.frames[f].vertices = composed.vertices;
        result.frames[f].base_vertices = composed.base_vertices;
        result.frames[f].camera = canonicalize(states[f].camera);
        result.frames[f].uv_texture =
            sample_texture_flow(problem.frames[f], states[f].texture_flow);
    }
    result.states = states;
    return result;
}

}  // namespace vmr
