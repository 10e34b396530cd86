#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "vmr/adaptation.hpp"
#include "vmr/evalbench.hpp"

namespace vmr {

struct GradCheckResult {
    std::string loss;
    double tolerance = 0.0;
    std::map<std::string, double> block_max_rel_err;  // block name -> max rel error
    bool pass = false;

    double worst() const {
        double m = 0.0;
        for (const auto& [k, v] : block_max_rel_err) m = std::max(m, v);
        return m;
    }
};

inline const std::vector<std::string>& gradcheck_losses() {
    static const std::vector<std::string> names = {
        "keypoint", "laplacian", "arap",         "silhouette", "texture",
        "part",     "base_swap", "texture_swap", "total"};
    return names;
}

namespace detail {

struct GcInstance {
    VideoProblem problem;
    ProblemCache cache;
    WindowAux aux;
    Window window;
    ParamLayout lay;
    std::vector<std::vector<double>> params;  // per frame
    std::vector<std::pair<int, int>> pairs;
};

inline GcInstance make_gc_instance(uint64_t seed, const LossWeights& w) {
    SynthConfig cfg;
    cfg.frames = 2;
    cfg.res = 16;
    cfg.tex_res = 8;
    cfg.rings = 3;
    cfg.segments = 4;  // 10 vertices
    cfg.n_bases = 2;
    cfg.num_parts = 3;
    cfg.num_keypoints = 5;
    SyntheticVideo synth = make_synthetic_video(seed, cfg);
    GcInstance inst;
    inst.problem = std::move(synth.problem);
    inst.problem.weights = w;
    inst.problem.raster.sigma = 2e-3;  // a few pixels of gradient band at 16x16
    inst.window = {0, 2, 1};
    inst.pairs = {{0, 1}};
    inst.lay = ParamLayout{cfg.n_bases, inst.problem.mesh.num_vertices(),
                           inst.problem.chart.tex_h, inst.problem.chart.tex_w};

    // states: ground truth plus a seeded perturbation
    std::mt19937_64 rng(seed * 7919 + 13);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<FrameState> states(2);
    for (int f = 0; f < 2; ++f) {
        FrameState s;
        s.camera = synth.gt_cameras[f];
        s.camera.scale += 0.03 * u(rng);
        s.camera.trans += 0.02 * Vec2(u(rng), u(rng));
        Vec4 q = s.camera.quat;
        for (int k = 0; k < 4; ++k) q[k] += 0.03 * u(rng);
        s.camera.quat = normalize_quaternion(q);
        s.shape = synth.gt_params[f];
        for (int b = 0; b < cfg.n_bases; ++b) s.shape.beta[b] += 0.2 * u(rng);
        for (auto& d : s.shape.delta_v) d += 0.01 * Vec3(u(rng), u(rng), u(rng));
        s.texture_flow = synth.gt_flows[f];
        for (double& v : s.texture_flow.data) v = std::clamp(v + 0.03 * u(rng), -0.99, 0.99);
        states[f] = s;
    }

    inst.cache = ProblemCache::build(inst.problem, seed);
    inst.aux = build_window_aux(inst.problem, inst.cache, inst.window, states);
    for (int f = 0; f < 2; ++f) inst.params.push_back(pack_state(states[f], inst.lay));
    return inst;
}

inline double gc_eval(const GcInstance& inst, const LossWeights& w,
                      const std::vector<std::vector<double>>& params,
                      std::vector<FrameGrad>* grads) {
    std::vector<FrameState> states(2);
    for (int f = 0; f < 2; ++f) states[f] = unpack_state(params[f], inst.lay);
    LossBreakdown bd = total_loss(inst.problem, inst.problem.bases, inst.cache, inst.aux,
                                  inst.window, states, inst.pairs, w, 1, grads);
    return bd.total;
}

/// Max relative error between analytic and central-difference gradients over
/// the given parameter blocks (both frames).
inline std::map<std::string, double> gc_compare(
    const GcInstance& inst, const LossWeights& w,
    const std::vector<std::string>& blocks) {
    std::vector<FrameGrad> grads(2);
    for (int f = 0; f < 2; ++f) grads[f] = FrameGrad::zeros(inst.lay);
    gc_eval(inst, w, inst.params, &grads);

    std::vector<std::vector<double>> analytic(2);
    for (int f = 0; f < 2; ++f) {
        std::vector<FrameState> states = {unpack_state(inst.params[0], inst.lay),
                                          unpack_state(inst.params[1], inst.lay)};
        ComposedShape composed =
            compose_shape(inst.problem.bases, states[f].shape);
        analytic[f] = chain_to_params(grads[f], inst.params[f], inst.problem.bases,
                                      composed, inst.lay);
    }

    auto block_range = [&](const std::string& name) -> std::pair<int, int> {
        if (name == "camera") return {0, 7};
        if (name == "beta") return {inst.lay.beta_offset(), inst.lay.delta_offset()};
        if (name == "delta") return {inst.lay.delta_offset(), inst.lay.flow_offset()};
        if (name == "flow") return {inst.lay.flow_offset(), inst.lay.size()};
        throw std::runtime_error("unknown parameter block: " + name);
    };

    std::map<std::string, double> out;
    for (const auto& block : blocks) {
        auto [lo, hi] = block_range(block);
        double worst = 0.0;
        for (int f = 0; f < 2; ++f) {
            for (int i = lo; i < hi; ++i) {
                std::vector<std::vector<double>> p = inst.params;
                double h0 = 1e-5 * std::max(1.0, std::abs(p[f][i]));
                auto central = [&](double step) {
                    p[f][i] = inst.params[f][i] + step;
                    double plus = gc_eval(inst, w, p, nullptr);
                    p[f][i] = inst.params[f][i] - step;
                    double minus = gc_eval(inst, w, p, nullptr);
                    return (plus - minus) / (2.0 * step);
                };
                // Richardson-extrapolated central difference. The soft
                // rasterizer's distance-to-boundary min has kinks; when the
                // two step sizes disagree the step straddles one, so shrink
                // until the estimate is in the asymptotic regime.
                double fd = 0.0;
                for (int attempt = 0; attempt < 3; ++attempt) {
                    double h = h0 / std::pow(10.0, attempt);
                    double d1 = central(h), d2 = central(h / 2);
                    fd = (4.0 * d2 - d1) / 3.0;
                    if (std::abs(d1 - d2) <= 1e-4 * std::max(std::abs(fd), 1.0)) break;
                }
                double a = analytic[f][i];
                double denom = std::max({std::abs(a), std::abs(fd), 1e-6});
                worst = std::max(worst, std::abs(a - fd) / denom);
            }
        }
        out[block] = worst;
    }
    return out;
}

}  // namespace detail

/// Finite-difference verification of one registered loss on a seeded tiny
/// instance (10 vertices, 16x16 images). Texture-mediated losses are checked
/// on the flow block only: visibility is hard, so the renderer is by design
/// not differentiable w.r.t. geometry through the texture terms.
inline GradCheckResult gradcheck(const std::string& loss, uint64_t seed) {
    GradCheckResult res;
    res.loss = loss;

    LossWeights zero;
    zero.silhouette = zero.texture = zero.laplacian = zero.arap = 0.0;
    zero.texture_swap = zero.part = zero.base_swap = zero.keypoint = 0.0;

    const std::vector<std::string> geom_blocks = {"camera", "beta", "delta"};
    LossWeights w = zero;
    std::vector<std::string> blocks;
    if (loss == "keypoint") {
        w.keypoint = 1.0;
        blocks = geom_blocks;
        res.tolerance = 1e-6;
    } else if (loss == "laplacian") {
        w.laplacian = 1.0;
        blocks = {"beta", "delta"};
        res.tolerance = 1e-6;
    } else if (loss == "arap") {
        w.arap = 1.0;
        blocks = {"beta", "delta"};
        res.tolerance = 1e-3;
    } else if (loss == "silhouette") {
        w.silhouette = 1.0;
        blocks = geom_blocks;
        res.tolerance = 1e-3;
    } else if (loss == "texture") {
        w.texture = 1.0;
        blocks = {"flow"};
        res.tolerance = 1e-3;
    } else if (loss == "part") {
        w.part = 1.0;
        blocks = geom_blocks;
        res.tolerance = 1e-3;
    } else if (loss == "base_swap") {
        w.base_swap = 1.0;
        blocks = geom_blocks;
        res.tolerance = 1e-3;
    } else if (loss == "texture_swap") {
        w.texture_swap = 1.0;
        blocks = {"flow"};
        res.tolerance = 1e-3;
    } else if (loss == "total") {
        // full adaptation weights, split into the differentiable block sets:
        // texture terms on flow, everything else on the geometry blocks
        res.tolerance = 1e-3;
        LossWeights tex = zero;
        tex.texture = 0.5;
        tex.texture_swap = 2.0;
        detail::GcInstance inst = detail::make_gc_instance(seed, tex);
        for (const auto& [k, v] : detail::gc_compare(inst, tex, {"flow"}))
            res.block_max_rel_err["tex/" + k] = v;
        LossWeights geo = LossWeights::adaptation_defaults();
        geo.texture = 0.0;
        geo.texture_swap = 0.0;
        detail::GcInstance inst2 = detail::make_gc_instance(seed, geo);
        for (const auto& [k, v] : detail::gc_compare(inst2, geo, geom_blocks))
            res.block_max_rel_err["geo/" + k] = v;
        res.pass = res.worst() < res.tolerance;
        return res;
    } else {
        throw std::runtime_error("gradcheck: unknown loss '" + loss + "'");
    }

    detail::GcInstance inst = detail::make_gc_instance(seed, w);
    res.block_max_rel_err = detail::gc_compare(inst, w, blocks);
    res.pass = res.worst() < res.tolerance;
    return res;
}

}  // namespace vmr
