// Command-line front end: synth / bases / reconstruct / eval / gradcheck.

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vmr/adaptation.hpp"
#include "vmr/evalbench.hpp"
#include "vmr/gradcheck.hpp"
#include "vmr/problem_io.hpp"

namespace {

using namespace vmr;

// VMR_THREADS overrides --threads when set
int effective_threads(int flag_value) {
    if (std::getenv("VMR_THREADS")) return 0;  // resolve_threads reads the env
    return flag_value;
}

int cmd_synth(uint64_t seed, int frames, int res, double noise, int n_bases,
              const std::string& out_dir) {
    SynthConfig cfg;
    cfg.frames = frames;
    cfg.res = res;
    cfg.mask_noise = noise;
    cfg.n_bases = n_bases;
    SyntheticVideo synth = make_synthetic_video(seed, cfg);
    save_problem(out_dir, synth);
    std::cout << "wrote " << frames << " frames to " << out_dir << "\n";
    return 0;
}

int cmd_bases(const std::string& in_dir, int k, uint64_t seed,
              const std::string& out_dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(in_dir))
        if (entry.path().extension() == ".obj") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no OBJ files in " + in_dir);

    std::vector<std::vector<Vec3>> meshes;
    std::vector<std::array<int, 3>> faces;
    for (const auto& file : files) {
        ObjData obj = load_obj(file.string());
        if (faces.empty()) faces = obj.mesh.faces;
        else if (topology_hash(obj.mesh.faces) != topology_hash(faces))
            throw std::runtime_error(file.string() + ": topology differs from " +
                                     files[0].string());
        meshes.push_back(obj.mesh.vertices);
    }
    ShapeBasisSet bases = kmeans_bases(meshes, k, seed);
    save_basis_set(out_dir, bases, faces);
    std::cout << "wrote " << k << " bases to " << out_dir << "\n";
    return 0;
}

std::vector<Vec2> project_keypoints(const std::vector<SurfacePoint>& k3d,
                                    const std::vector<Vec3>& verts,
                                    const std::vector<std::array<int, 3>>& faces,
                                    const WeakPerspectiveCamera& cam) {
    std::vector<Vec2> out;
    for (const auto& sp : k3d)
        out.push_back(project_point(cam, surface_position(verts, faces, sp)));
    return out;
}

Image hard_mask(const std::vector<Vec3>& verts,
                const std::vector<std::array<int, 3>>& faces,
                const WeakPerspectiveCamera& cam, int h, int w) {
    std::vector<Vec2> v2(verts.size());
    std::vector<double> depth(verts.size());
    for (size_t i = 0; i < verts.size(); ++i) {
        Vec3 r = quat_rotate(cam.quat, verts[i]);
        v2[i] = cam.scale * r.head<2>() + cam.trans;
        depth[i] = r.z();
    }
    TextureRender vis = rasterize_visibility(v2, depth, faces, h, w);
    Image mask(h, w, 1, 0.0);
    for (int i = 0; i < h * w; ++i)
        if (vis.hits[i].face >= 0) mask.data[i] = 1.0;
    return mask;
}

std::vector<FrameMetrics> evaluate(const std::string& pred_dir,
                                   const LoadedProblem& loaded) {
    const VideoProblem& prob = loaded.problem;
    const int nf = prob.num_frames();
    std::vector<WeakPerspectiveCamera> cams =
        load_cameras((fs::path(pred_dir) / "cameras.txt").string());
    if (static_cast<int>(cams.size()) != nf)
        throw std::runtime_error("camera count != frame count");

    std::vector<KeypointSet> pred_kp;
    fs::path kp_path = fs::path(pred_dir) / "keypoints_pred.txt";
    if (fs::exists(kp_path)) pred_kp = load_keypoints(kp_path.string(), nf);

    std::vector<FrameMetrics> rows(nf);
    for (int f = 0; f < nf; ++f) {
        fs::path mesh_path = fs::path(pred_dir) / frame_name("mesh_", f, ".obj");
        if (!fs::exists(mesh_path))
            throw std::runtime_error("missing prediction: " + mesh_path.string());
        ObjData pred = load_obj(mesh_path.string());

        Image gt_mask = prob.masks[f];
        if (!loaded.gt_dir.empty()) {
            fs::path clean = fs::path(loaded.gt_dir) / "masks" / frame_name("mask_", f, ".pgm");
            if (fs::exists(clean)) gt_mask = load_pnm(clean.string());
        }
        Image pm = hard_mask(pred.mesh.vertices, pred.mesh.faces, cams[f], gt_mask.h,
                             gt_mask.w);
        rows[f].j = mask_iou(pm, gt_mask);
        rows[f].f = contour_f(pm, gt_mask);

        if (!loaded.gt_dir.empty()) {
            fs::path gt_mesh = fs::path(loaded.gt_dir) / frame_name("mesh_", f, ".obj");
            if (fs::exists(gt_mesh))
                rows[f].chamfer =
                    chamfer_3d(pred.mesh.vertices, load_obj(gt_mesh.string()).mesh.vertices);
        }
        if (!pred_kp.empty() && !prob.keypoints.empty())
            rows[f].pck = pck(pred_kp[f].points, prob.keypoints[f]);
    }
    return rows;
}

int cmd_reconstruct(const std::string& manifest, const std::string& out_dir,
                    const std::string& mode, const WindowSchedule& sched,
                    const std::string& weights_file, uint64_t seed, double lr,
                    bool ablate_invariance, int threads, bool shared_beta) {
    LoadedProblem loaded = load_problem(manifest);
    VideoProblem& prob = loaded.problem;
    prob.mode = mode == "selfsup" ? SupervisionMode::kSelfSupervised
                                  : SupervisionMode::kWeak;
    prob.weights = LossWeights::adaptation_defaults();
    if (!weights_file.empty()) prob.weights = load_weights(weights_file, prob.weights);
    if (prob.mode == SupervisionMode::kSelfSupervised) {
        prob.weights.keypoint = 0.0;
        prob.weights.base_swap = 0.0;
    }
    if (ablate_invariance) {
        prob.weights.part = 0.0;
        prob.weights.texture_swap = 0.0;
        prob.weights.base_swap = 0.0;
    }

    OptimizerConfig cfg;
    cfg.seed = seed;
    cfg.lr = lr;
    cfg.threads = effective_threads(threads);
    cfg.shared_beta = shared_beta;

    VideoResult result = run_video(prob, sched, cfg);

    fs::create_directories(out_dir);
    std::vector<WeakPerspectiveCamera> cams;
    for (int f = 0; f < prob.num_frames(); ++f) {
        TriMesh mesh;
        mesh.vertices = result.frames[f].vertices;
        mesh.faces = prob.mesh.faces;
        save_obj((fs::path(out_dir) / frame_name("mesh_", f, ".obj")).string(), mesh,
                 &prob.chart);
        save_ppm((fs::path(out_dir) / frame_name("texture_", f, ".ppm")).string(),
                 result.frames[f].uv_texture);
        cams.push_back(result.frames[f].camera);
    }
    save_cameras((fs::path(out_dir) / "cameras.txt").string(), cams);

    if (prob.mode == SupervisionMode::kWeak && !prob.keypoints.empty()) {
        // canonical keypoints from the final flows, projected per frame
        std::vector<Image> uv_maps;
        for (int f = 0; f < prob.num_frames(); ++f) {
            Image heat = make_keypoint_heatmaps(prob.keypoints[f], prob.raster.h,
                                                prob.raster.w);
            uv_maps.push_back(heatmap_to_uv(heat, result.states[f].texture_flow));
        }
        auto canon = aggregate_canonical_keypoints(uv_maps, prob.chart);
        std::vector<KeypointSet> pred(prob.num_frames());
        for (int f = 0; f < prob.num_frames(); ++f) {
            pred[f].points = project_keypoints(canon.keypoints, result.frames[f].vertices,
                                               prob.mesh.faces, cams[f]);
            pred[f].visible.assign(pred[f].points.size(), true);
        }
        save_keypoints((fs::path(out_dir) / "keypoints_pred.txt").string(), pred);
    }

    save_report((fs::path(out_dir) / "report.txt").string(), evaluate(out_dir, loaded));
    std::cout << "wrote " << prob.num_frames() << " reconstructions to " << out_dir
              << "\n";
    return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& manifest,
             const std::string& out_path) {
    LoadedProblem loaded = load_problem(manifest);
    std::vector<FrameMetrics> rows = evaluate(pred_dir, loaded);
    save_report(out_path, rows);
    Report rep = load_report(out_path);
    std::cout << "mean " << rep.mean.j << " " << rep.mean.f << " "
              << (rep.mean.pck < 0 ? std::string("-") : std::to_string(rep.mean.pck))
              << " "
              << (rep.mean.chamfer < 0 ? std::string("-")
                                       : std::to_string(rep.mean.chamfer))
              << "\n";
    return 0;
}

int cmd_gradcheck(const std::string& loss, uint64_t seed) {
    std::vector<std::string> losses =
        loss.empty() ? gradcheck_losses() : std::vector<std::string>{loss};
    bool ok = true;
    for (const auto& name : losses) {
        GradCheckResult res = gradcheck(name, seed);
        std::cout << name << " tol=" << res.tolerance << " worst=" << res.worst() << " "
                  << (res.pass ? "pass" : "FAIL");
        for (const auto& [block, err] : res.block_max_rel_err)
            std::cout << " " << block << "=" << err;
        std::cout << "\n";
        ok = ok && res.pass;
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"monocular video mesh reconstruction by direct optimization"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic problem directory");
    uint64_t synth_seed = 0;
    int synth_frames = 60, synth_res = 64, synth_bases = 4;
    double synth_noise = 0.0;
    std::string synth_out;
    synth->add_option("--seed", synth_seed, "random seed");
    synth->add_option("--frames", synth_frames, "frame count")
        ->check(CLI::PositiveNumber);
    synth->add_option("--res", synth_res, "image resolution")->check(CLI::PositiveNumber);
    synth->add_option("--bases", synth_bases, "basis count")->check(CLI::PositiveNumber);
    synth->add_option("--noise", synth_noise, "mask label flip probability");
    synth->add_option("--out", synth_out, "output directory")->required();

    // bases
    auto* bases = app.add_subcommand("bases", "extract a shape basis set by K-Means");
    std::string bases_in, bases_out;
    int bases_k = 8;
    uint64_t bases_seed = 0;
    bases->add_option("--in", bases_in, "directory of topology-shared OBJs")->required();
    bases->add_option("--k", bases_k, "number of bases")->check(CLI::PositiveNumber);
    bases->add_option("--seed", bases_seed, "random seed");
    bases->add_option("--out", bases_out, "output directory")->required();

    // reconstruct
    auto* rec = app.add_subcommand("reconstruct", "run sliding-window adaptation");
    std::string rec_manifest, rec_out, rec_mode = "weak", rec_weights;
    WindowSchedule sched;
    uint64_t rec_seed = 0;
    double rec_lr = 3e-2;
    int rec_threads = 0;
    bool rec_ablate = false, rec_shared_beta = true;
    rec->add_option("--manifest", rec_manifest, "problem manifest")->required();
    rec->add_option("--out", rec_out, "output directory")->required();
    rec->add_option("--mode", rec_mode, "weak | selfsup")
        ->check(CLI::IsMember({"weak", "selfsup"}));
    rec->add_option("--window", sched.window, "window size N_w");
    rec->add_option("--stride", sched.stride, "window stride N_s");
    rec->add_option("--iters", sched.iters, "iterations per window N_t");
    rec->add_option("--weights", rec_weights, "loss weight config file");
    rec->add_option("--seed", rec_seed, "random seed");
    rec->add_option("--lr", rec_lr, "optimizer step size");
    rec->add_option("--threads", rec_threads, "worker threads (0 = all cores)");
    rec->add_flag("--ablate-invariance", rec_ablate,
                  "zero the part/texture-swap/base-swap weights");
    rec->add_flag("--shared-beta,!--per-frame-beta", rec_shared_beta,
                  "tie basis logits across each window (default on)");

    // eval
    auto* eval = app.add_subcommand("eval", "score predictions against a problem");
    std::string eval_pred, eval_manifest, eval_out = "report.txt";
    eval->add_option("--pred", eval_pred, "prediction directory")->required();
    eval->add_option("--manifest", eval_manifest, "problem manifest")->required();
    eval->add_option("--out", eval_out, "report output path");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    std::string gc_loss;
    uint64_t gc_seed = 1;
    gc->add_option("--loss", gc_loss, "single loss to check (default: all)");
    gc->add_option("--seed", gc_seed, "instance seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth)
            return cmd_synth(synth_seed, synth_frames, synth_res, synth_noise,
                             synth_bases, synth_out);
        if (*bases) return cmd_bases(bases_in, bases_k, bases_seed, bases_out);
        if (*rec)
            return cmd_reconstruct(rec_manifest, rec_out, rec_mode, sched, rec_weights,
                                   rec_seed, rec_lr, rec_ablate, rec_threads,
                                   rec_shared_beta);
        if (*eval) return cmd_eval(eval_pred, eval_manifest, eval_out);
        if (*gc) return cmd_gradcheck(gc_loss, gc_seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
