#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "vmr/adaptation.hpp"
#include "vmr/evalbench.hpp"
#include "vmr/geometry.hpp"
#include "vmr/image.hpp"
#include "vmr/losses.hpp"
#include "vmr/shape.hpp"

namespace vmr {

namespace fs = std::filesystem;

inline std::string frame_name(const std::string& prefix, int i, const std::string& ext) {
    std::ostringstream ss;
    ss << prefix << std::setw(4) << std::setfill('0') << i << ext;
    return ss.str();
}

// ---------------------------------------------------------------------------
// Weights config: flat key=value lines, '#' comments

inline LossWeights load_weights(const std::string& path, LossWeights base) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open weights file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            std::istringstream check(line);
            std::string tok;
            if (check >> tok)
                throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                         ": expected key=value");
            continue;
        }
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        auto strip = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        base.by_key(strip(key)) = std::stod(strip(val));
    }
    return base;
}

inline void save_weights(const std::string& path, const LossWeights& w) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "silhouette=" << w.silhouette << "\ntexture=" << w.texture
        << "\nlaplacian=" << w.laplacian << "\narap=" << w.arap
        << "\nkeypoint=" << w.keypoint << "\ntexture_swap=" << w.texture_swap
        << "\npart=" << w.part << "\nbase_swap=" << w.base_swap << "\n";
}

// ---------------------------------------------------------------------------
// Keypoint files: one "frame index x y visible" record per line

inline void save_keypoints(const std::string& path,
                           const std::vector<KeypointSet>& frames) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(12);
    for (size_t f = 0; f < frames.size(); ++f)
        for (int k = 0; k < frames[f].count(); ++k)
            out << f << " " << k << " " << frames[f].points[k].x() << " "
                << frames[f].points[k].y() << " " << (frames[f].visible[k] ? 1 : 0)
                << "\n";
}

inline std::vector<KeypointSet> load_keypoints(const std::string& path, int num_frames) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open keypoints file: " + path);
    int nk = 0;
    std::vector<std::tuple<int, int, double, double, int>> records;
    int f, k, vis;
    double x, y;
    while (in >> f >> k >> x >> y >> vis) {
        if (f < 0 || f >= num_frames)
            throw std::runtime_error(path + ": frame index out of range");
        records.push_back({f, k, x, y, vis});
        nk = std::max(nk, k + 1);
    }
    std::vector<KeypointSet> out(num_frames);
    for (auto& set : out) {
        set.points.assign(nk, Vec2::Zero());
        set.visible.assign(nk, false);
    }
    for (const auto& [fi, ki, xi, yi, vi] : records) {
        out[fi].points[ki] = Vec2(xi, yi);
        out[fi].visible[ki] = vi != 0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Camera trajectories: 7 numbers (s tx ty qw qx qy qz) per line

inline void save_cameras(const std::string& path,
                         const std::vector<WeakPerspectiveCamera>& cams) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(15);
    for (const auto& cam : cams) {
        auto p = canonicalize(cam).params();
        for (int k = 0; k < 7; ++k) out << p[k] << (k == 6 ? '\n' : ' ');
    }
}

inline std::vector<WeakPerspectiveCamera> load_cameras(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open camera file: " + path);
    std::vector<WeakPerspectiveCamera> out;
    Eigen::Matrix<double, 7, 1> p;
    while (in >> p[0] >> p[1] >> p[2] >> p[3] >> p[4] >> p[5] >> p[6])
        out.push_back(WeakPerspectiveCamera::from_params(p));
    return out;
}

// ---------------------------------------------------------------------------
// Mirror pairing table: first line the axis, then one pair index per vertex

inline void save_mirror(const std::string& path, const TriMesh& mesh) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << mesh.mirror_axis << "\n";
    for (int j : mesh.mirror_pair) out << j << "\n";
}

inline void load_mirror(const std::string& path, TriMesh& mesh) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open mirror file: " + path);
    in >> mesh.mirror_axis;
    mesh.mirror_pair.clear();
    int j;
    while (in >> j) mesh.mirror_pair.push_back(j);
    if (static_cast<int>(mesh.mirror_pair.size()) != mesh.num_vertices())
        throw std::runtime_error(path + ": pairing size != vertex count");
}

// ---------------------------------------------------------------------------
// Basis sets: numbered OBJs plus a manifest with count and topology hash

inline uint64_t topology_hash(const std::vector<std::array<int, 3>>& faces) {
    uint64_t h = 1469598103934665603ull;  // FNV-1a
    auto mix = [&](uint64_t v) {
        h ^= v;
        h *= 1099511628211ull;
    };
    mix(faces.size());
    for (const auto& f : faces)
        for (int k = 0; k < 3; ++k) mix(static_cast<uint64_t>(f[k]));
    return h;
}

inline void save_basis_set(const std::string& dir, const ShapeBasisSet& bases,
                           const std::vector<std::array<int, 3>>& faces) {
    fs::create_directories(dir);
    std::ofstream man(fs::path(dir) / "manifest.txt");
    if (!man) throw std::runtime_error("cannot write basis manifest in " + dir);
    man << "count " << bases.count() << "\n";
    man << "topology_hash " << topology_hash(faces) << "\n";
    for (int b = 0; b < bases.count(); ++b) {
        std::string name = frame_name("basis_", b, ".obj");
        TriMesh m;
        m.vertices = bases.bases[b];
        m.faces = faces;
        save_obj((fs::path(dir) / name).string(), m);
        man << "basis " << b << " " << name << "\n";
    }
}

inline ShapeBasisSet load_basis_set(const std::string& manifest_path,
                                    const std::vector<std::array<int, 3>>& expect_faces) {
    std::ifstream man(manifest_path);
    if (!man) throw std::runtime_error("cannot open basis manifest: " + manifest_path);
    fs::path dir = fs::path(manifest_path).parent_path();
    int count = -1;
    uint64_t hash = 0;
    std::vector<std::string> files;
    std::string tag;
    while (man >> tag) {
        if (tag == "count") man >> count;
        else if (tag == "topology_hash") man >> hash;
        else if (tag == "basis") {
            int b;
            std::string name;
            man >> b >> name;
            files.push_back(name);
        } else {
            throw std::runtime_error(manifest_path + ": unknown tag " + tag);
        }
    }
    if (count < 1 || static_cast<int>(files.size()) != count)
        throw std::runtime_error(manifest_path + ": inconsistent basis count");
    ShapeBasisSet out;
    for (const auto& name : files) {
        ObjData obj = load_obj((dir / name).string());
        if (!expect_faces.empty()) {
            if (topology_hash(obj.mesh.faces) != topology_hash(expect_faces))
                throw std::runtime_error(name + ": basis topology differs from template");
        }
        out.bases.push_back(obj.mesh.vertices);
    }
    if (!expect_faces.empty() && hash != 0 && hash != topology_hash(expect_faces))
        throw std::runtime_error(manifest_path + ": topology hash mismatch");
    return out;
}

// ---------------------------------------------------------------------------
// Problem directories

struct LoadedProblem {
    VideoProblem problem;
    std::string gt_dir;  // empty if the manifest carries no ground truth
};

/// Writes the full problem directory (frames/, masks/, parts/, keypoints.txt,
/// bases/, gt/, manifest.txt) for a synthetic video.
inline void save_problem(const std::string& dir, const SyntheticVideo& synth) {
    const VideoProblem& prob = synth.problem;
    fs::create_directories(fs::path(dir) / "frames");
    fs::create_directories(fs::path(dir) / "masks");
    fs::create_directories(fs::path(dir) / "parts");
    fs::create_directories(fs::path(dir) / "gt" / "masks");

    save_obj((fs::path(dir) / "template.obj").string(), prob.mesh, &prob.chart);
    save_mirror((fs::path(dir) / "mirror.txt").string(), prob.mesh);
    save_keypoints((fs::path(dir) / "keypoints.txt").string(), prob.keypoints);
    save_basis_set((fs::path(dir) / "bases").string(), prob.bases, prob.mesh.faces);

    for (int f = 0; f < prob.num_frames(); ++f) {
        save_ppm((fs::path(dir) / "frames" / frame_name("frame_", f, ".ppm")).string(),
                 prob.frames[f]);
        save_pgm((fs::path(dir) / "masks" / frame_name("mask_", f, ".pgm")).string(),
                 prob.masks[f]);
        save_pgm_labels(
            (fs::path(dir) / "parts" / frame_name("part_", f, ".pgm")).string(),
            prob.part_maps[f]);
        TriMesh gt;
        gt.vertices = synth.gt_vertices[f];
        gt.faces = prob.mesh.faces;
        save_obj((fs::path(dir) / "gt" / frame_name("mesh_", f, ".obj")).string(), gt);
        save_pgm((fs::path(dir) / "gt" / "masks" / frame_name("mask_", f, ".pgm")).string(),
                 synth.gt_masks[f]);
    }
    save_cameras((fs::path(dir) / "gt" / "cameras.txt").string(), synth.gt_cameras);
    save_ppm((fs::path(dir) / "gt" / "texture.ppm").string(), synth.gt_texture);

    std::ofstream man(fs::path(dir) / "manifest.txt");
    if (!man) throw std::runtime_error("cannot write manifest in " + dir);
    man << "template template.obj\n";
    man << "mirror mirror.txt\n";
    man << "tex " << prob.chart.tex_h << " " << prob.chart.tex_w << "\n";
    man << "res " << prob.raster.h << " " << prob.raster.w << "\n";
    man << "parts " << prob.num_parts << "\n";
    man << "frames " << prob.num_frames() << "\n";
    for (int f = 0; f < prob.num_frames(); ++f)
        man << "frame " << f << " frames/" << frame_name("frame_", f, ".ppm") << " masks/"
            << frame_name("mask_", f, ".pgm") << " parts/" << frame_name("part_", f, ".pgm")
            << "\n";
    man << "keypoints keypoints.txt\n";
    man << "bases bases/manifest.txt\n";
    man << "gt gt\n";
}

inline LoadedProblem load_problem(const std::string& manifest_path) {
    std::ifstream man(manifest_path);
    if (!man) throw std::runtime_error("cannot open manifest: " + manifest_path);
    fs::path dir = fs::path(manifest_path).parent_path();
    LoadedProblem out;
    VideoProblem& prob = out.problem;

    std::string template_path, mirror_path, keypoint_path, basis_path;
    int num_frames = -1;
    std::vector<std::array<std::string, 3>> frame_files;
    std::string tag;
    while (man >> tag) {
        if (tag == "template") man >> template_path;
        else if (tag == "mirror") man >> mirror_path;
        else if (tag == "tex") man >> prob.chart.tex_h >> prob.chart.tex_w;
        else if (tag == "res") man >> prob.raster.h >> prob.raster.w;
        else if (tag == "parts") man >> prob.num_parts;
        else if (tag == "frames") man >> num_frames;
        else if (tag == "frame") {
            int f;
            std::array<std::string, 3> files;
            man >> f >> files[0] >> files[1] >> files[2];
            frame_files.push_back(files);
        } else if (tag == "keypoints") man >> keypoint_path;
        else if (tag == "bases") man >> basis_path;
        else if (tag == "gt") {
            std::string g;
            man >> g;
            out.gt_dir = (dir / g).string();
        } else {
            throw std::runtime_error(manifest_path + ": unknown tag " + tag);
        }
    }
    if (template_path.empty()) throw std::runtime_error(manifest_path + ": no template");
    if (num_frames < 1 || static_cast<int>(frame_files.size()) != num_frames)
        throw std::runtime_error(manifest_path + ": inconsistent frame count");

    ObjData obj = load_obj((dir / template_path).string());
    if (!obj.has_uv)
        throw std::runtime_error(template_path + ": template carries no UV chart");
    prob.mesh = obj.mesh;
    prob.chart.face_uv = obj.chart.face_uv;
    build_texel_table(prob.chart);
    if (!mirror_path.empty() && mirror_path != "-")
        load_mirror((dir / mirror_path).string(), prob.mesh);

    for (const auto& files : frame_files) {
        prob.frames.push_back(load_pnm((dir / files[0]).string()));
        prob.masks.push_back(load_pnm((dir / files[1]).string()));
        if (files[2] != "-")
            prob.part_maps.push_back(load_pgm_labels((dir / files[2]).string()));
    }
    if (!keypoint_path.empty() && keypoint_path != "-")
        prob.keypoints = load_keypoints((dir / keypoint_path).string(), num_frames);
    if (!basis_path.empty() && basis_path != "-")
        prob.bases = load_basis_set((dir / basis_path).string(), prob.mesh.faces);
    return out;
}

// ---------------------------------------------------------------------------
// Metric reports: `frame J F PCK chamfer` per line, then a `mean` line.
// Missing values (e.g. PCK without keypoints) are written as "-".

struct FrameMetrics {
    double j = 0.0, f = 0.0, pck = -1.0, chamfer = -1.0;  // < 0: unavailable
};

inline void save_report(const std::string& path, const std::vector<FrameMetrics>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(10);
    auto cell = [&](double v) {
        if (v < 0) out << " -";
        else out << " " << v;
    };
    double sj = 0, sf = 0, sp = 0, sc = 0;
    int np = 0, nc = 0;
    for (size_t i = 0; i < rows.size(); ++i) {
        out << i;
        cell(rows[i].j);
        cell(rows[i].f);
        cell(rows[i].pck);
        cell(rows[i].chamfer);
        out << "\n";
        sj += rows[i].j;
        sf += rows[i].f;
        if (rows[i].pck >= 0) { sp += rows[i].pck; ++np; }
        if (rows[i].chamfer >= 0) { sc += rows[i].chamfer; ++nc; }
    }
    const double n = static_cast<double>(rows.size());
    out << "mean " << sj / n << " " << sf / n;
    if (np > 0) out << " " << sp / np; else out << " -";
    if (nc > 0) out << " " << sc / nc; else out << " -";
    out << "\n";
}

struct Report {
    std::vector<FrameMetrics> rows;
    FrameMetrics mean;
};

inline Report load_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open report: " + path);
    Report out;
    std::string line;
    auto cell = [](std::istream& s) {
        std::string tok;
        s >> tok;
        return tok == "-" ? -1.0 : std::stod(tok);
    };
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string first;
        if (!(ss >> first)) continue;
        FrameMetrics m;
        m.j = cell(ss);
        m.f = cell(ss);
        m.pck = cell(ss);
        m.chamfer = cell(ss);
        if (first == "mean") out.mean = m;
        else out.rows.push_back(m);
    }
    return out;
}

}  // namespace vmr
