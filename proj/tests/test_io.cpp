#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include "helpers.hpp"
#include "vmr/problem_io.hpp"
#include "vmr/synth_mesh.hpp"

using namespace vmr;
using vmr::test::TempDir;

namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("frame_name pads the index to four digits") {
    CHECK(frame_name("mesh_", 0, ".obj") == "mesh_0000.obj");
    CHECK(frame_name("frame_", 37, ".ppm") == "frame_0037.ppm");
    CHECK(frame_name("x", 12345, ".y") == "x12345.y");
}

TEST_CASE("weights round trip through save and load") {
    TempDir tmp("io_weights");
    LossWeights w = LossWeights::adaptation_defaults();
    w.silhouette = 0.25;
    w.base_swap = 3.5;
    save_weights(tmp.file("w.txt"), w);
    LossWeights got = load_weights(tmp.file("w.txt"), LossWeights{});
    CHECK(got.silhouette == w.silhouette);
    CHECK(got.texture == w.texture);
    CHECK(got.laplacian == w.laplacian);
    CHECK(got.arap == w.arap);
    CHECK(got.keypoint == w.keypoint);
    CHECK(got.texture_swap == w.texture_swap);
    CHECK(got.part == w.part);
    CHECK(got.base_swap == w.base_swap);
}

TEST_CASE("weights parsing handles comments and overrides the base") {
    TempDir tmp("io_weights_parse");
    {
        std::ofstream out(tmp.file("w.txt"));
        out << "# full-line comment\n";
        out << "\n";
        out << "  silhouette = 0.75  # trailing comment\n";
        out << "arap=4.0\n";
    }
    LossWeights base = LossWeights::adaptation_defaults();
    LossWeights got = load_weights(tmp.file("w.txt"), base);
    CHECK(got.silhouette == 0.75);
    CHECK(got.arap == 4.0);
    CHECK(got.texture == base.texture);  // untouched keys keep the base value
    CHECK(got.part == base.part);
}

TEST_CASE("weights loader rejects malformed lines and unknown keys") {
    TempDir tmp("io_weights_bad");
    {
        std::ofstream out(tmp.file("bad.txt"));
        out << "silhouette 0.5\n";
    }
    CHECK_THROWS_WITH(load_weights(tmp.file("bad.txt"), LossWeights{}),
                      Catch::Matchers::ContainsSubstring("expected key=value"));
    {
        std::ofstream out(tmp.file("unknown.txt"));
        out << "frobnicate=1.0\n";
    }
    CHECK_THROWS(load_weights(tmp.file("unknown.txt"), LossWeights{}));
    CHECK_THROWS(load_weights(tmp.file("missing.txt"), LossWeights{}));
}

TEST_CASE("keypoints round trip with mixed visibility") {
    TempDir tmp("io_keypoints");
    std::vector<KeypointSet> frames(3);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int f = 0; f < 3; ++f) {
        frames[f].points.resize(4);
        frames[f].visible.resize(4);
        for (int k = 0; k < 4; ++k) {
            frames[f].points[k] = Vec2(u(rng), u(rng));
            frames[f].visible[k] = (f + k) % 2 == 0;
        }
    }
    save_keypoints(tmp.file("kp.txt"), frames);
    auto got = load_keypoints(tmp.file("kp.txt"), 3);
    REQUIRE(got.size() == 3);
    for (int f = 0; f < 3; ++f) {
        REQUIRE(got[f].count() == 4);
        for (int k = 0; k < 4; ++k) {
            CHECK((got[f].points[k] - frames[f].points[k]).norm() < 1e-10);
            CHECK(got[f].visible[k] == frames[f].visible[k]);
        }
    }
}

TEST_CASE("keypoint loader rejects out-of-range frame indices") {
    TempDir tmp("io_keypoints_bad");
    {
        std::ofstream out(tmp.file("kp.txt"));
        out << "0 0 0.1 0.2 1\n";
        out << "5 0 0.3 0.4 1\n";
    }
    CHECK_THROWS_WITH(load_keypoints(tmp.file("kp.txt"), 3),
                      Catch::Matchers::ContainsSubstring("out of range"));
}

TEST_CASE("cameras round trip and come back canonicalized") {
    TempDir tmp("io_cameras");
    std::vector<WeakPerspectiveCamera> cams;
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 5; ++i) {
        Eigen::Matrix<double, 7, 1> p;
        p << 0.5 + 0.1 * i, u(rng), u(rng), -std::abs(u(rng)) - 0.2, u(rng), u(rng),
            u(rng);
        cams.push_back(WeakPerspectiveCamera::from_params(p));
    }
    save_cameras(tmp.file("cams.txt"), cams);
    auto got = load_cameras(tmp.file("cams.txt"));
    REQUIRE(got.size() == cams.size());
    for (size_t i = 0; i < cams.size(); ++i) {
        auto expect = canonicalize(cams[i]).params();
        auto actual = got[i].params();
        CHECK(actual[3] >= 0.0);  // qw is nonnegative on disk
        CHECK((actual - expect).norm() < 1e-12);
        // same projection either way
        Vec2 a = project_point(cams[i], Vec3(0.3, -0.2, 0.9));
        Vec2 b = project_point(got[i], Vec3(0.3, -0.2, 0.9));
        CHECK((a - b).norm() < 1e-12);
    }
}

TEST_CASE("mirror table round trips and validates its length") {
    TempDir tmp("io_mirror");
    SphereTemplate tpl = make_uv_sphere(3, 4, 1.0, 8, 8);
    save_mirror(tmp.file("mirror.txt"), tpl.mesh);
    TriMesh copy = tpl.mesh;
    copy.mirror_pair.clear();
    copy.mirror_axis = -1;
    load_mirror(tmp.file("mirror.txt"), copy);
    CHECK(copy.mirror_axis == tpl.mesh.mirror_axis);
    CHECK(copy.mirror_pair == tpl.mesh.mirror_pair);

    TriMesh wrong = tpl.mesh;
    wrong.vertices.push_back(Vec3::Zero());  // now one vertex too many
    CHECK_THROWS_WITH(load_mirror(tmp.file("mirror.txt"), wrong),
                      Catch::Matchers::ContainsSubstring("pairing size"));
}

TEST_CASE("topology_hash is stable and order sensitive") {
    std::vector<std::array<int, 3>> faces = {{0, 1, 2}, {2, 1, 3}};
    CHECK(topology_hash(faces) == topology_hash(faces));
    std::vector<std::array<int, 3>> swapped = {{2, 1, 3}, {0, 1, 2}};
    CHECK(topology_hash(faces) != topology_hash(swapped));
    std::vector<std::array<int, 3>> rotated = {{1, 2, 0}, {2, 1, 3}};
    CHECK(topology_hash(faces) != topology_hash(rotated));
    CHECK(topology_hash({}) != topology_hash(faces));
}

TEST_CASE("basis sets round trip through the manifest") {
    TempDir tmp("io_bases");
    TriMesh ico = make_icosphere(0, 1.0);
    ShapeBasisSet bases;
    for (int b = 0; b < 3; ++b)
        bases.bases.push_back(vmr::test::jitter(ico.vertices, 0.05, 100 + b));
    save_basis_set(tmp.file("bases"), bases, ico.faces);
    ShapeBasisSet got =
        load_basis_set((fs::path(tmp.file("bases")) / "manifest.txt").string(),
                       ico.faces);
    REQUIRE(got.count() == 3);
    for (int b = 0; b < 3; ++b)
        for (size_t i = 0; i < ico.vertices.size(); ++i)
            CHECK((got.bases[b][i] - bases.bases[b][i]).norm() < 1e-6);
}

TEST_CASE("basis loading rejects a topology mismatch") {
    TempDir tmp("io_bases_bad");
    TriMesh ico = make_icosphere(0, 1.0);
    ShapeBasisSet bases;
    bases.bases.push_back(ico.vertices);
    save_basis_set(tmp.file("bases"), bases, ico.faces);
    TriMesh other = make_icosphere(1, 1.0);
    CHECK_THROWS(load_basis_set(
        (fs::path(tmp.file("bases")) / "manifest.txt").string(), other.faces));
}

TEST_CASE("ppm and pgm files round trip exactly at 8 bits") {
    TempDir tmp("io_pnm");
    std::mt19937_64 rng(19);
    std::uniform_int_distribution<int> byte(0, 255);

    Image rgb(5, 7, 3);
    for (auto& v : rgb.data) v = byte(rng) / 255.0;
    save_ppm(tmp.file("a.ppm"), rgb);
    Image rgb2 = load_pnm(tmp.file("a.ppm"));
    REQUIRE(rgb2.same_shape(rgb));
    for (size_t i = 0; i < rgb.size(); ++i)
        CHECK(std::abs(rgb2.data[i] - rgb.data[i]) < 1e-12);

    Image gray(4, 6, 1);
    for (auto& v : gray.data) v = byte(rng) / 255.0;
    save_pgm(tmp.file("a.pgm"), gray);
    Image gray2 = load_pnm(tmp.file("a.pgm"));
    REQUIRE(gray2.same_shape(gray));
    for (size_t i = 0; i < gray.size(); ++i)
        CHECK(std::abs(gray2.data[i] - gray.data[i]) < 1e-12);

    Image labels(3, 5, 1);
    for (auto& v : labels.data) v = byte(rng) % 9;  // small label ids
    save_pgm_labels(tmp.file("labels.pgm"), labels);
    Image labels2 = load_pgm_labels(tmp.file("labels.pgm"));
    REQUIRE(labels2.same_shape(labels));
    for (size_t i = 0; i < labels.size(); ++i)
        CHECK(labels2.data[i] == labels.data[i]);

    CHECK_THROWS(save_ppm(tmp.file("bad.ppm"), gray));
    CHECK_THROWS(save_pgm(tmp.file("bad.pgm"), rgb));
}

TEST_CASE("problem directories round trip through save and load") {
    TempDir tmp("io_problem");
    SynthConfig cfg;
    cfg.frames = 2;
    cfg.res = 16;
    cfg.tex_res = 8;
    cfg.rings = 3;
    cfg.segments = 4;
    cfg.n_bases = 2;
    cfg.num_parts = 3;
    cfg.num_keypoints = 4;
    SyntheticVideo synth = make_synthetic_video(5, cfg);
    save_problem(tmp.file("prob"), synth);

    LoadedProblem loaded =
        load_problem((fs::path(tmp.file("prob")) / "manifest.txt").string());
    const VideoProblem& orig = synth.problem;
    const VideoProblem& got = loaded.problem;

    CHECK(got.num_frames() == orig.num_frames());
    CHECK(got.raster.h == orig.raster.h);
    CHECK(got.raster.w == orig.raster.w);
    CHECK(got.chart.tex_h == orig.chart.tex_h);
    CHECK(got.chart.tex_w == orig.chart.tex_w);
    CHECK(got.num_parts == orig.num_parts);
    CHECK(got.mesh.faces == orig.mesh.faces);
    CHECK(got.mesh.mirror_pair == orig.mesh.mirror_pair);
    CHECK(got.mesh.mirror_axis == orig.mesh.mirror_axis);
    REQUIRE(got.mesh.num_vertices() == orig.mesh.num_vertices());
    for (int i = 0; i < got.mesh.num_vertices(); ++i)
        CHECK((got.mesh.vertices[i] - orig.mesh.vertices[i]).norm() < 1e-6);

    // images survive the 8-bit quantization exactly because they were written
    // from 8-bit data in the first place
    REQUIRE(got.frames.size() == orig.frames.size());
    for (size_t f = 0; f < got.frames.size(); ++f) {
        REQUIRE(got.frames[f].same_shape(orig.frames[f]));
        for (size_t i = 0; i < got.frames[f].size(); ++i)
            CHECK(std::abs(got.frames[f].data[i] - orig.frames[f].data[i]) <
                  0.5 / 255.0 + 1e-12);
        REQUIRE(got.masks[f].same_shape(orig.masks[f]));
        for (size_t i = 0; i < got.masks[f].size(); ++i)
            CHECK(std::abs(got.masks[f].data[i] - orig.masks[f].data[i]) <
                  0.5 / 255.0 + 1e-12);
        REQUIRE(got.part_maps[f].same_shape(orig.part_maps[f]));
        for (size_t i = 0; i < got.part_maps[f].size(); ++i)
            CHECK(got.part_maps[f].data[i] == orig.part_maps[f].data[i]);
    }

    REQUIRE(got.keypoints.size() == orig.keypoints.size());
    for (size_t f = 0; f < got.keypoints.size(); ++f)
        for (int k = 0; k < got.keypoints[f].count(); ++k) {
            CHECK((got.keypoints[f].points[k] - orig.keypoints[f].points[k]).norm() <
                  1e-9);
            CHECK(got.keypoints[f].visible[k] == orig.keypoints[f].visible[k]);
        }

    REQUIRE(got.bases.count() == orig.bases.count());
    for (int b = 0; b < got.bases.count(); ++b)
        for (size_t i = 0; i < got.bases.bases[b].size(); ++i)
            CHECK((got.bases.bases[b][i] - orig.bases.bases[b][i]).norm() < 1e-6);

    CHECK(loaded.gt_dir == (fs::path(tmp.file("prob")) / "gt").string());
    CHECK(fs::exists(fs::path(loaded.gt_dir) / "cameras.txt"));
    CHECK(fs::exists(fs::path(loaded.gt_dir) / "mesh_0000.obj"));
    CHECK(fs::exists(fs::path(loaded.gt_dir) / "masks" / "mask_0000.pgm"));
    CHECK(fs::exists(fs::path(loaded.gt_dir) / "texture.ppm"));

    auto gt_cams = load_cameras((fs::path(loaded.gt_dir) / "cameras.txt").string());
    REQUIRE(gt_cams.size() == synth.gt_cameras.size());
    for (size_t f = 0; f < gt_cams.size(); ++f)
        CHECK((gt_cams[f].params() - canonicalize(synth.gt_cameras[f]).params())
                  .norm() < 1e-12);
}

TEST_CASE("problem loader requires a charted template") {
    TempDir tmp("io_problem_nouv");
    TriMesh ico = make_icosphere(0, 1.0);
    save_obj(tmp.file("template.obj"), ico);  // no UV chart
    {
        std::ofstream man(tmp.file("manifest.txt"));
        man << "template template.obj\n";
        man << "res 8 8\n";
        man << "tex 4 4\n";
        man << "frames 1\n";
        man << "frame 0 f.ppm m.pgm -\n";
    }
    CHECK_THROWS_WITH(load_problem(tmp.file("manifest.txt")),
                      Catch::Matchers::ContainsSubstring("no UV chart"));
}

TEST_CASE("reports round trip including missing cells") {
    TempDir tmp("io_report");
    std::vector<FrameMetrics> rows(3);
    rows[0] = {0.9, 0.8, 0.7, 0.01};
    rows[1] = {0.5, 0.6, -1.0, 0.03};
    rows[2] = {0.7, 0.4, 0.5, -1.0};
    save_report(tmp.file("report.txt"), rows);
    Report rep = load_report(tmp.file("report.txt"));
    REQUIRE(rep.rows.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(rep.rows[i].j == Catch::Approx(rows[i].j).margin(1e-9));
        CHECK(rep.rows[i].f == Catch::Approx(rows[i].f).margin(1e-9));
        if (rows[i].pck < 0) CHECK(rep.rows[i].pck < 0);
        else CHECK(rep.rows[i].pck == Catch::Approx(rows[i].pck).margin(1e-9));
        if (rows[i].chamfer < 0) CHECK(rep.rows[i].chamfer < 0);
        else CHECK(rep.rows[i].chamfer == Catch::Approx(rows[i].chamfer).margin(1e-9));
    }
    // means: J and F over all rows, PCK/chamfer over available rows only
    CHECK(rep.mean.j == Catch::Approx((0.9 + 0.5 + 0.7) / 3).margin(1e-9));
    CHECK(rep.mean.f == Catch::Approx((0.8 + 0.6 + 0.4) / 3).margin(1e-9));
    CHECK(rep.mean.pck == Catch::Approx((0.7 + 0.5) / 2).margin(1e-9));
    CHECK(rep.mean.chamfer == Catch::Approx((0.01 + 0.03) / 2).margin(1e-9));
}

TEST_CASE("report means show a dash when a column is entirely missing") {
    TempDir tmp("io_report_dash");
    std::vector<FrameMetrics> rows(2);
    rows[0] = {1.0, 1.0, -1.0, -1.0};
    rows[1] = {0.8, 0.9, -1.0, -1.0};
    save_report(tmp.file("report.txt"), rows);
    std::string text = slurp(tmp.file("report.txt"));
    CHECK(text.find("mean") != std::string::npos);
    Report rep = load_report(tmp.file("report.txt"));
    CHECK(rep.mean.pck < 0);
    CHECK(rep.mean.chamfer < 0);
    CHECK(rep.mean.j == Catch::Approx(0.9).margin(1e-9));
}

TEST_CASE("identical saves produce byte-identical reports") {
    TempDir tmp("io_report_bytes");
    std::vector<FrameMetrics> rows(4);
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& r : rows) r = {u(rng), u(rng), u(rng), u(rng)};
    save_report(tmp.file("a.txt"), rows);
    save_report(tmp.file("b.txt"), rows);
    CHECK(slurp(tmp.file("a.txt")) == slurp(tmp.file("b.txt")));
}
