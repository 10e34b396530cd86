#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "helpers.hpp"
#include "vmr/problem_io.hpp"

using namespace vmr;
using vmr::test::TempDir;

namespace fs = std::filesystem;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string output;
};

CliResult run_cli(const std::string& args, const TempDir& tmp,
                  const std::string& log_name) {
    std::string log = tmp.file(log_name);
    std::string cmd = std::string(VMR_CLI_PATH) + " " + args + " > " + log + " 2>&1";
    int rc = std::system(cmd.c_str());
    CliResult res;
    res.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    std::ifstream in(log);
    res.output = std::string(std::istreambuf_iterator<char>(in), {});
    return res;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

bool dirs_byte_identical(const fs::path& a, const fs::path& b) {
    std::vector<fs::path> rel;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), a));
    for (const auto& r : rel) {
        if (!fs::exists(b / r)) return false;
        if (slurp(a / r) != slurp(b / r)) return false;
    }
    size_t count_b = 0;
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) ++count_b;
    return count_b == rel.size();
}

}  // namespace

TEST_CASE("cli synth writes a loadable problem directory") {
    TempDir tmp("cli_synth");
    auto res = run_cli("synth --seed 3 --frames 2 --res 16 --bases 2 --out " +
                           tmp.file("prob"),
                       tmp, "synth.log");
    CHECK(res.exit_code == 0);
    CHECK(res.output.find("wrote 2 frames") != std::string::npos);
    LoadedProblem loaded =
        load_problem((fs::path(tmp.file("prob")) / "manifest.txt").string());
    CHECK(loaded.problem.num_frames() == 2);
    CHECK(loaded.problem.raster.h == 16);
    CHECK(loaded.problem.bases.count() == 2);
    CHECK(!loaded.gt_dir.empty());
}

TEST_CASE("cli synth is deterministic for a fixed seed") {
    TempDir tmp("cli_synth_det");
    auto a = run_cli("synth --seed 9 --frames 2 --res 16 --out " + tmp.file("a"), tmp,
                     "a.log");
    auto b = run_cli("synth --seed 9 --frames 2 --res 16 --out " + tmp.file("b"), tmp,
                     "b.log");
    REQUIRE(a.exit_code == 0);
    REQUIRE(b.exit_code == 0);
    CHECK(dirs_byte_identical(tmp.file("a"), tmp.file("b")));

    auto c = run_cli("synth --seed 10 --frames 2 --res 16 --out " + tmp.file("c"), tmp,
                     "c.log");
    REQUIRE(c.exit_code == 0);
    CHECK(!dirs_byte_identical(tmp.file("a"), tmp.file("c")));
}

TEST_CASE("cli synth rejects a nonpositive frame count") {
    TempDir tmp("cli_synth_bad");
    auto res = run_cli("synth --frames 0 --out " + tmp.file("x"), tmp, "bad.log");
    CHECK(res.exit_code != 0);
}

TEST_CASE("cli bases recovers prototypes from duplicated meshes") {
    TempDir tmp("cli_bases");
    TriMesh ico = make_icosphere(0, 1.0);
    auto proto_a = vmr::test::jitter(ico.vertices, 0.3, 51);
    auto proto_b = vmr::test::jitter(ico.vertices, 0.3, 52);
    fs::create_directories(tmp.file("in"));
    for (int i = 0; i < 4; ++i) {
        TriMesh m = ico;
        m.vertices = (i % 2 == 0) ? proto_a : proto_b;
        save_obj((fs::path(tmp.file("in")) / frame_name("mesh_", i, ".obj")).string(),
                 m);
    }
    auto res = run_cli("bases --in " + tmp.file("in") + " --k 2 --out " +
                           tmp.file("out"),
                       tmp, "bases.log");
    REQUIRE(res.exit_code == 0);
    ShapeBasisSet got = load_basis_set(
        (fs::path(tmp.file("out")) / "manifest.txt").string(), ico.faces);
    REQUIRE(got.count() == 2);
    // each prototype should be one of the recovered bases (OBJ precision ~1e-6)
    auto close = [&](const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
        double worst = 0.0;
        for (size_t i = 0; i < a.size(); ++i)
            worst = std::max(worst, (a[i] - b[i]).norm());
        return worst < 1e-5;
    };
    CHECK((close(got.bases[0], proto_a) || close(got.bases[1], proto_a)));
    CHECK((close(got.bases[0], proto_b) || close(got.bases[1], proto_b)));
}

TEST_CASE("cli bases fails when k exceeds the mesh count") {
    TempDir tmp("cli_bases_bad");
    TriMesh ico = make_icosphere(0, 1.0);
    fs::create_directories(tmp.file("in"));
    save_obj((fs::path(tmp.file("in")) / "only.obj").string(), ico);
    auto res = run_cli("bases --in " + tmp.file("in") + " --k 3 --out " +
                           tmp.file("out"),
                       tmp, "bad.log");
    CHECK(res.exit_code != 0);
}

TEST_CASE("cli reconstruct emits meshes, cameras, and a parsable report") {
    TempDir tmp("cli_reconstruct");
    REQUIRE(run_cli("synth --seed 2 --frames 2 --res 16 --bases 2 --out " +
                        tmp.file("prob"),
                    tmp, "synth.log")
                .exit_code == 0);
    auto res = run_cli("reconstruct --manifest " +
                           (fs::path(tmp.file("prob")) / "manifest.txt").string() +
                           " --out " + tmp.file("rec") +
                           " --window 2 --stride 1 --iters 4 --seed 1 --threads 1",
                       tmp, "rec.log");
    REQUIRE(res.exit_code == 0);
    CHECK(res.output.find("wrote 2 reconstructions") != std::string::npos);
    CHECK(fs::exists(fs::path(tmp.file("rec")) / "mesh_0000.obj"));
    CHECK(fs::exists(fs::path(tmp.file("rec")) / "mesh_0001.obj"));
    CHECK(fs::exists(fs::path(tmp.file("rec")) / "texture_0000.ppm"));
    CHECK(fs::exists(fs::path(tmp.file("rec")) / "keypoints_pred.txt"));
    auto cams = load_cameras((fs::path(tmp.file("rec")) / "cameras.txt").string());
    CHECK(cams.size() == 2);
    Report rep = load_report((fs::path(tmp.file("rec")) / "report.txt").string());
    REQUIRE(rep.rows.size() == 2);
    CHECK(rep.mean.j >= 0.0);
    CHECK(rep.mean.j <= 1.0);
    CHECK(rep.mean.chamfer >= 0.0);  // ground truth meshes are present

    // eval on the reconstruction reproduces the same report
    auto ev = run_cli("eval --pred " + tmp.file("rec") + " --manifest " +
                          (fs::path(tmp.file("prob")) / "manifest.txt").string() +
                          " --out " + tmp.file("report2.txt"),
                      tmp, "eval.log");
    REQUIRE(ev.exit_code == 0);
    CHECK(ev.output.find("mean") != std::string::npos);
    CHECK(slurp(fs::path(tmp.file("rec")) / "report.txt") ==
          slurp(tmp.file("report2.txt")));
}

TEST_CASE("cli eval scores ground truth predictions perfectly") {
    TempDir tmp("cli_eval_gt");
    REQUIRE(run_cli("synth --seed 6 --frames 2 --res 16 --bases 2 --out " +
                        tmp.file("prob"),
                    tmp, "synth.log")
                .exit_code == 0);
    // use the gt directory itself as the prediction directory: it has
    // mesh_%04d.obj and cameras.txt in exactly the prediction layout
    std::string gt = (fs::path(tmp.file("prob")) / "gt").string();
    auto res = run_cli("eval --pred " + gt + " --manifest " +
                           (fs::path(tmp.file("prob")) / "manifest.txt").string() +
                           " --out " + tmp.file("report.txt"),
                       tmp, "eval.log");
    REQUIRE(res.exit_code == 0);
    Report rep = load_report(tmp.file("report.txt"));
    REQUIRE(rep.rows.size() == 2);
    CHECK(rep.mean.j == Catch::Approx(1.0).margin(1e-9));
    CHECK(rep.mean.f == Catch::Approx(1.0).margin(1e-9));
    CHECK(rep.mean.chamfer < 1e-9);
    CHECK(rep.mean.pck < 0);  // gt dir carries no keypoints_pred.txt
}

TEST_CASE("cli eval fails on a missing prediction") {
    TempDir tmp("cli_eval_bad");
    REQUIRE(run_cli("synth --seed 6 --frames 2 --res 16 --out " + tmp.file("prob"),
                    tmp, "synth.log")
                .exit_code == 0);
    fs::create_directories(tmp.file("empty"));
    save_cameras((fs::path(tmp.file("empty")) / "cameras.txt").string(),
                 std::vector<WeakPerspectiveCamera>(2));
    auto res = run_cli("eval --pred " + tmp.file("empty") + " --manifest " +
                           (fs::path(tmp.file("prob")) / "manifest.txt").string() +
                           " --out " + tmp.file("r.txt"),
                       tmp, "eval.log");
    CHECK(res.exit_code != 0);
    CHECK(res.output.find("missing prediction") != std::string::npos);
}

TEST_CASE("cli gradcheck runs a single loss and rejects unknown names") {
    TempDir tmp("cli_gradcheck");
    auto one = run_cli("gradcheck --loss arap --seed 1", tmp, "one.log");
    CHECK(one.exit_code == 0);
    CHECK(one.output.find("arap") != std::string::npos);
    CHECK(one.output.find("pass") != std::string::npos);
    CHECK(one.output.find("FAIL") == std::string::npos);

    auto bad = run_cli("gradcheck --loss bogus", tmp, "bad.log");
    CHECK(bad.exit_code != 0);
}

TEST_CASE("cli help lists the documented subcommands and flags") {
    TempDir tmp("cli_help");
    auto res = run_cli("--help", tmp, "help.log");
    CHECK(res.exit_code == 0);
    for (const char* word :
         {"synth", "bases", "reconstruct", "eval", "gradcheck"})
        CHECK(res.output.find(word) != std::string::npos);

    auto rec = run_cli("reconstruct --help", tmp, "rec_help.log");
    CHECK(rec.exit_code == 0);
    for (const char* flag : {"--manifest", "--out", "--mode", "--window", "--stride",
                             "--iters", "--weights", "--seed", "--lr", "--threads",
                             "--ablate-invariance", "--shared-beta", "--per-frame-beta"})
        CHECK(rec.output.find(flag) != std::string::npos);
}
