// End-to-end tests that drive the installed binary like a user would.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const std::string kCli = LAKD_CLI_PATH;

int run(const std::string& args) {
    const int status = std::system((kCli + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
}

fs::path work_dir() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "lakd_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const char* kTinyConfig = R"({
  "network": {"base_channels": 4, "block_counts": [1, 1, 1, 1], "mixer_kernel": 3},
  "train": {"total_iters": 6, "patch_schedule": [[0, 16, 1]], "rng_seed": 2}
})";

}  // namespace

TEST_CASE("full pipeline: synth, train, infer, erf, fitgnd, erfm, correlate, report") {
    const fs::path dir = work_dir();
    const std::string d = dir.string();

    REQUIRE(run("synth --out " + d + "/data --count 4 --size 32 --seed 1") == 0);
    int pairs = 0;
    for (const auto& e : fs::directory_iterator(dir / "data"))
        if (e.path().extension() == ".ppm") ++pairs;
    CHECK(pairs == 8);

    write_file(dir / "cfg.json", kTinyConfig);
    REQUIRE(run("train --config " + d + "/cfg.json --data " + d + "/data --out " + d +
                "/run/model.ckpt") == 0);
    CHECK(fs::exists(dir / "run/model.ckpt"));
    CHECK(fs::exists(dir / "run/model.ckpt.json"));
    const std::string trace = slurp(dir / "run/model.ckpt.loss.csv");
    CHECK(trace.rfind("iter,loss", 0) == 0);
    CHECK(std::count(trace.begin(), trace.end(), '\n') == 7);  // header + 6 iters

    REQUIRE(run("infer --ckpt " + d + "/run/model.ckpt --in " + d +
                "/data/0000_blur.ppm --out " + d + "/deblurred.ppm") == 0);
    CHECK(fs::exists(dir / "deblurred.ppm"));

    REQUIRE(run("erf --ckpt " + d + "/run/model.ckpt --layer bt_neck --patches 2 --size 32"
                " --out " + d + "/erf --seed 3") == 0);
    CHECK(fs::exists(dir / "erf/erf.f32"));
    CHECK(fs::exists(dir / "erf/erf.json"));
    CHECK(fs::exists(dir / "erf/erf.pgm"));

    REQUIRE(run("fitgnd --erf " + d + "/erf --out " + d + "/run/fit.json") == 0);
    const std::string fit = slurp(dir / "run/fit.json");
    CHECK(fit.find("\"sigma\"") != std::string::npos);
    CHECK(fit.find("\"erfm\"") != std::string::npos);
    CHECK(fs::exists(dir / "run/fit.json.curve.csv"));

    CHECK(run("erfm --fit " + d + "/run/fit.json") == 0);

    write_file(dir / "pairs.csv", "erfm,psnr\n1,20\n2,22\n3,21\n4,25\n");
    CHECK(run("correlate --pairs " + d + "/pairs.csv") == 0);

    REQUIRE(run("report --runs " + d + "/run --out " + d + "/report.csv") == 0);
    const std::string report = slurp(dir / "report.csv");
    CHECK(report.rfind("run,layer,sigma,beta", 0) == 0);
    CHECK(std::count(report.begin(), report.end(), '\n') == 2);
}

TEST_CASE("exit codes distinguish config, data and usage errors") {
    const fs::path dir = work_dir();
    const std::string d = dir.string();

    // usage errors -> 2
    CHECK(run("") == 2);
    CHECK(run("train") == 2);
    CHECK(run("nosuchcommand") == 2);

    // config errors -> 2
    write_file(dir / "unknown_key.json", R"({"network": {"oops": 1}})");
    CHECK(run("train --config " + d + "/unknown_key.json --data " + d + "/data --out " + d +
              "/x.ckpt") == 2);
    write_file(dir / "bad_section.json", R"({"netwrk": {}})");
    CHECK(run("train --config " + d + "/bad_section.json --data " + d + "/data --out " + d +
              "/x.ckpt") == 2);
    write_file(dir / "not_json.json", "{nope");
    CHECK(run("train --config " + d + "/not_json.json --data " + d + "/data --out " + d +
              "/x.ckpt") == 2);
    CHECK(run("erf --ckpt " + d + "/run/model.ckpt --layer nosuch --patches 1 --size 32"
              " --out " + d + "/e2") == 2);
    CHECK(run("erf --ckpt " + d + "/run/model.ckpt --layer bt_neck --patches 1 --size 20"
              " --out " + d + "/e2") == 2);

    // data errors -> 3
    write_file(dir / "ok.json", kTinyConfig);
    CHECK(run("train --config " + d + "/missing.json --data " + d + "/data --out " + d +
              "/x.ckpt") == 3);
    fs::create_directories(dir / "empty");
    CHECK(run("train --config " + d + "/ok.json --data " + d + "/empty --out " + d +
              "/x.ckpt") == 3);
    CHECK(run("infer --ckpt " + d + "/nope.ckpt --in " + d + "/data/0000_blur.ppm --out " +
              d + "/y.ppm") == 3);
    CHECK(run("fitgnd --erf " + d + "/no_such_dir --out " + d + "/f.json") == 3);
    write_file(dir / "badpairs.csv", "wrong,header\n1,2\n");
    CHECK(run("correlate --pairs " + d + "/badpairs.csv") == 3);
    fs::create_directories(dir / "norubs");
    CHECK(run("report --runs " + d + "/norubs") == 3);
}

TEST_CASE("training twice with the same seed gives bit-identical checkpoints") {
    const fs::path dir = work_dir();
    const std::string d = dir.string();
    REQUIRE(fs::exists(dir / "cfg.json"));  // created by the pipeline case
    REQUIRE(run("train --config " + d + "/cfg.json --data " + d + "/data --out " + d +
                "/rep/a.ckpt") == 0);
    REQUIRE(run("train --config " + d + "/cfg.json --data " + d + "/data --out " + d +
                "/rep/b.ckpt") == 0);
    CHECK(slurp(dir / "rep/a.ckpt") == slurp(dir / "rep/b.ckpt"));
    CHECK(slurp(dir / "rep/a.ckpt") == slurp(dir / "run/model.ckpt"));
}
