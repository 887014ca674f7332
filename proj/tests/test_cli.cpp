#include "doctest.h"

#include <sstream>

#include "gradreg/cli.hpp"
#include "gradreg/train.hpp"
#include "support/test_support.hpp"

using namespace gradreg;

namespace {

struct CliRun {
    int code;
    std::string out;
    std::string err;
};

CliRun run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
    const CliRun none = run({});
    CHECK(none.code == 1);
    CHECK(none.err.find("phantom") != std::string::npos);
    CHECK(run({"frobnicate"}).code == 1);
    CHECK(run({"gradmap", "--in", "a.vol"}).code == 1);
    CHECK(run({"gradmap", "--in", "a.vol", "--out", "b.vol", "--bogus"}).code == 1);
    CHECK(run({"phantom", "--out", "x", "--count", "0"}).code == 1);
    CHECK(run({"--help"}).code == 0);
}

TEST_CASE("gradmap on a constant volume writes zeros") {
    testing::TempDir dir("cli_gm");
    save_volume(Volume(Dims{4, 4, 4}, Spacing{1, 2, 3}, std::vector<double>(64, 7.0)), dir / "c.vol");
    const CliRun r = run({"gradmap", "--in", (dir / "c.vol").string(), "--out", (dir / "g.vol").string()});
    CHECK(r.code == 0);
    const Volume g = load_volume(dir / "g.vol");
    CHECK(g.dims() == Dims{4, 4, 4});
    CHECK(g.spacing() == Spacing{1, 2, 3});
    for (double v : g.data()) CHECK(v == 0.0);
}

TEST_CASE("missing inputs exit with 2 and name the path") {
    testing::TempDir dir("cli_missing");
    const std::string missing = (dir / "nothing_here.vol").string();
    const CliRun r = run({"gradmap", "--in", missing, "--out", (dir / "o.vol").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("nothing_here") != std::string::npos);

    const CliRun e = run({"eval", "--pred", (dir / "p").string(), "--truth", (dir / "t").string(), "--out",
                          (dir / "e.csv").string()});
    CHECK(e.code == 2);
    CHECK(!std::filesystem::exists(dir / "e.csv"));
}

TEST_CASE("phantom writes case directories with a manifest") {
    testing::TempDir dir("cli_ph");
    write_file_atomic(dir / "ph.txt", "dims=16,16,16\nseed=3\n");
    const CliRun r = run({"phantom", "--config", (dir / "ph.txt").string(), "--out", (dir / "data").string(),
                          "--count", "2"});
    REQUIRE(r.code == 0);
    for (const char* c : {"case_000", "case_001"}) {
        const auto d = dir / "data" / c;
        CHECK(load_volume(d / "moving.vol").dims() == Dims{16, 16, 16});
        CHECK(load_label_mask(d / "fixed_mask.vol").dims() == Dims{16, 16, 16});
        CHECK(load_field(d / "gt_field.vol").dims() == Dims{16, 16, 16});
        CHECK(read_file(d / "manifest.json").find("\"seed\"") != std::string::npos);
    }
    CHECK(!(load_volume(dir / "data" / "case_000" / "moving.vol") == load_volume(dir / "data" / "case_001" / "moving.vol")));
}

TEST_CASE("train rejects bad overrides and unknown keys") {
    testing::TempDir dir("cli_tr");
    REQUIRE(run({"phantom", "--out", (dir / "data").string(), "--count", "1", "--config",
                 (dir / "none.txt").string()}).code == 2);
    write_file_atomic(dir / "ph.txt", "dims=16,16,16\n");
    REQUIRE(run({"phantom", "--config", (dir / "ph.txt").string(), "--out", (dir / "data").string()}).code == 0);
    CHECK(run({"train", "--data", (dir / "data").string(), "--out", (dir / "m").string(), "--set", "iterations"})
              .code == 1);
    const CliRun unknown =
        run({"train", "--data", (dir / "data").string(), "--out", (dir / "m").string(), "--set", "colour=red"});
    CHECK(unknown.code != 0);
    CHECK(unknown.err.find("colour") != std::string::npos);
}
