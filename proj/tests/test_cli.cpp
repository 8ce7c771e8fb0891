#include <doctest.h>

#include <fstream>
#include <sstream>

#include "dcsw/checkpoint.hpp"
#include "dcsw/commands.hpp"
#include "dcsw/errors.hpp"
#include "dcsw/tiling.hpp"
#include "support.hpp"

using namespace dcsw;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::map<std::string, std::vector<std::uint8_t>> dir_bytes(const fs::path& dir) {
  std::map<std::string, std::vector<std::uint8_t>> m;
  for (const auto& e : fs::directory_iterator(dir)) {
    m[e.path().filename().string()] = read_file_bytes(e.path());
  }
  return m;
}

std::vector<std::string> csv_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

std::size_t count_phase(const fs::path& csv, const std::string& phase) {
  std::size_t n = 0;
  for (const auto& l : csv_lines(csv)) n += l.find("," + phase + ",") != std::string::npos;
  return n;
}

const fs::path& small_dataset() {
  static const fs::path dir = [] {
    const fs::path d = testing::scratch_dir("cli_data") / "data";
    const auto r = cli({"gen-data", "--out", d.string(), "--slices", "4", "--size", "96", "--seed", "5"});
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

std::vector<std::string> train_args(const fs::path& out, const std::string& mode, int steps) {
  return {"train", "--data", small_dataset().string(), "--out", out.string(), "--mode", mode,
          "--steps", std::to_string(steps), "--batch", "1", "--patches", "8",
          "--set", "data.patch_size=24", "--set", "eval.tile=48"};
}

}  // namespace

TEST_CASE("gen-data") {
  const fs::path d = small_dataset();
  std::size_t ctf = 0;
  for (const auto& e : fs::directory_iterator(d)) ctf += e.path().extension() == ".ctf";
  CHECK(ctf == 8);
  CHECK(fs::exists(d / "meta.txt"));
  const auto meta = read_meta(d);
  CHECK(std::stod(meta.at("i0_low")) == std::stod(meta.at("i0_full")) / 4.0);

  const fs::path again = testing::scratch_dir("cli_data_again") / "data";
  REQUIRE(cli({"gen-data", "--out", again.string(), "--slices", "4", "--size", "96", "--seed", "5"}).code == 0);
  CHECK(dir_bytes(d) == dir_bytes(again));
}

TEST_CASE("train schedules and logs") {
  const fs::path root = testing::scratch_dir("cli_train");
  SUBCASE("l1") {
    const auto r = cli(train_args(root / "l1", "l1", 10));
    INFO(r.err);
    REQUIRE(r.code == 0);
    CHECK(count_phase(root / "l1" / "train.csv", "generator") == 10);
    CHECK(count_phase(root / "l1" / "train.csv", "critic") == 0);
    for (const char* f : {"config.ini", "checkpoint.dcsw", "generator.dcsw", "validation.csv"}) {
      CHECK(fs::exists(root / "l1" / f));
    }
  }
  SUBCASE("joint") {
    auto args = train_args(root / "joint", "joint", 2);
    args.insert(args.end(), {"--n-critic", "4"});
    const auto r = cli(args);
    INFO(r.err);
    REQUIRE(r.code == 0);
    CHECK(count_phase(root / "joint" / "train.csv", "critic") == 8);
    CHECK(count_phase(root / "joint" / "train.csv", "generator") == 2);
  }
  SUBCASE("resume equals uninterrupted") {
    REQUIRE(cli(train_args(root / "full", "joint", 4)).code == 0);
    REQUIRE(cli(train_args(root / "part", "joint", 2)).code == 0);
    const auto r = cli({"train", "--out", (root / "part").string(), "--resume", "--steps", "4"});
    INFO(r.err);
    REQUIRE(r.code == 0);
    CHECK(read_file_bytes(root / "full" / "checkpoint.dcsw") ==
          read_file_bytes(root / "part" / "checkpoint.dcsw"));
    CHECK(read_file_bytes(root / "full" / "generator.dcsw") ==
          read_file_bytes(root / "part" / "generator.dcsw"));
    CHECK(csv_lines(root / "full" / "train.csv").size() == csv_lines(root / "part" / "train.csv").size());
  }
  SUBCASE("config echo reproduces the run") {
    REQUIRE(cli(train_args(root / "a", "l1", 3)).code == 0);
    const auto r = cli({"train", "--config", (root / "a" / "config.ini").string(), "--out",
                        (root / "b").string()});
    INFO(r.err);
    REQUIRE(r.code == 0);
    CHECK(read_file_bytes(root / "a" / "checkpoint.dcsw") == read_file_bytes(root / "b" / "checkpoint.dcsw"));
    CHECK(read_file_bytes(root / "a" / "config.ini") == read_file_bytes(root / "b" / "config.ini"));
  }
}

TEST_CASE("exit codes") {
  const fs::path root = testing::scratch_dir("cli_exit");
  CHECK(cli({"train", "--out", (root / "x").string(), "--data", (root / "none").string()}).code == 3);
  CHECK(cli({"gen-data", "--out", (root / "y").string(), "--set", "data.nope=1"}).code == 2);
  CHECK(cli({"gen-data", "--out", (root / "y").string(), "--size", "banana"}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"train", "--out", (root / "z").string(), "--data", small_dataset().string(), "--mode", "gan"}).code == 2);
  auto args = train_args(root / "nan", "l1", 5);
  args.insert(args.end(), {"--lr", "1e300"});
  const auto r = cli(args);
  CHECK(r.code == 4);
  CHECK(r.err.find("numerical") != std::string::npos);
}

TEST_CASE("denoise and evaluate") {
  const fs::path root = testing::scratch_dir("cli_denoise");
  GeneratorConfig gcfg;
  ParameterStore g = build_generator(gcfg, RngStream(1, "g"));
  for (auto& v : g.get("nin.w").mutable_values()) v = 0.0;
  for (auto& v : g.get("nin.b").mutable_values()) v = 0.0;
  save_parameters(g, root / "zero.dcsw");

  const auto r = cli({"denoise", "--ckpt", (root / "zero.dcsw").string(), "--in",
                      small_dataset().string(), "--out", (root / "den").string(), "--tile", "48",
                      "--png"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  std::size_t outputs = 0;
  for (std::size_t id = 0; id < 4; ++id) {
    const fs::path den = root / "den" / slice_name(id, "den");
    REQUIRE(fs::exists(den));
    ++outputs;
    CHECK(read_file_bytes(den) == read_file_bytes(small_dataset() / slice_name(id, "low")));
  }
  CHECK(outputs == 4);
  CHECK(fs::exists(root / "den" / "0000_den.png"));

  const auto e = cli({"evaluate", "--denoised", small_dataset().string(), "--reference",
                      small_dataset().string(), "--out", (root / "self.csv").string()});
  REQUIRE(e.code == 0);
  CHECK(e.out.find("mean over 4 pairs") != std::string::npos);
  const auto lines = csv_lines(root / "self.csv");
  CHECK(lines.front() == "id,psnr_db,ssim,rmse");

  REQUIRE(cli({"evaluate", "--denoised", (root / "den").string(), "--reference",
               small_dataset().string(), "--out", (root / "low.csv").string()})
              .code == 0);
  const MetricReport rep = evaluate_run(root / "den", small_dataset());
  double mean = 0.0;
  for (const auto& row : rep.rows) mean += row.psnr_db / 4.0;
  CHECK(rep.psnr_db.mean == doctest::Approx(mean).epsilon(1e-12));

  RunConfig other;
  other.train.generator.a1_filters = 12;
  std::ofstream(root / "other.ini") << other.to_text();
  CHECK(cli({"denoise", "--ckpt", (root / "zero.dcsw").string(), "--config",
             (root / "other.ini").string(), "--in", small_dataset().string(), "--out",
             (root / "x").string()})
            .code == 2);
}

TEST_CASE("tiled inference matches a whole-slice pass") {
  GeneratorConfig cfg;
  const ParameterStore g = build_generator(cfg, RngStream(3, "tiles"));
  RngStream rng(4, "slice");
  Slice s(160, 160, SliceUnit::unit);
  for (auto& v : s.values) v = rng.uniform();
  const Slice full = denoise_full(cfg, g, s);
  for (const TileOptions opt : {TileOptions{64, 16}, TileOptions{80, 24}, TileOptions{160, 16}}) {
    const Slice tiled = denoise_tiled(cfg, g, s, opt);
    double worst = 0.0;
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      worst = std::max(worst, std::fabs(tiled.values[i] - full.values[i]));
    }
    CHECK(worst <= 1e-6);
  }
  Slice odd(75, 50, SliceUnit::unit, 0.4);
  CHECK(denoise_tiled(cfg, g, odd, TileOptions{32, 8}).values.size() == odd.values.size());

  CHECK(tile_starts(160, 64, 16) == std::vector<std::size_t>{0, 48, 96});
  CHECK(tile_starts(40, 64, 16) == std::vector<std::size_t>{0});
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(blend_weight(i, 64, 16, true, true) > 0.0);
    CHECK(blend_weight(i, 64, 16, false, true) == 1.0);
  }
  CHECK_THROWS_AS(denoise_tiled(cfg, g, Slice(16, 16, SliceUnit::hu), TileOptions{}), DataError);
  CHECK_THROWS_AS((TileOptions{16, 16}.validate()), ConfigError);
}

TEST_CASE("run configuration") {
  RunConfig c;
  c.load_text("# comment\n[train]\nsteps = 17\nlr=2e-4\n; other\n[model]\na1_filters = 12\n");
  CHECK(c.train.steps == 17);
  CHECK(c.train.adam.lr == 2e-4);
  CHECK(c.train.generator.a1_filters == 12);

  RunConfig d;
  d.load_text(c.to_text());
  CHECK(d.to_text() == c.to_text());

  RunConfig e;
  CHECK_THROWS_AS(e.load_text("[train]\nstepz = 3\n"), ConfigError);
  CHECK_THROWS_AS(e.load_text("[bogus]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(e.load_text("[train]\nsteps = many\n"), ConfigError);
  CHECK_THROWS_AS(e.set("loss.mode", "vae"), ConfigError);
  CHECK_THROWS_AS(e.load_text("steps = 3\n"), ConfigError);
  CHECK(c.keys().size() >= 40);

  RunConfig f;
  f.patch_size = 32;
  f.finalize();
  CHECK(f.train.critic.input_size == 32);
}
