#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "doctest.h"
#include "psyn/eval.hpp"
#include "run_config.hpp"

using namespace psyn;
using psyn::cli::config_keys;
using psyn::cli::ConfigError;
using psyn::cli::RunConfig;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "psyn");
  std::ostringstream out, err;
  const int code = psyn::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("psyn_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool single_line(const std::string& s) { return !s.empty() && s.find('\n') == s.size() - 1; }

}  // namespace

TEST_CASE("help matches the golden file and lists every key") {
  const Outcome r = invoke({"--help"});
  CHECK(r.code == 0);
  CHECK(r.out == slurp(PSYN_GOLDEN_DIR "/help.txt"));
  for (const auto& k : config_keys()) CHECK_MESSAGE(r.out.find(std::string("    ") + k.name + " ") != std::string::npos, k.name);
}

TEST_CASE("config parsing") {
  RunConfig c;
  SUBCASE("unknown and duplicate keys") {
    CHECK_THROWS_AS(c.merge_text("nonsense=1\n", "f"), ConfigError);
    CHECK_THROWS_AS(c.merge_text("seed=1\nseed=2\n", "f"), ConfigError);
    CHECK_THROWS_AS(c.merge_text("seed\n", "f"), ConfigError);
  }
  SUBCASE("comments and whitespace") {
    c.merge_text("# header\n  steps = 12  # trailing\n\n", "f");
    CHECK(c.get_int("steps") == 12);
    CHECK(c.is_set("steps"));
    CHECK_FALSE(c.is_set("seed"));
  }
  SUBCASE("typed getters name the key") {
    c.set("lr", "fast");
    CHECK_THROWS_WITH_AS(c.get_double("lr"), doctest::Contains("lr"), ConfigError);
    c.set("jitter", "maybe");
    CHECK_THROWS_AS(c.get_bool("jitter"), ConfigError);
    c.set("seed", "-3");
    CHECK_THROWS_AS(c.get_u64("seed"), ConfigError);
  }
  SUBCASE("preset then overrides") {
    c.set("size", "32");
    CHECK(c.net() == NetConfig::desk_scale(32));
    c.set("base_width", "4");
    CHECK(c.net().base_width == 4);
    c.set("scale", "full");
    c.set("size", "256");
    c.set("base_width", "");
    CHECK(c.net() == NetConfig::full_scale());
    c.set("critic_norm", "layer");
    CHECK_THROWS_AS(c.net(), ConfigError);
  }
  SUBCASE("resolved text is a fixed point") {
    c.set("size", "32");
    c.set("lambda_gp", "3.5");
    RunConfig again;
    again.merge_text(c.resolved_text(), "archive");
    CHECK(again.resolved_text() == c.resolved_text());
    CHECK(again.net() == c.net());
    CHECK(again.radius() == 1);
  }
}

TEST_CASE("flags override the config file") {
  const fs::path dir = scratch("override");
  std::ofstream(dir / "run.cfg") << "size=32\nn=3\n";
  const Outcome r = invoke({"fixtures", "--config", (dir / "run.cfg").string(), "--n", "2", "--run_dir",
                         (dir / "run").string()});
  REQUIRE(r.code == 0);
  const std::string archived = slurp(dir / "run" / "config.txt");
  CHECK(archived.find("\nn=2\n") != std::string::npos);
  CHECK(archived.find("\nsize=32\n") != std::string::npos);
  CHECK(load_dataset(dir / "run/data/images", dir / "run/data/masks").size() == 2);
}

TEST_CASE("errors map to exit codes on one line") {
  const fs::path dir = scratch("errors");
  std::ofstream(dir / "bad.cfg") << "steps=1\nwidth=9\n";
  Outcome r = invoke({"train-p2n", "--config", (dir / "bad.cfg").string()});
  CHECK(r.code == 2);
  CHECK(single_line(r.err));
  CHECK(r.err.find("width") != std::string::npos);

  r = invoke({"train-p2n", "--no_such_key", "1"});
  CHECK(r.code == 2);
  CHECK(single_line(r.err));

  r = invoke({"train-p2n", "--run_dir", (dir / "r").string()});
  CHECK(r.code == 2);

  r = invoke({"train-p2n", "--data_dir", (dir / "missing").string(), "--run_dir", (dir / "r").string()});
  CHECK(r.code == 3);
  CHECK(single_line(r.err));

  r = invoke({"sweep", "--run_dir", (dir / "r").string(), "--sweep_file", (dir / "none.csv").string()});
  CHECK(r.code == 3);
}

TEST_CASE("prematched counts reproduce the published row") {
  const fs::path dir = scratch("counts");
  std::ofstream(dir / "counts.csv") << "label,tp,fp,fn\nfrcnn,6047,1513,3978\n";
  const Outcome r = invoke({"eval-det", "--counts", (dir / "counts.csv").string(), "--run_dir", (dir / "run").string()});
  REQUIRE(r.code == 0);
  std::istringstream csv(slurp(dir / "run" / "report.csv"));
  std::string line;
  std::getline(csv, line);
  std::getline(csv, line);
  std::vector<std::string> cells;
  std::stringstream ss(line);
  for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
  REQUIRE(cells.size() == 8);
  CHECK(cells[0] == "frcnn");
  CHECK(std::abs(std::stod(cells[5]) - 79.99) <= 0.05);
  CHECK(std::abs(std::stod(cells[6]) - 60.32) <= 0.05);
  CHECK(std::abs(std::stod(cells[7]) - 68.76) <= 0.05);
}

TEST_CASE("sweep and segmentation reports") {
  const fs::path dir = scratch("reports");
  std::ofstream(dir / "sweep.csv") << "n_synthetic,precision,recall,f1\n0,80,60,64.56\n350,86,65,74.43\n550,86,65,74.58\n";
  Outcome r = invoke({"sweep", "--sweep_file", (dir / "sweep.csv").string(), "--run_dir", (dir / "s").string()});
  REQUIRE(r.code == 0);
  CHECK(slurp(dir / "s" / "sweep.csv").find("350,86.00,65.00,74.43,1") != std::string::npos);

  fs::create_directories(dir / "pred");
  fs::create_directories(dir / "gt");
  Mask a = Mask::zeros(8, 8), b = Mask::zeros(8, 8);
  for (int x = 0; x < 4; ++x) a.set(x, 0);
  for (int x = 2; x < 6; ++x) b.set(x, 0);
  write_png(dir / "pred" / "f.png", a);
  write_png(dir / "gt" / "f.png", b);
  r = invoke({"eval-seg", "--pred_dir", (dir / "pred").string(), "--gt_dir", (dir / "gt").string(), "--run_dir",
           (dir / "g").string()});
  REQUIRE(r.code == 0);
  CHECK(slurp(dir / "g" / "report.csv") == "images,jaccard,dice\n1,33.33,50.00\n");
}

TEST_CASE("fixtures, training and generation pipeline") {
  const fs::path dir = scratch("pipeline");
  const std::string d = dir.string();
  REQUIRE(invoke({"fixtures", "--n", "4", "--size", "32", "--run_dir", d + "/fx"}).code == 0);
  const std::vector<std::string> common{"--size", "32", "--steps", "6", "--critic_iters", "1", "--data_dir", d + "/fx/data"};
  auto with = [&](std::vector<std::string> head, std::vector<std::string> tail) {
    head.insert(head.end(), tail.begin(), tail.end());
    return head;
  };
  REQUIRE(invoke(with({"train-p2n", "--run_dir", d + "/p2n"}, common)).code == 0);
  REQUIRE(invoke(with({"train-n2p", "--run_dir", d + "/n2p"}, common)).code == 0);
  CHECK(fs::exists(dir / "p2n" / "final.psyn"));
  CHECK(fs::exists(dir / "p2n" / "metrics.csv"));

  SUBCASE("a run replays bitwise from its archived config") {
    REQUIRE(invoke({"train-p2n", "--config", d + "/p2n/config.txt", "--run_dir", d + "/replay"}).code == 0);
    CHECK(slurp(dir / "replay" / "metrics.csv") == slurp(dir / "p2n" / "metrics.csv"));
    CHECK(slurp(dir / "replay" / "final.psyn") == slurp(dir / "p2n" / "final.psyn"));
  }
  SUBCASE("fixed value generation") {
    const int value = static_cast<int>(std::lround(17 * 255.0 / 33));
    const Outcome r = invoke({"generate", "--count", "10", "--value", std::to_string(value), "--data_dir",
                           d + "/fx/data", "--p2n_checkpoint", d + "/p2n/final.psyn", "--n2p_checkpoint",
                           d + "/n2p/final.psyn", "--run_dir", d + "/gen"});
    REQUIRE(r.code == 0);
    std::ifstream manifest(dir / "gen" / "corpus" / "manifest.csv");
    std::string line;
    std::getline(manifest, line);
    int rows = 0;
    while (std::getline(manifest, line)) {
      std::vector<std::string> cells;
      std::stringstream ss(line);
      for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
      REQUIRE(cells.size() == 8);
      CHECK(cells[2] == "131");
      CHECK(fs::exists(dir / "gen" / "corpus" / cells[0]));
      ++rows;
    }
    CHECK(rows == 10);
  }
  SUBCASE("checkpoint task mismatch is a config error") {
    const Outcome r = invoke({"generate", "--data_dir", d + "/fx/data", "--p2n_checkpoint", d + "/p2n/final.psyn",
                           "--n2p_checkpoint", d + "/p2n/final.psyn", "--run_dir", d + "/bad"});
    CHECK(r.code == 2);
    CHECK(single_line(r.err));
  }
  SUBCASE("size mismatch with the checkpoint") {
    const Outcome r = invoke({"generate", "--size", "64", "--data_dir", d + "/fx/data", "--n2p_checkpoint",
                           d + "/n2p/final.psyn", "--p2n_checkpoint", d + "/p2n/final.psyn", "--run_dir", d + "/bad"});
    CHECK(r.code == 2);
  }
  SUBCASE("non-finite loss aborts with status 4") {
    const Outcome r = invoke(with({"train-n2p", "--run_dir", d + "/nan", "--lambda_reconst", "1e308", "--lambda_gp", "1e308"}, common));
    CHECK(r.code == 4);
    CHECK(single_line(r.err));
    CHECK(fs::exists(dir / "nan" / "nan_snapshot.psyn"));
  }
}

TEST_CASE("bench reports each size") {
  const fs::path dir = scratch("bench");
  const Outcome r = invoke({"bench", "--bench_sizes", "32,64", "--run_dir", (dir / "b").string()});
  REQUIRE(r.code == 0);
  const std::string csv = slurp(dir / "b" / "bench.csv");
  CHECK(csv.find("\n64,10,2,") != std::string::npos);
  CHECK(csv.find("\n32,10,2,") != std::string::npos);
  CHECK(r.out.find("51.33 ms") != std::string::npos);
  CHECK(invoke({"bench", "--bench_runs", "9", "--run_dir", (dir / "c").string()}).code == 2);
}
