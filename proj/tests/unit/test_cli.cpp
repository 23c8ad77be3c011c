#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "dnas/cli.hpp"
#include "dnas/searchloop.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = dnas::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> small_search(const fs::path& out) {
  return {"search",          "--bench",  "synthetic", "--budget", "30",  "--m-labeled", "15",
          "--n-unlabeled",   "100",      "--iters",   "1",        "--p-top", "10",      "--hidden",
          "8",               "--epochs", "10",        "--retrain-epochs", "3", "--seed", "4",
          "--out",           out.string()};
}

}  // namespace

TEST_CASE("search, rerun from manifest, traverse and correlate") {
  const auto dir = testutil::scratch_dir("cli_search");
  const auto r = run(small_search(dir / "a"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* f : {"manifest.json", "history.csv", "labeled.jsonl", "best_cell.json", "controller.json",
                        "controller.bin", "controller.config.json"})
    CHECK_MESSAGE(fs::exists(dir / "a" / f), f);
  CHECK(r.out.find("best_acc ") != std::string::npos);

  const auto manifest = nlohmann::json::parse(testutil::read_file(dir / "a" / "manifest.json"));
  CHECK(manifest["command"] == "search");
  CHECK(manifest["queries"].get<int>() <= 30);
  CHECK(manifest["config"]["query_budget"] == 30);
  CHECK(manifest.contains("input_hash"));

  const auto again = run({"search", "--config", (dir / "a" / "manifest.json").string(), "--out", (dir / "b").string()});
  REQUIRE_MESSAGE(again.code == 0, again.err);
  for (const char* f : {"history.csv", "best_cell.json", "labeled.jsonl", "controller.bin"})
    CHECK_MESSAGE(testutil::read_file(dir / "a" / f) == testutil::read_file(dir / "b" / f), f);
  const auto m2 = nlohmann::json::parse(testutil::read_file(dir / "b" / "manifest.json"));
  CHECK(m2["input_hash"] == manifest["input_hash"]);

  // Flags override the config file.
  const auto over = run({"search", "--config", (dir / "a" / "manifest.json").string(), "--budget", "25", "--out",
                         (dir / "c").string()});
  REQUIRE(over.code == 0);
  CHECK(nlohmann::json::parse(testutil::read_file(dir / "c" / "manifest.json"))["config"]["query_budget"] == 25);

  const auto t = run({"traverse", "--checkpoint", (dir / "a").string(), "--dim", "3", "--lo", "-0.4", "--hi", "0.4",
                      "--steps", "9", "--out", (dir / "an").string()});
  REQUIRE_MESSAGE(t.code == 0, t.err);
  CHECK(fs::exists(dir / "an" / "traversal_3.csv"));

  const auto c = run({"correlate", "--checkpoint", (dir / "a" / "controller").string(), "--dims", "all", "--out",
                      (dir / "an").string()});
  REQUIRE_MESSAGE(c.code == 0, c.err);
  for (int d = 0; d < 8; ++d) CHECK(fs::exists(dir / "an" / ("corr_" + std::to_string(d) + ".csv")));
  CHECK_FALSE(fs::exists(dir / "an" / "corr_8.csv"));
}

TEST_CASE("exit codes") {
  const auto dir = testutil::scratch_dir("cli_codes");
  auto args = small_search(dir / "x");
  args.insert(args.end(), {"--eps1", "0.9", "--eps2", "0.2"});
  const auto probs = run(args);
  CHECK(probs.code == 2);
  CHECK(probs.err.find("--eps1") != std::string::npos);

  args = small_search(dir / "x");
  *(std::find(args.begin(), args.end(), "--budget") + 1) = "5";
  const auto small = run(args);
  CHECK(small.code == 2);
  CHECK(small.err.find("budget") != std::string::npos);
  CHECK(small.err.find("At Most 1") == std::string::npos);

  CHECK(run({"search", "--no-such-flag"}).code == 2);
  CHECK(run({"search", "--bench", "elsewhere"}).code == 2);
  CHECK(run({"traverse", "--checkpoint", (dir / "missing").string()}).code == 2);
  CHECK(run({"correlate", "--checkpoint", (dir / "missing").string()}).code == 2);
  CHECK(run({"search", "--bench", "file:" + (dir / "absent.jsonl").string(), "--out", (dir / "y").string()}).code ==
        1);
  CHECK(run({}).code == 2);
  CHECK_FALSE(fs::exists(dir / "x"));
}

TEST_CASE("file benchmark") {
  const auto dir = testutil::scratch_dir("cli_file");
  dnas::SyntheticBench sb;
  sb.seed = 2;
  std::string lines;
  for (const auto& g : dnas::enumerate_cells(4)) lines += dnas::to_json(dnas::synth_eval(sb, g, {})).dump() + "\n";
  testutil::write_file(dir / "bench.jsonl", lines);
  auto args = small_search(dir / "out");
  args[2] = "file:" + (dir / "bench.jsonl").string();
  args.insert(args.end(), {"--preset", "desk", "--max-nodes", "4"});
  const auto r = run(args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto m = nlohmann::json::parse(testutil::read_file(dir / "out" / "manifest.json"));
  CHECK(m["bench"].contains("sha1"));
}

TEST_CASE("ablate") {
  const auto dir = testutil::scratch_dir("cli_ablate");
  auto args = small_search(dir / "abl");
  args[0] = "ablate";
  *(std::find(args.begin(), args.end(), "--budget") + 1) = "20";
  args.insert(args.end(), {"--seeds", "1"});
  const auto r = run(args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::istringstream csv(testutil::read_file(dir / "abl" / "ablation.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "dense,disen,top1_mean,top1_std,top10_mean,top10_std");
  std::vector<std::string> rows;
  while (std::getline(csv, line)) rows.push_back(line);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].rfind("N,N,", 0) == 0);
  CHECK(rows[1].rfind("N,Y,", 0) == 0);
  CHECK(rows[2].rfind("Y,N,", 0) == 0);
  CHECK(rows[3].rfind("Y,Y,", 0) == 0);
  for (const auto& row : rows) {
    std::vector<std::string> cols;
    std::stringstream ss(row);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    REQUIRE(cols.size() == 6);
    CHECK(std::stod(cols[3]) == 0.0);
    CHECK(std::stod(cols[5]) == 0.0);
  }
}
