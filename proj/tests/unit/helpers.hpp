#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dnas/archspace.hpp"
#include "dnas/benchmark.hpp"
#include "dnas/controller.hpp"
#include "dnas/rng.hpp"

namespace testutil {

inline dnas::CellGraph make_cell(std::initializer_list<std::pair<int, int>> edges,
                                 std::vector<dnas::OpType> interior) {
  const int v = static_cast<int>(interior.size()) + 2;
  dnas::Adjacency adj = dnas::Adjacency::Zero(v, v);
  for (auto [i, j] : edges) adj(i, j) = 1;
  std::vector<dnas::OpType> ops{dnas::OpType::kInput};
  ops.insert(ops.end(), interior.begin(), interior.end());
  ops.push_back(dnas::OpType::kOutput);
  return {adj, ops};
}

inline std::vector<dnas::TrainingExample> synthetic_examples(int n, std::uint64_t seed, int max_nodes = 5,
                                                            std::uint64_t bench_seed = 7) {
  dnas::SyntheticBench bench;
  bench.seed = bench_seed;
  const dnas::FlopsModel model;
  std::vector<dnas::TrainingExample> out;
  for (int i = 0; i < n; ++i) {
    const auto r = dnas::synth_eval(bench, dnas::random_cell(dnas::derive_seed(seed, "cell", i), max_nodes), model);
    out.push_back(dnas::make_example(r.cell, r.accuracy, r.flops));
  }
  return out;
}

// Controller trained once on 500 synthetic V <= 5 records (lr 0.01,
// batch 16, 150 epochs) and shared across test files.
struct TrainedFixture {
  std::vector<dnas::TrainingExample> data;
  std::vector<dnas::TrainingExample> held;  // 200 further cells
  dnas::Controller controller;
};
const TrainedFixture& trained_fixture();

// Scratch directory unique to a test case, emptied on creation.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dnas_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testutil
