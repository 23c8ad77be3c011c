#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dnas/archspace.hpp"

namespace dnas {

struct EvaluatedRecord {
  CellGraph cell;
  double accuracy = 0.0;  // in [0, 1]
  double flops = 0.0;     // multiply-adds, >= 0
};

// Ground-truth oracle. Repeat queries of a cell are served from cache and
// counted once.
class Benchmark {
 public:
  virtual ~Benchmark() = default;

  virtual EvaluatedRecord query(const CellGraph& g) = 0;
  virtual std::size_t query_count() const = 0;
  // FLOPS are computed, not measured, so looking them up is never a query.
  virtual double flops(const CellGraph& g) const = 0;
};

class BenchTable final : public Benchmark {
 public:
  BenchTable() = default;
  explicit BenchTable(FlopsModel fallback) : fallback_(fallback) {}
  BenchTable(BenchTable&& other) noexcept;

  // Returns false (and keeps the existing record) when the key is taken.
  bool insert(EvaluatedRecord record);

  EvaluatedRecord query(const CellGraph& g) override;
  std::size_t query_count() const override;
  double flops(const CellGraph& g) const override;

  bool contains(const CellGraph& g) const;
  std::size_t size() const { return records_.size(); }
  std::size_t duplicate_count() const { return duplicates_; }

 private:
  FlopsModel fallback_;
  std::unordered_map<std::string, EvaluatedRecord> records_;
  std::size_t duplicates_ = 0;
  mutable std::mutex mu_;
  std::unordered_set<std::string> queried_;
};

// JSONL, one {"adj": [[...]], "ops": [...], "acc": x, "flops": y} per line.
// Cells are keyed by their pruned form; duplicates keep the first occurrence.
BenchTable load_records(const std::filesystem::path& path, FlopsModel fallback = {});
// The parsed, pruned records of such a file in file order, duplicates kept.
std::vector<EvaluatedRecord> read_records(const std::filesystem::path& path);

// Offline accuracy landscape:
//   acc = clip(base + depth_bonus * longest_path + sum(op scores)
//              + skip_score * sqrt(edges - (V - 1))
//              - pool_chain_penalty * #(maxpool -> maxpool edges)
//              + noise, 0, 1)
// The noise is amplitude * tanh(mean-normalised sum of hashed per-node and
// per-edge feature values), so cells sharing structure share noise.
struct SyntheticBench {
  std::uint64_t seed = 0;
  double base = 0.80;
  double depth_bonus = 0.02;
  double conv1x1_score = 0.010;
  double conv3x3_score = 0.015;
  double maxpool_score = 0.004;
  double skip_score = 0.010;
  double pool_chain_penalty = 0.010;
  double noise_amplitude = 0.02;
};

EvaluatedRecord synth_eval(const SyntheticBench& bench, const CellGraph& g, const FlopsModel& model);

class SyntheticOracle final : public Benchmark {
 public:
  SyntheticOracle(SyntheticBench bench, FlopsModel model) : bench_(bench), model_(model) {}

  EvaluatedRecord query(const CellGraph& g) override;
  std::size_t query_count() const override;
  double flops(const CellGraph& g) const override { return estimate_flops(g, model_); }

  const SyntheticBench& bench() const { return bench_; }
  const FlopsModel& flops_model() const { return model_; }

 private:
  SyntheticBench bench_;
  FlopsModel model_;
  mutable std::mutex mu_;
  std::unordered_set<std::string> queried_;
};

// Exact top-k over every valid cell with at most v_max (<= 5) nodes, best
// first; ties broken by serialized cell.
std::vector<EvaluatedRecord> enumerate_top(const SyntheticBench& bench, const FlopsModel& model,
                                           int v_max, std::size_t k);

EvaluatedRecord record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EvaluatedRecord& r);

}  // namespace dnas
