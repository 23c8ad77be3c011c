#include "dnas/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include "dnas/error.hpp"
#include "dnas/rng.hpp"

namespace dnas {

BenchTable::BenchTable(BenchTable&& other) noexcept
    : fallback_(other.fallback_),
      records_(std::move(other.records_)),
      duplicates_(other.duplicates_),
      queried_(std::move(other.queried_)) {}

bool BenchTable::insert(EvaluatedRecord record) {
  std::string key = serialize(record.cell);
  const bool inserted = records_.try_emplace(std::move(key), std::move(record)).second;
  if (!inserted) ++duplicates_;
  return inserted;
}

EvaluatedRecord BenchTable::query(const CellGraph& g) {
  const std::string key = serialize(prune(g));
  const auto it = records_.find(key);
  if (it == records_.end()) throw Error(ErrorCode::kNotInBench, key);
  std::lock_guard lock(mu_);
  queried_.insert(key);
  return it->second;
}

std::size_t BenchTable::query_count() const {
  std::lock_guard lock(mu_);
  return queried_.size();
}

double BenchTable::flops(const CellGraph& g) const {
  const CellGraph p = prune(g);
  if (const auto it = records_.find(serialize(p)); it != records_.end()) return it->second.flops;
  return estimate_flops(p, fallback_);
}

bool BenchTable::contains(const CellGraph& g) const {
  return records_.count(serialize(prune(g))) != 0;
}

EvaluatedRecord record_from_json(const nlohmann::json& j) {
  EvaluatedRecord r;
  r.cell = cell_from_json(j);
  if (!j.contains("acc") || !j.contains("flops"))
    throw Error(ErrorCode::kInvalidCell, "record needs 'acc' and 'flops'");
  r.accuracy = j.at("acc").get<double>();
  r.flops = j.at("flops").get<double>();
  if (!(r.accuracy >= 0.0 && r.accuracy <= 1.0)) throw Error(ErrorCode::kInvalidCell, "acc outside [0, 1]");
  if (!(r.flops >= 0.0)) throw Error(ErrorCode::kInvalidCell, "negative flops");
  return r;
}

nlohmann::json to_json(const EvaluatedRecord& r) {
  nlohmann::json j = to_json(r.cell);
  j["acc"] = r.accuracy;
  j["flops"] = r.flops;
  return j;
}

std::vector<EvaluatedRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::vector<EvaluatedRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParseError, e.what(), line_no);
    }
    EvaluatedRecord r;
    try {
      r = record_from_json(j);
      const Verdict raw = validate(r.cell);
      if (raw != Verdict::kOk && raw != Verdict::kDisconnected)
        throw Error(ErrorCode::kInvalidCell, std::string(to_string(raw)));
      r.cell = prune(r.cell);
      if (const Verdict v = validate(r.cell); v != Verdict::kOk)
        throw Error(ErrorCode::kInvalidCell, std::string(to_string(v)));
    } catch (const Error& e) {
      throw Error(ErrorCode::kInvalidCell, e.what(), line_no);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kInvalidCell, e.what(), line_no);
    }
    records.push_back(std::move(r));
  }
  return records;
}

BenchTable load_records(const std::filesystem::path& path, FlopsModel fallback) {
  BenchTable table(fallback);
  for (auto& r : read_records(path)) table.insert(std::move(r));
  if (table.duplicate_count() > 0)
    std::cerr << "warning: " << path.string() << ": " << table.duplicate_count()
              << " duplicate cells ignored\n";
  return table;
}

namespace {

double feature_value(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c,
                     std::uint64_t d, std::uint64_t e) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t x : {a, b, c, d, e}) h = splitmix64(h ^ x);
  return 2.0 * (static_cast<double>(h >> 11) * 0x1.0p-53) - 1.0;
}

double smooth_noise(const SyntheticBench& bench, const CellGraph& g) {
  if (bench.noise_amplitude == 0.0) return 0.0;
  const int v = g.num_nodes();
  double sum = 0.0;
  int count = 0;
  const auto op = [&](int k) { return static_cast<std::uint64_t>(g.ops[k]); };
  for (int k = 1; k + 1 < v; ++k) {
    sum += feature_value(bench.seed, 1, k, op(k), 0, 0);
    ++count;
  }
  for (int i = 0; i < v; ++i)
    for (int j = i + 1; j < v; ++j)
      if (g.edge(i, j)) {
        // Terminals are keyed by role so that edges into OUTPUT look alike
        // across cells of different sizes.
        const std::uint64_t j_key = j == v - 1 ? 99 : j;
        sum += feature_value(bench.seed, 2, i, j_key, op(i), op(j));
        ++count;
      }
  return bench.noise_amplitude * std::tanh(sum / std::sqrt(static_cast<double>(count)));
}

}  // namespace

EvaluatedRecord synth_eval(const SyntheticBench& bench, const CellGraph& g, const FlopsModel& model) {
  const int v = g.num_nodes();
  double acc = bench.base + bench.depth_bonus * longest_path(g);
  for (int k = 1; k + 1 < v; ++k) {
    switch (g.ops[k]) {
      case OpType::kConv1x1: acc += bench.conv1x1_score; break;
      case OpType::kConv3x3: acc += bench.conv3x3_score; break;
      case OpType::kMaxPool3x3: acc += bench.maxpool_score; break;
      default: break;
    }
  }
  const int skips = std::max(0, g.num_edges() - (v - 1));
  acc += bench.skip_score * std::sqrt(static_cast<double>(skips));
  int pool_chains = 0;
  for (int i = 1; i + 1 < v; ++i)
    for (int j = i + 1; j + 1 < v; ++j)
      pool_chains += g.edge(i, j) && g.ops[i] == OpType::kMaxPool3x3 && g.ops[j] == OpType::kMaxPool3x3;
  acc -= bench.pool_chain_penalty * pool_chains;
  acc += smooth_noise(bench, g);
  return {g, std::clamp(acc, 0.0, 1.0), estimate_flops(g, model)};
}

EvaluatedRecord SyntheticOracle::query(const CellGraph& g) {
  const CellGraph p = prune(g);
  if (validate(p) != Verdict::kOk) throw Error(ErrorCode::kNotInBench, serialize(p));
  {
    std::lock_guard lock(mu_);
    queried_.insert(serialize(p));
  }
  return synth_eval(bench_, p, model_);
}

std::size_t SyntheticOracle::query_count() const {
  std::lock_guard lock(mu_);
  return queried_.size();
}

std::vector<EvaluatedRecord> enumerate_top(const SyntheticBench& bench, const FlopsModel& model,
                                           int v_max, std::size_t k) {
  if (v_max > 5) throw Error(ErrorCode::kConfigError, "enumerate_top supports v_max <= 5");
  std::vector<std::pair<std::string, EvaluatedRecord>> all;
  for (CellGraph& g : enumerate_cells(v_max)) {
    std::string key = serialize(g);
    all.emplace_back(std::move(key), synth_eval(bench, g, model));
  }
  const auto better = [](const auto& a, const auto& b) {
    if (a.second.accuracy != b.second.accuracy) return a.second.accuracy > b.second.accuracy;
    return a.first < b.first;
  };
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  std::vector<EvaluatedRecord> top;
  top.reserve(k);
  for (std::size_t i = 0; i < k; ++i) top.push_back(std::move(all[i].second));
  return top;
}

}  // namespace dnas
