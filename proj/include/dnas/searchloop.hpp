#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dnas/benchmark.hpp"
#include "dnas/controller.hpp"
#include "dnas/sampler.hpp"

namespace dnas {

struct SearchConfig {
  int m_labeled = 100;       // initial labeled pool size M
  int n_unlabeled = 10000;   // latent samples per iteration N
  int iters = 2;             // refinement iterations L
  int p_top = 100;           // candidates improved per iteration P
  int query_budget = 300;    // distinct oracle queries
  double flops_limit = std::numeric_limits<double>::infinity();  // F
  double flops_margin = 0.05;  // tau, as a fraction of F
  bool dense_sampling = true;
  bool disentangle = true;   // false forces beta = 0
  std::uint64_t seed = 1;
  int max_nodes = kMaxNodes;

  // Sampler.
  double sigma = 0.05;
  int topk = 3;
  double eps1 = 0.05;
  double eps2 = 0.0;
  double edge_band = 0.1;   // fraction of F
  double range_expansion = 0.2;

  // Latent gradient step.
  double eta1 = 30.0;
  double eta2 = 0.0;
  int grad_steps = 1;

  // Controller and its schedule; controller.epochs is the pretraining length.
  ControllerConfig controller;
  int retrain_epochs = 1000;

  double margin() const;  // tau in FLOPS units
  void validate() const;  // throws Error(kConfigError)
};

nlohmann::json to_json(const SearchConfig& cfg);
// Missing keys keep the values already in `base`.
SearchConfig search_config_from_json(const nlohmann::json& j, SearchConfig base = {});

// Reduced sample counts and epochs with a larger learning rate, sized for
// a single CPU core. Space and sampler settings keep their defaults.
SearchConfig desk_search_config();

// Initial pool equal to the whole budget, no refinement.
SearchConfig random_search_config(const SearchConfig& cfg);

struct PseudoLabeled {
  CellGraph cell;
  double accuracy = 0.0;  // predicted
  double flops = 0.0;     // predicted, raw units
};

// Predictor outputs at the posterior means. Never queries the oracle.
std::vector<PseudoLabeled> pseudo_label(std::span<const CellGraph> cells, const Controller& controller);

struct Candidate {
  CellGraph cell;
  VectorXd z;
  double predicted_acc = 0.0;
  double predicted_flops = 0.0;  // raw units
};

// Highest predicted accuracy first (stable), keeping predicted FLOPS <= F + tau.
std::vector<Candidate> select_top_p(std::span<const Candidate> candidates, int p, double flops_limit,
                                    double margin);

struct IterationRecord {
  int iteration = 0;  // 0 is the initial pool
  std::size_t queries_used = 0;
  double best_acc = std::numeric_limits<double>::quiet_NaN();
  double mean_pseudo_acc = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> region_volume;
  std::array<std::size_t, 3> branch_counts{};  // PROMISING, FLOPS_EDGE, GLOBAL
  std::size_t pseudo_labeled = 0;
  std::size_t unrepairable = 0;
  std::size_t candidates = 0;
  std::size_t improved_novel = 0;
  std::size_t over_limit = 0;
  std::size_t not_in_bench = 0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();
};

struct SearchState {
  std::vector<EvaluatedRecord> labeled;    // D'
  std::vector<PseudoLabeled> pseudo;       // latest D-hat
  std::optional<EvaluatedRecord> best;     // best feasible labeled cell
  std::vector<IterationRecord> history;
  std::optional<Controller> controller;
  bool budget_exhausted = false;

  std::size_t query_count() const { return labeled.size(); }
  // Mean accuracy of the n best feasible labeled cells.
  double top_mean(std::size_t n, double flops_limit) const;
};

SearchState run_search(const SearchConfig& cfg, Benchmark& bench);

struct AblationRow {
  bool dense = false;
  bool disentangle = false;
  double top1_mean = 0.0, top1_std = 0.0;
  double top10_mean = 0.0, top10_std = 0.0;
};

// Four variants (dense, disentangle) in the order NN, NY, YN, YY, each run
// with seeds cfg.seed .. cfg.seed + seeds - 1.
std::vector<AblationRow> run_ablation(const SearchConfig& cfg, Benchmark& bench, int seeds, int jobs = 1);

// Output files of a search run.
void write_history_csv(const SearchState& state, int latent_dim, const std::filesystem::path& path);
void write_labeled_jsonl(const SearchState& state, const std::filesystem::path& path);

}  // namespace dnas
