#include "dnas/searchloop.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>
#include <unordered_set>

#include "dnas/error.hpp"
#include "dnas/rng.hpp"

namespace dnas {

double SearchConfig::margin() const {
  return std::isfinite(flops_limit) ? flops_margin * std::abs(flops_limit) : 0.0;
}

void SearchConfig::validate() const {
  const auto fail = [](const std::string& m) { throw Error(ErrorCode::kConfigError, m); };
  if (m_labeled < 1) fail("m_labeled must be positive");
  if (n_unlabeled < 0) fail("n_unlabeled must be non-negative");
  if (iters < 0) fail("iters must be non-negative");
  if (p_top < 1) fail("p_top must be positive");
  if (query_budget < 1) fail("query_budget must be positive");
  if (query_budget < m_labeled) fail("query_budget must be >= m_labeled");
  if (!(flops_limit > 0)) fail("flops_limit must be positive");
  if (flops_margin < 0) fail("flops_margin must be non-negative");
  if (max_nodes < kMinNodes || max_nodes > kMaxNodes) fail("max_nodes must be in [2, 7]");
  if (!(sigma > 0)) fail("sigma must be positive");
  if (topk < 1) fail("topk must be positive");
  if (eps1 < 0 || eps2 < 0 || eps1 + eps2 > 1.0 + 1e-12) fail("eps1 and eps2 must be >= 0 with eps1 + eps2 <= 1");
  if (eps2 > 0 && !std::isfinite(flops_limit)) fail("eps2 > 0 needs a finite flops_limit");
  if (edge_band < 0) fail("edge_band must be non-negative");
  if (range_expansion < 0) fail("range_expansion must be non-negative");
  if (eta1 < 0 || eta2 < 0) fail("eta1 and eta2 must be non-negative");
  if (grad_steps < 0) fail("grad_steps must be non-negative");
  if (retrain_epochs < 0) fail("retrain_epochs must be non-negative");
  controller.validate();
}

nlohmann::json to_json(const SearchConfig& c) {
  nlohmann::json j{{"m_labeled", c.m_labeled},
                   {"n_unlabeled", c.n_unlabeled},
                   {"iters", c.iters},
                   {"p_top", c.p_top},
                   {"query_budget", c.query_budget},
                   {"flops_margin", c.flops_margin},
                   {"dense_sampling", c.dense_sampling},
                   {"disentangle", c.disentangle},
                   {"seed", c.seed},
                   {"max_nodes", c.max_nodes},
                   {"sigma", c.sigma},
                   {"topk", c.topk},
                   {"eps1", c.eps1},
                   {"eps2", c.eps2},
                   {"edge_band", c.edge_band},
                   {"range_expansion", c.range_expansion},
                   {"eta1", c.eta1},
                   {"eta2", c.eta2},
                   {"grad_steps", c.grad_steps},
                   {"retrain_epochs", c.retrain_epochs},
                   {"controller", to_json(c.controller)}};
  // JSON has no infinity; null means unconstrained.
  j["flops_limit"] = std::isfinite(c.flops_limit) ? nlohmann::json(c.flops_limit) : nlohmann::json(nullptr);
  return j;
}

SearchConfig search_config_from_json(const nlohmann::json& j, SearchConfig c) {
  if (!j.is_object()) throw Error(ErrorCode::kConfigError, "config must be a JSON object");
  try {
    c.m_labeled = j.value("m_labeled", c.m_labeled);
    c.n_unlabeled = j.value("n_unlabeled", c.n_unlabeled);
    c.iters = j.value("iters", c.iters);
    c.p_top = j.value("p_top", c.p_top);
    c.query_budget = j.value("query_budget", c.query_budget);
    if (j.contains("flops_limit"))
      c.flops_limit = j["flops_limit"].is_null() ? std::numeric_limits<double>::infinity()
                                                 : j["flops_limit"].get<double>();
    c.flops_margin = j.value("flops_margin", c.flops_margin);
    c.dense_sampling = j.value("dense_sampling", c.dense_sampling);
    c.disentangle = j.value("disentangle", c.disentangle);
    c.seed = j.value("seed", c.seed);
    c.max_nodes = j.value("max_nodes", c.max_nodes);
    c.sigma = j.value("sigma", c.sigma);
    c.topk = j.value("topk", c.topk);
    c.eps1 = j.value("eps1", c.eps1);
    c.eps2 = j.value("eps2", c.eps2);
    c.edge_band = j.value("edge_band", c.edge_band);
    c.range_expansion = j.value("range_expansion", c.range_expansion);
    c.eta1 = j.value("eta1", c.eta1);
    c.eta2 = j.value("eta2", c.eta2);
    c.grad_steps = j.value("grad_steps", c.grad_steps);
    c.retrain_epochs = j.value("retrain_epochs", c.retrain_epochs);
    if (j.contains("controller")) {
      nlohmann::json merged = to_json(c.controller);
      merged.update(j["controller"]);
      c.controller = controller_config_from_json(merged);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfigError, std::string("bad config value: ") + e.what());
  }
  return c;
}

SearchConfig desk_search_config() {
  SearchConfig c;
  c.m_labeled = 50;
  c.n_unlabeled = 1000;
  c.iters = 5;
  c.p_top = 50;
  c.query_budget = 150;
  c.controller.epochs = 150;
  c.controller.learning_rate = 0.01;
  c.controller.batch_size = 16;
  c.retrain_epochs = 40;
  return c;
}

SearchConfig random_search_config(const SearchConfig& cfg) {
  SearchConfig r = cfg;
  r.iters = 0;
  r.m_labeled = cfg.query_budget;
  return r;
}

std::vector<PseudoLabeled> pseudo_label(std::span<const CellGraph> cells, const Controller& controller) {
  std::vector<PseudoLabeled> out;
  if (cells.empty()) return out;
  std::vector<TokenSequence> tokens;
  tokens.reserve(cells.size());
  for (const auto& c : cells) tokens.push_back(tokenize(c));
  const MatrixXd z = controller.encode_means(tokens);
  const VectorXd acc = controller.predict_acc_batch(z);
  const VectorXd fl = controller.predict_flops_batch(z);
  out.reserve(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    out.push_back({cells[i], acc(k), controller.flops_normalizer().to_raw(fl(k))});
  }
  return out;
}

std::vector<Candidate> select_top_p(std::span<const Candidate> candidates, int p, double flops_limit,
                                    double margin) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (candidates[i].predicted_flops <= flops_limit + margin) keep.push_back(i);
  std::stable_sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) {
    return candidates[a].predicted_acc > candidates[b].predicted_acc;
  });
  if (keep.size() > static_cast<std::size_t>(std::max(p, 0))) keep.resize(static_cast<std::size_t>(p));
  std::vector<Candidate> out;
  out.reserve(keep.size());
  for (std::size_t i : keep) out.push_back(candidates[i]);
  return out;
}

double SearchState::top_mean(std::size_t n, double flops_limit) const {
  std::vector<double> accs;
  for (const auto& r : labeled)
    if (r.flops <= flops_limit) accs.push_back(r.accuracy);
  if (accs.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(accs.begin(), accs.end(), std::greater<>());
  n = std::min(n, accs.size());
  return std::accumulate(accs.begin(), accs.begin() + static_cast<std::ptrdiff_t>(n), 0.0) /
         static_cast<double>(n);
}

namespace {

class Search {
 public:
  Search(const SearchConfig& cfg, Benchmark& bench) : cfg_(cfg), bench_(bench) {}

  SearchState run() {
    cfg_.validate();
    initial_pool();
    record(0, {});
    if (cfg_.iters == 0 || state_.budget_exhausted) return finish();

    ControllerConfig ccfg = cfg_.controller;
    if (!cfg_.disentangle) ccfg.beta = 0.0;
    state_.controller.emplace(ccfg, derive_seed(cfg_.seed, "controller-init"));
    fit(*state_.controller, labeled_examples(), ccfg.epochs, derive_seed(cfg_.seed, "pretrain"));
    for (int l = 1; l <= cfg_.iters && !state_.budget_exhausted; ++l) iterate(l);
    return finish();
  }

 private:
  bool feasible(double flops) const { return flops <= cfg_.flops_limit; }

  bool budget_left() const { return state_.labeled.size() < static_cast<std::size_t>(cfg_.query_budget); }

  // Queries a novel cell; false if it was skipped.
  bool query(const CellGraph& cell, IterationRecord& rec) {
    if (!feasible(bench_.flops(cell))) {
      ++rec.over_limit;
      return false;
    }
    if (!budget_left()) {
      state_.budget_exhausted = true;
      return false;
    }
    try {
      state_.labeled.push_back(bench_.query(cell));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNotInBench) throw;
      ++rec.not_in_bench;
      queried_.insert(serialize(cell));
      return false;
    }
    queried_.insert(serialize(cell));
    if (!budget_left()) state_.budget_exhausted = true;
    return true;
  }

  void initial_pool() {
    IterationRecord scratch;
    const std::size_t target = static_cast<std::size_t>(std::min(cfg_.m_labeled, cfg_.query_budget));
    const std::uint64_t cap = 1000ULL * target + 10000ULL;
    for (std::uint64_t i = 0; state_.labeled.size() < target && i < cap; ++i) {
      CellGraph cell = random_cell(derive_seed(cfg_.seed, "init", i), cfg_.max_nodes);
      if (queried_.count(serialize(cell))) continue;
      query(cell, scratch);
    }
    pool_skips_ = scratch;
  }

  std::vector<TrainingExample> labeled_examples() const {
    std::vector<TrainingExample> ex;
    for (const auto& r : state_.labeled) ex.push_back(make_example(r.cell, r.accuracy, r.flops));
    return ex;
  }

  void iterate(int l) {
    Controller& ctl = *state_.controller;
    IterationRecord rec;
    rec.iteration = l;

    std::vector<TokenSequence> lab_tokens;
    for (const auto& r : state_.labeled) lab_tokens.push_back(tokenize(r.cell));
    const MatrixXd lab_means = ctl.encode_means(lab_tokens);

    SamplerPolicy policy;
    policy.eps1 = cfg_.dense_sampling ? cfg_.eps1 : 0.0;
    policy.eps2 = cfg_.dense_sampling ? cfg_.eps2 : 0.0;
    policy.flops_limit = cfg_.flops_limit;
    policy.edge_band = cfg_.edge_band;
    set_global_range(policy, lab_means, cfg_.range_expansion);

    PromisingRegion region;
    if (policy.eps1 > 0.0 && state_.labeled.size() >= static_cast<std::size_t>(cfg_.topk)) {
      std::vector<RegionInput> inputs;
      for (std::size_t i = 0; i < state_.labeled.size(); ++i)
        inputs.push_back({lab_means.col(static_cast<Eigen::Index>(i)), state_.labeled[i].accuracy});
      region = compute_regions(inputs, cfg_.sigma, cfg_.topk);
      for (int d = 0; d < ctl.latent_dim(); ++d) rec.region_volume.push_back(region.volume(d));
    } else {
      policy.eps1 = 0.0;
    }
    policy.validate();

    // Sample N latent points and decode them into the pseudo-labeled set.
    const FlopsPredictor predict = [&](const VectorXd& z) {
      return ctl.flops_normalizer().to_raw(ctl.predict_flops_batch(z)(0));
    };
    MatrixXd points(ctl.latent_dim(), cfg_.n_unlabeled);
    for (int i = 0; i < cfg_.n_unlabeled; ++i) {
      const auto idx = static_cast<std::uint64_t>(l) * static_cast<std::uint64_t>(cfg_.n_unlabeled) + i;
      const LatentDraw draw = sample_latent(region, policy, predict, derive_seed(cfg_.seed, "sample", idx));
      points.col(i) = draw.code.mean;
      ++rec.branch_counts[static_cast<std::size_t>(draw.branch)];
    }
    std::vector<CellGraph> fresh;
    std::unordered_set<std::string> seen = queried_;
    for (const auto& tokens : ctl.decode_batch(points)) {
      CellGraph cell;
      try {
        cell = detokenize(tokens);
      } catch (const Error&) {
        ++rec.unrepairable;
        continue;
      }
      if (cell.num_nodes() > cfg_.max_nodes) continue;
      if (!seen.insert(serialize(cell)).second) continue;
      fresh.push_back(std::move(cell));
    }
    state_.pseudo = pseudo_label(fresh, ctl);
    rec.pseudo_labeled = state_.pseudo.size();
    if (!state_.pseudo.empty()) {
      double s = 0.0;
      for (const auto& p : state_.pseudo) s += p.accuracy;
      rec.mean_pseudo_acc = s / static_cast<double>(state_.pseudo.size());
    }

    // Warm-start refit on D' and D-hat.
    std::vector<TrainingExample> data = labeled_examples();
    for (const auto& p : state_.pseudo) data.push_back(make_example(p.cell, p.accuracy, p.flops));
    const TrainHistory h = fit(ctl, data, cfg_.retrain_epochs, derive_seed(cfg_.seed, "retrain", l));
    if (!h.epoch_loss.empty()) rec.train_loss = h.epoch_loss.back() / static_cast<double>(data.size());

    // Rank every known cell by the refreshed predictor.
    std::vector<CellGraph> all;
    for (const auto& r : state_.labeled) all.push_back(r.cell);
    for (const auto& p : state_.pseudo) all.push_back(p.cell);
    std::vector<TokenSequence> all_tokens;
    for (const auto& c : all) all_tokens.push_back(tokenize(c));
    const MatrixXd z = ctl.encode_means(all_tokens);
    const VectorXd acc = ctl.predict_acc_batch(z);
    const VectorXd fl = ctl.predict_flops_batch(z);
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < all.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      cands.push_back({all[i], z.col(k), acc(k), ctl.flops_normalizer().to_raw(fl(k))});
    }
    const auto top = select_top_p(cands, cfg_.p_top, cfg_.flops_limit, cfg_.margin());
    rec.candidates = top.size();

    std::vector<LatentCode> starts;
    for (const auto& c : top) starts.push_back(LatentCode::point(c.z));
    const ImproveResult improved =
        improve_architectures(starts, ctl, cfg_.eta1, cfg_.eta2, cfg_.grad_steps, queried_, cfg_.max_nodes);
    rec.improved_novel = improved.cells.size();
    for (const auto& cell : improved.cells) {
      query(cell, rec);
      if (state_.budget_exhausted) break;
    }
    record(l, std::move(rec));
  }

  void record(int l, IterationRecord rec) {
    rec.iteration = l;
    if (l == 0) {
      rec.over_limit = pool_skips_.over_limit;
      rec.not_in_bench = pool_skips_.not_in_bench;
    }
    rec.queries_used = state_.labeled.size();
    update_best();
    if (state_.best) rec.best_acc = state_.best->accuracy;
    state_.history.push_back(std::move(rec));
  }

  void update_best() {
    state_.best.reset();
    for (const auto& r : state_.labeled)
      if (feasible(r.flops) && (!state_.best || r.accuracy > state_.best->accuracy)) state_.best = r;
  }

  SearchState finish() {
    update_best();
    return std::move(state_);
  }

  SearchConfig cfg_;
  Benchmark& bench_;
  SearchState state_;
  std::unordered_set<std::string> queried_;
  IterationRecord pool_skips_;
};

double stddev(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

SearchState run_search(const SearchConfig& cfg, Benchmark& bench) { return Search(cfg, bench).run(); }

std::vector<AblationRow> run_ablation(const SearchConfig& cfg, Benchmark& bench, int seeds, int jobs) {
  if (seeds < 1) throw Error(ErrorCode::kConfigError, "seeds must be positive");
  constexpr std::array<std::pair<bool, bool>, 4> variants{{{false, false}, {false, true}, {true, false}, {true, true}}};
  const std::size_t runs = variants.size() * static_cast<std::size_t>(seeds);
  std::vector<double> top1(runs), top10(runs);
  std::vector<SearchConfig> cfgs(runs, cfg);
  for (std::size_t v = 0; v < variants.size(); ++v)
    for (int s = 0; s < seeds; ++s) {
      SearchConfig& c = cfgs[v * static_cast<std::size_t>(seeds) + static_cast<std::size_t>(s)];
      c.dense_sampling = variants[v].first;
      c.disentangle = variants[v].second;
      c.seed = cfg.seed + static_cast<std::uint64_t>(s);
    }
  cfgs.front().validate();

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  const auto worker = [&] {
    for (std::size_t i = next++; i < runs; i = next++) {
      try {
        const SearchState st = run_search(cfgs[i], bench);
        top1[i] = st.top_mean(1, cfgs[i].flops_limit);
        top10[i] = st.top_mean(10, cfgs[i].flops_limit);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int n_threads = std::max(1, std::min(jobs, static_cast<int>(runs)));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<AblationRow> rows;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const auto first = top1.begin() + static_cast<std::ptrdiff_t>(v * seeds);
    const std::vector<double> a(first, first + seeds);
    const auto first10 = top10.begin() + static_cast<std::ptrdiff_t>(v * seeds);
    const std::vector<double> b(first10, first10 + seeds);
    AblationRow row;
    row.dense = variants[v].first;
    row.disentangle = variants[v].second;
    row.top1_mean = std::accumulate(a.begin(), a.end(), 0.0) / seeds;
    row.top10_mean = std::accumulate(b.begin(), b.end(), 0.0) / seeds;
    row.top1_std = stddev(a, row.top1_mean);
    row.top10_std = stddev(b, row.top10_mean);
    rows.push_back(row);
  }
  return rows;
}

void write_history_csv(const SearchState& state, int latent_dim, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << "iteration,queries_used,best_oracle_acc,mean_pseudo_acc";
  for (int d = 0; d < latent_dim; ++d) out << ",region_volume_" << d;
  out << '\n';
  out.precision(17);
  const auto num = [&](double x) -> std::ostream& {
    if (std::isfinite(x)) out << x;
    return out;
  };
  for (const auto& r : state.history) {
    out << r.iteration << ',' << r.queries_used << ',';
    num(r.best_acc) << ',';
    num(r.mean_pseudo_acc);
    for (int d = 0; d < latent_dim; ++d) {
      out << ',';
      if (static_cast<std::size_t>(d) < r.region_volume.size()) out << r.region_volume[d];
    }
    out << '\n';
  }
}

void write_labeled_jsonl(const SearchState& state, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  for (const auto& r : state.labeled) out << to_json(r).dump() << '\n';
}

}  // namespace dnas
