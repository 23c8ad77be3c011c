#include "dnas/cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>

#include "dnas/analysis.hpp"
#include "dnas/benchmark.hpp"
#include "dnas/error.hpp"
#include "dnas/searchloop.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dnas::cli {
namespace {

std::string sha1_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha1(), nullptr) != 1)
    throw Error(ErrorCode::kIoError, "SHA-1 digest failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& path, ErrorCode missing) {
  std::ifstream in(path);
  if (!in) throw Error(missing, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << text;
}

// Config keys and the flags that set them, for error messages.
const std::vector<std::pair<std::string, std::string>> kFlagOf = {
    {"m_labeled", "--m-labeled"},     {"n_unlabeled", "--n-unlabeled"},
    {"iters", "--iters"},             {"p_top", "--p-top"},
    {"query_budget", "--budget"},     {"flops_limit", "--flops-limit"},
    {"flops_margin", "--margin"},     {"max_nodes", "--max-nodes"},
    {"sigma", "--sigma"},             {"topk", "--topk"},
    {"eps1", "--eps1"},               {"eps2", "--eps2"},
    {"edge_band", "--edge-band"},     {"range_expansion", "--range-expansion"},
    {"eta1", "--eta1"},               {"grad_steps", "--grad-steps"},
    {"retrain_epochs", "--retrain-epochs"}, {"hidden_size", "--hidden"},
    {"learning_rate", "--lr"},        {"epochs", "--epochs"},
    {"batch_size", "--batch-size"},
};

[[noreturn]] void config_error(const std::string& message) {
  const std::string key = message.substr(0, message.find_first_of(" ,"));
  for (const auto& [k, flag] : kFlagOf)
    if (k == key) throw Error(ErrorCode::kConfigError, flag + ": " + message);
  throw Error(ErrorCode::kConfigError, message);
}

void validate_or_name_flag(const SearchConfig& cfg) {
  try {
    cfg.validate();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kConfigError) throw;
    const std::string what = e.what();
    const std::string prefix = std::string(to_string(ErrorCode::kConfigError)) + ": ";
    config_error(what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what);
  }
}

// ---- benchmarks -------------------------------------------------------------

struct BenchSpec {
  std::string spec = "synthetic";
  std::uint64_t seed = 7;

  bool synthetic() const { return spec == "synthetic"; }
  fs::path path() const { return spec.substr(5); }
};

BenchSpec parse_bench(const std::string& spec, std::uint64_t seed) {
  if (spec != "synthetic" && spec.rfind("file:", 0) != 0)
    throw Error(ErrorCode::kConfigError, "--bench: expected 'synthetic' or 'file:<path>', got '" + spec + "'");
  if (spec.rfind("file:", 0) == 0 && spec.size() == 5)
    throw Error(ErrorCode::kConfigError, "--bench: empty file path");
  return {spec, seed};
}

json bench_json(const BenchSpec& b) {
  if (b.synthetic()) return {{"spec", b.spec}, {"seed", b.seed}};
  return {{"spec", b.spec}, {"sha1", sha1_hex(read_file(b.path()))}};
}

std::unique_ptr<Benchmark> open_bench(const BenchSpec& b) {
  if (b.synthetic()) {
    SyntheticBench sb;
    sb.seed = b.seed;
    return std::make_unique<SyntheticOracle>(sb, FlopsModel{});
  }
  return std::make_unique<BenchTable>(load_records(b.path()));
}

// FLOPS at the given percentile (nearest rank) of the search space.
double flops_percentile(const BenchSpec& b, int max_nodes, double pct) {
  if (!(pct > 0 && pct <= 100)) throw Error(ErrorCode::kConfigError, "--flops-percentile: must be in (0, 100]");
  std::vector<double> flops;
  if (b.synthetic()) {
    if (max_nodes > 6) throw Error(ErrorCode::kConfigError, "--flops-percentile: synthetic space needs --max-nodes <= 6");
    for (const auto& c : enumerate_cells(max_nodes)) flops.push_back(estimate_flops(c, FlopsModel{}));
  } else {
    for (const auto& r : read_records(b.path())) flops.push_back(r.flops);
  }
  if (flops.empty()) throw Error(ErrorCode::kConfigError, "--flops-percentile: empty search space");
  std::sort(flops.begin(), flops.end());
  const auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(flops.size())));
  return flops[std::max<std::size_t>(rank, 1) - 1];
}

// ---- search flags -------------------------------------------------------------

struct SearchFlags {
  std::string bench = "synthetic";
  std::optional<std::uint64_t> bench_seed;
  std::optional<std::string> preset;
  std::optional<std::string> config;
  std::string out = "dnas_out";
  int jobs = 1;

  std::optional<int> budget, m_labeled, n_unlabeled, iters, p_top, topk, max_nodes, grad_steps;
  std::optional<int> hidden, epochs, retrain_epochs, batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<double> sigma, eps1, eps2, flops_limit, flops_pct, edge_band, margin, eta1, eta2;
  std::optional<double> lr, beta, range_expansion;
  bool no_dense = false, no_disentangle = false;
};

void add_search_flags(CLI::App* app, SearchFlags& f) {
  app->add_option("--bench", f.bench, "synthetic | file:<path.jsonl>")->capture_default_str();
  app->add_option("--bench-seed", f.bench_seed, "Seed of the synthetic landscape (default 7)");
  app->add_option("--preset", f.preset, "desk | full (default: desk for synthetic, full for files)")
      ->check(CLI::IsMember({"desk", "full"}));
  app->add_option("--config", f.config, "JSON config or a previous manifest.json");
  app->add_option("--out", f.out, "Output directory")->capture_default_str();
  app->add_option("--jobs", f.jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  app->add_option("--seed", f.seed, "Root seed");
  app->add_option("--budget", f.budget, "Distinct oracle queries");
  app->add_option("--m-labeled", f.m_labeled, "Initial labeled pool size");
  app->add_option("--n-unlabeled", f.n_unlabeled, "Latent samples per iteration");
  app->add_option("--iters", f.iters, "Refinement iterations");
  app->add_option("--p-top", f.p_top, "Candidates improved per iteration");
  app->add_option("--sigma", f.sigma, "Promising-region half-width");
  app->add_option("--topk", f.topk, "Records defining the promising region");
  app->add_option("--eps1", f.eps1, "Promising-region probability");
  app->add_option("--eps2", f.eps2, "FLOPS-edge probability");
  app->add_option("--flops-limit", f.flops_limit, "FLOPS limit F");
  app->add_option("--flops-percentile", f.flops_pct, "Set F to this percentile of the space's FLOPS");
  app->add_option("--edge-band", f.edge_band, "FLOPS-edge band as a fraction of F");
  app->add_option("--margin", f.margin, "Selection margin tau as a fraction of F");
  app->add_option("--eta1", f.eta1, "Accuracy ascent step");
  app->add_option("--eta2", f.eta2, "FLOPS descent step");
  app->add_option("--grad-steps", f.grad_steps, "Latent steps per candidate");
  app->add_option("--max-nodes", f.max_nodes, "Largest cell in the search space");
  app->add_option("--range-expansion", f.range_expansion, "Global latent box widening");
  app->add_option("--hidden", f.hidden, "Controller width (also the latent size)");
  app->add_option("--epochs", f.epochs, "Pretraining epochs");
  app->add_option("--retrain-epochs", f.retrain_epochs, "Epochs per refinement iteration");
  app->add_option("--lr", f.lr, "Adam learning rate");
  app->add_option("--batch-size", f.batch_size, "Mini-batch size");
  app->add_option("--beta", f.beta, "KL weight");
  app->add_flag("--no-dense", f.no_dense, "Disable dense sampling");
  app->add_flag("--no-disentangle", f.no_disentangle, "Force beta = 0");
}

struct Resolved {
  SearchConfig cfg;
  BenchSpec bench;
  std::string preset;
};

template <typename T>
void apply(const std::optional<T>& flag, T& field) {
  if (flag) field = *flag;
}

// Defaults < config file < flags.
Resolved resolve(const SearchFlags& f) {
  json file;
  bool from_manifest = false;
  if (f.config) {
    file = read_json(*f.config, ErrorCode::kConfigError);
    if (!file.is_object()) throw Error(ErrorCode::kConfigError, "--config: expected a JSON object");
    from_manifest = file.contains("config") && file["config"].is_object();
  }

  Resolved r;
  std::string bench = f.bench;
  std::uint64_t bench_seed = 7;
  if (from_manifest && file.contains("bench")) {
    bench = file["bench"].value("spec", bench);
    bench_seed = file["bench"].value("seed", bench_seed);
  } else if (file.is_object()) {
    bench = file.value("bench", bench);
    bench_seed = file.value("bench_seed", bench_seed);
  }
  if (f.bench != "synthetic") bench = f.bench;
  apply(f.bench_seed, bench_seed);
  r.bench = parse_bench(bench, bench_seed);

  r.preset = r.bench.synthetic() ? "desk" : "full";
  if (file.is_object()) r.preset = file.value("preset", r.preset);
  apply(f.preset, r.preset);
  if (r.preset != "desk" && r.preset != "full") throw Error(ErrorCode::kConfigError, "--preset: unknown preset");

  SearchConfig base = r.preset == "desk" ? desk_search_config() : SearchConfig{};
  if (r.bench.synthetic() && r.preset == "desk") base.max_nodes = 5;
  r.cfg = file.is_object() ? search_config_from_json(from_manifest ? file["config"] : file, base) : base;

  SearchConfig& c = r.cfg;
  apply(f.seed, c.seed);
  apply(f.budget, c.query_budget);
  apply(f.m_labeled, c.m_labeled);
  apply(f.n_unlabeled, c.n_unlabeled);
  apply(f.iters, c.iters);
  apply(f.p_top, c.p_top);
  apply(f.sigma, c.sigma);
  apply(f.topk, c.topk);
  apply(f.eps1, c.eps1);
  apply(f.eps2, c.eps2);
  apply(f.edge_band, c.edge_band);
  apply(f.margin, c.flops_margin);
  apply(f.eta1, c.eta1);
  apply(f.eta2, c.eta2);
  apply(f.grad_steps, c.grad_steps);
  apply(f.max_nodes, c.max_nodes);
  apply(f.range_expansion, c.range_expansion);
  apply(f.retrain_epochs, c.retrain_epochs);
  apply(f.epochs, c.controller.epochs);
  apply(f.lr, c.controller.learning_rate);
  apply(f.batch_size, c.controller.batch_size);
  apply(f.beta, c.controller.beta);
  if (f.hidden) c.controller.hidden_size = c.controller.latent_dim = *f.hidden;
  if (f.no_dense) c.dense_sampling = false;
  if (f.no_disentangle) c.disentangle = false;
  if (f.flops_limit && f.flops_pct) throw Error(ErrorCode::kConfigError, "--flops-limit: conflicts with --flops-percentile");
  apply(f.flops_limit, c.flops_limit);
  if (f.flops_pct) c.flops_limit = flops_percentile(r.bench, c.max_nodes, *f.flops_pct);

  if (c.eps1 + c.eps2 > 1.0 + 1e-12)
    throw Error(ErrorCode::kConfigError, "--eps1/--eps2: probabilities sum to more than 1");
  validate_or_name_flag(c);
  return r;
}

json manifest_base(const std::string& command, const Resolved& r, const fs::path& out) {
  json m{{"command", command},
         {"preset", r.preset},
         {"bench", bench_json(r.bench)},
         {"config", to_json(r.cfg)},
         {"seed", r.cfg.seed}};
  m["input_hash"] = sha1_hex(m.dump());
  m["out_dir"] = out.string();
  return m;
}

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json iteration_json(const IterationRecord& h) {
  return {{"iteration", h.iteration},
          {"queries_used", h.queries_used},
          {"best_oracle_acc", number_or_null(h.best_acc)},
          {"mean_pseudo_acc", number_or_null(h.mean_pseudo_acc)},
          {"pseudo_labeled", h.pseudo_labeled},
          {"unrepairable", h.unrepairable},
          {"candidates", h.candidates},
          {"improved_novel", h.improved_novel},
          {"over_limit", h.over_limit},
          {"not_in_bench", h.not_in_bench},
          {"branch_counts", h.branch_counts},
          {"train_loss", number_or_null(h.train_loss)},
          {"region_volume", h.region_volume}};
}

void prepare_out(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + out.string() + ": " + ec.message());
}

int cmd_search(const SearchFlags& f, std::ostream& out) {
  const Resolved r = resolve(f);
  const fs::path dir = f.out;
  prepare_out(dir);
  auto bench = open_bench(r.bench);
  const SearchState st = run_search(r.cfg, *bench);

  json m = manifest_base("search", r, dir);
  m["iterations"] = json::array();
  for (const auto& h : st.history) m["iterations"].push_back(iteration_json(h));
  m["queries"] = st.query_count();
  m["budget_exhausted"] = st.budget_exhausted;
  m["best"] = st.best ? to_json(*st.best) : json(nullptr);
  write_text(dir / "manifest.json", m.dump(2) + "\n");
  write_history_csv(st, r.cfg.controller.latent_dim, dir / "history.csv");
  write_labeled_jsonl(st, dir / "labeled.jsonl");
  write_text(dir / "best_cell.json", (st.best ? to_json(*st.best) : json(nullptr)).dump(2) + "\n");
  if (st.controller) save_controller(*st.controller, dir / "controller");

  out << std::setprecision(6) << std::fixed;
  if (st.best)
    out << "best_acc " << st.best->accuracy << "\nbest_cell " << serialize(st.best->cell) << "\n";
  else
    out << "best_acc none\n";
  out << "queries " << st.query_count() << "\n";
  return 0;
}

int cmd_ablate(const SearchFlags& f, int seeds, std::ostream& out) {
  const Resolved r = resolve(f);
  if (seeds < 1) throw Error(ErrorCode::kConfigError, "--seeds: must be positive");
  const fs::path dir = f.out;
  prepare_out(dir);
  auto bench = open_bench(r.bench);
  const auto rows = run_ablation(r.cfg, *bench, seeds, f.jobs);

  std::ostringstream csv;
  csv << std::setprecision(17);
  csv << "dense,disen,top1_mean,top1_std,top10_mean,top10_std\n";
  json table = json::array();
  for (const auto& row : rows) {
    csv << (row.dense ? 'Y' : 'N') << ',' << (row.disentangle ? 'Y' : 'N') << ',' << row.top1_mean << ','
        << row.top1_std << ',' << row.top10_mean << ',' << row.top10_std << '\n';
    table.push_back({{"dense", row.dense}, {"disen", row.disentangle}, {"top1_mean", row.top1_mean},
                     {"top1_std", row.top1_std}, {"top10_mean", row.top10_mean}, {"top10_std", row.top10_std}});
  }
  write_text(dir / "ablation.csv", csv.str());
  json m = manifest_base("ablate", r, dir);
  m["seeds"] = seeds;
  m["rows"] = table;
  write_text(dir / "manifest.json", m.dump(2) + "\n");
  out << csv.str();
  return 0;
}

// ---- analysis -------------------------------------------------------------------

fs::path checkpoint_stem(const fs::path& p) { return fs::is_directory(p) ? p / "controller" : p; }

std::vector<int> parse_dims(const std::string& spec, int latent_dim, const char* flag) {
  std::vector<int> dims;
  if (spec == "all") {
    for (int d = 0; d < latent_dim; ++d) dims.push_back(d);
    return dims;
  }
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t used = 0;
    int d = -1;
    try {
      d = std::stoi(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != part.size() || part.empty())
      throw Error(ErrorCode::kConfigError, std::string(flag) + ": expected 'all' or integers, got '" + spec + "'");
    if (d < 0 || d >= latent_dim)
      throw Error(ErrorCode::kConfigError, std::string(flag) + ": dimension " + part + " outside [0, " +
                                               std::to_string(latent_dim) + ")");
    dims.push_back(d);
  }
  return dims;
}

struct AnalysisFlags {
  std::string checkpoint;
  std::optional<std::string> base, records;
  std::string dims = "all";
  double lo = -0.4, hi = 0.4;
  int steps = 9;
  std::string out = "dnas_analysis";
};

int cmd_traverse(const AnalysisFlags& f, std::ostream& out) {
  if (!(f.lo < f.hi)) throw Error(ErrorCode::kConfigError, "--lo/--hi: need lo < hi");
  if (f.steps < 2) throw Error(ErrorCode::kConfigError, "--steps: must be at least 2");
  const fs::path stem = checkpoint_stem(f.checkpoint);
  const Controller ctl = load_controller(stem);
  const fs::path base_path = f.base ? fs::path(*f.base) : stem.parent_path() / "best_cell.json";
  const json base_json = read_json(base_path, ErrorCode::kConfigError);
  if (base_json.is_null()) throw Error(ErrorCode::kConfigError, "--base: " + base_path.string() + " holds no cell");
  const CellGraph base = prune(cell_from_json(base_json));
  const auto dims = parse_dims(f.dims, ctl.latent_dim(), "--dim");
  prepare_out(f.out);
  for (int d : dims) {
    const TraversalReport rep = traverse(ctl, base, d, f.lo, f.hi, f.steps);
    const fs::path file = fs::path(f.out) / ("traversal_" + std::to_string(d) + ".csv");
    write_traversal_csv(rep, file);
    double mean = 0;
    for (int e : rep.edit_distances) mean += e;
    out << "dim " << d << " mean_edit_distance " << std::setprecision(4) << mean / rep.edit_distances.size()
        << " -> " << file.string() << "\n";
  }
  return 0;
}

int cmd_correlate(const AnalysisFlags& f, std::ostream& out) {
  const fs::path stem = checkpoint_stem(f.checkpoint);
  const Controller ctl = load_controller(stem);
  const fs::path rec_path = f.records ? fs::path(*f.records) : stem.parent_path() / "labeled.jsonl";
  const std::vector<EvaluatedRecord> records = read_records(rec_path);
  std::vector<TokenSequence> tokens;
  for (const auto& r : records) tokens.push_back(tokenize(r.cell));
  const MatrixXd z = ctl.encode_means(tokens);
  std::vector<CorrelationInput> inputs;
  for (std::size_t i = 0; i < records.size(); ++i)
    inputs.push_back({z.col(static_cast<Eigen::Index>(i)), records[i].accuracy, records[i].flops});
  const auto dims = parse_dims(f.dims, ctl.latent_dim(), "--dims");
  prepare_out(f.out);
  for (int d : dims) {
    const CorrelationReport rep = correlate(inputs, d);
    const fs::path file = fs::path(f.out) / ("corr_" + std::to_string(d) + ".csv");
    write_correlation_csv(rep, file);
    out << "dim " << d << " tau_acc " << std::setprecision(4) << rep.tau_acc << " tau_flops " << rep.tau_flops
        << " -> " << file.string() << "\n";
  }
  return 0;
}

int exit_code(ErrorCode code) {
  return code == ErrorCode::kConfigError || code == ErrorCode::kMissingCheckpoint ? 2 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Disentangled architecture search"};
  app.name("dnas");
  app.require_subcommand(1);

  SearchFlags search_flags, ablate_flags;
  int seeds = 20;
  CLI::App* search = app.add_subcommand("search", "Run one search and write its artifacts");
  add_search_flags(search, search_flags);
  CLI::App* ablate = app.add_subcommand("ablate", "Dense-sampling x disentangling grid over seeds");
  add_search_flags(ablate, ablate_flags);
  ablate->add_option("--seeds", seeds, "Paired seeds per variant")->capture_default_str();

  AnalysisFlags trav, corr;
  CLI::App* traverse_cmd = app.add_subcommand("traverse", "Decode sweeps of latent coordinates");
  traverse_cmd->add_option("--checkpoint", trav.checkpoint, "Controller stem or search output directory")->required();
  traverse_cmd->add_option("--base", trav.base, "Base cell JSON (default: best_cell.json beside the checkpoint)");
  traverse_cmd->add_option("--dim", trav.dims, "Dimension, comma list or 'all'")->capture_default_str();
  traverse_cmd->add_option("--lo", trav.lo)->capture_default_str();
  traverse_cmd->add_option("--hi", trav.hi)->capture_default_str();
  traverse_cmd->add_option("--steps", trav.steps)->capture_default_str();
  traverse_cmd->add_option("--out", trav.out)->capture_default_str();
  CLI::App* correlate_cmd = app.add_subcommand("correlate", "Rank correlation of latent coordinates with accuracy");
  correlate_cmd->add_option("--checkpoint", corr.checkpoint, "Controller stem or search output directory")->required();
  correlate_cmd->add_option("--records", corr.records, "Labeled JSONL (default: labeled.jsonl beside the checkpoint)");
  correlate_cmd->add_option("--dims", corr.dims, "Dimension, comma list or 'all'")->capture_default_str();
  correlate_cmd->add_option("--out", corr.out)->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (search->parsed()) return cmd_search(search_flags, out);
    if (ablate->parsed()) return cmd_ablate(ablate_flags, seeds, out);
    if (traverse_cmd->parsed()) return cmd_traverse(trav, out);
    if (correlate_cmd->parsed()) return cmd_correlate(corr, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace dnas::cli
