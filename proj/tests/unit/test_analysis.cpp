#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "dnas/analysis.hpp"
#include "dnas/error.hpp"
#include "dnas/searchloop.hpp"
#include "helpers.hpp"

using namespace dnas;

TEST_CASE("kendall tau-b") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  CHECK(kendall_tau_b(x, x) == 1.0);
  const std::vector<double> rev{5, 4, 3, 2, 1};
  CHECK(kendall_tau_b(x, rev) == -1.0);
  const std::vector<double> flat(5, 0.93);
  CHECK(kendall_tau_b(x, flat) == 0.0);

  // Reference values from an independent tau-b implementation.
  const std::vector<double> y{3, 4, 1, 2, 5};
  CHECK(kendall_tau_b(x, y) == doctest::Approx(0.2).epsilon(1e-12));
  const std::vector<double> a{1, 2, 2, 3, 4, 5}, b{2, 1, 3, 3, 5, 4};
  CHECK(kendall_tau_b(a, b) == doctest::Approx(0.6428571428571429).epsilon(1e-12));

  const std::vector<double> shorter{1, 2};
  CHECK_THROWS_AS(kendall_tau_b(x, shorter), Error);
}

TEST_CASE("correlate") {
  std::vector<CorrelationInput> rs;
  for (int i = 0; i < 30; ++i) {
    VectorXd z(3);
    z << i, -i, (i * 7) % 5;
    rs.push_back({z, 0.9 + 0.001 * i, 1000.0 - i});
  }
  const auto r0 = correlate(rs, 0);
  CHECK(r0.tau_acc == doctest::Approx(1.0));
  CHECK(r0.tau_flops == doctest::Approx(-1.0));
  CHECK(r0.z.size() == 30);
  CHECK(correlate(rs, 1).tau_acc == doctest::Approx(-1.0));

  // Permutation invariance.
  auto shuffled = rs;
  std::reverse(shuffled.begin(), shuffled.end());
  std::rotate(shuffled.begin(), shuffled.begin() + 7, shuffled.end());
  CHECK(correlate(shuffled, 2).tau_acc == doctest::Approx(correlate(rs, 2).tau_acc).epsilon(1e-14));

  for (auto& r : rs) r.accuracy = 0.5;
  CHECK(correlate(rs, 0).tau_acc == 0.0);

  rs.resize(9);
  try {
    correlate(rs, 0);
    FAIL("expected INSUFFICIENT_RECORDS");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInsufficientRecords);
  }
}

TEST_CASE("traverse contract") {
  const auto& t = testutil::trained_fixture();
  const CellGraph base = detokenize(t.data[0].tokens);
  const auto r = traverse(t.controller, base, 24, -0.4, 0.4, 9);
  CHECK(r.dim == 24);
  REQUIRE(r.values.size() == 10);
  CHECK(r.tokens.size() == 10);
  CHECK(r.cells.size() == 10);
  CHECK(r.edit_distances.size() == 10);
  CHECK(std::is_sorted(r.values.begin(), r.values.end()));
  CHECK(r.values.front() == -0.4);
  CHECK(r.values.back() == 0.4);
  CHECK(r.edit_distances[r.base_index] == 0);
  const VectorXd mean = t.controller.encode(t.data[0].tokens, 0).mean;
  CHECK(r.values[r.base_index] == mean(24));
  CHECK(r.tokens[r.base_index] == t.controller.decode(LatentCode::point(mean)));

  // Only the chosen coordinate moves.
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    VectorXd z = mean;
    z(24) = r.values[i];
    CHECK(r.tokens[i] == t.controller.decode(LatentCode::point(z)));
  }

  CHECK_THROWS_AS(traverse(t.controller, base, 26, -0.4, 0.4, 9), Error);
  CHECK_THROWS_AS(traverse(t.controller, base, 0, -0.4, 0.4, 1), Error);
  CHECK_THROWS_AS(traverse(t.controller, base, 0, 0.4, -0.4, 9), Error);

  const auto dir = testutil::scratch_dir("traverse");
  write_traversal_csv(r, dir / "t.csv");
  const std::string csv = testutil::read_file(dir / "t.csv");
  CHECK(csv.rfind("value,is_base,edit_distance,cell\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);
}

TEST_CASE("traversals on a trained controller are localized") {
  const auto& t = testutil::trained_fixture();
  double total = 0;
  int n = 0;
  for (int i = 0; i < 20; ++i) {
    const auto r = traverse(t.controller, detokenize(t.data[i].tokens), i % t.controller.latent_dim(), -0.4, 0.4, 9);
    for (int d : r.edit_distances) {
      total += d;
      ++n;
    }
  }
  const double mean_edits = total / n;
  MESSAGE("mean token edits per traversal point " << mean_edits);
  CHECK(mean_edits < 0.25 * kSequenceLength);
}

TEST_CASE("some latent coordinate tracks accuracy in every search run") {
  SyntheticBench bench;
  bench.seed = 7;
  int runs_with_signal = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SearchConfig cfg = desk_search_config();
    cfg.max_nodes = 5;
    cfg.seed = seed;
    SyntheticOracle oracle(bench, FlopsModel{});
    const SearchState s = run_search(cfg, oracle);
    std::vector<TokenSequence> tokens;
    for (const auto& r : s.labeled) tokens.push_back(tokenize(r.cell));
    const MatrixXd z = s.controller->encode_means(tokens);
    std::vector<CorrelationInput> rs;
    for (std::size_t i = 0; i < s.labeled.size(); ++i)
      rs.push_back({z.col(static_cast<Eigen::Index>(i)), s.labeled[i].accuracy, s.labeled[i].flops});
    double best = 0;
    for (int d = 0; d < s.controller->latent_dim(); ++d) best = std::max(best, std::abs(correlate(rs, d).tau_acc));
    runs_with_signal += best > 0.3;
  }
  MESSAGE("runs with a coordinate above |tau| 0.3: " << runs_with_signal << " of 20");
  CHECK(runs_with_signal == 20);
}
