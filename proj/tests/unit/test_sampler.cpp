#include <doctest.h>

#include <algorithm>
#include <array>

#include "dnas/error.hpp"
#include "dnas/sampler.hpp"
#include "helpers.hpp"

using namespace dnas;

namespace {

std::vector<RegionInput> one_dim(std::initializer_list<double> zs) {
  std::vector<RegionInput> r;
  double acc = 1.0;
  for (double z : zs) {
    r.push_back({VectorXd::Constant(1, z), acc});
    acc -= 0.01;
  }
  return r;
}

// Repeatedly fuse any two overlapping intervals until none remain.
std::vector<Interval> pairwise_union(std::vector<Interval> ivs) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < ivs.size() && !changed; ++i)
      for (std::size_t j = i + 1; j < ivs.size() && !changed; ++j)
        if (ivs[i].lo <= ivs[j].hi && ivs[j].lo <= ivs[i].hi) {
          ivs[i] = {std::min(ivs[i].lo, ivs[j].lo), std::max(ivs[i].hi, ivs[j].hi)};
          ivs.erase(ivs.begin() + static_cast<std::ptrdiff_t>(j));
          changed = true;
        }
  }
  std::sort(ivs.begin(), ivs.end(), [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
  return ivs;
}

SamplerPolicy unit_box(int dims) {
  SamplerPolicy p;
  p.z_min = VectorXd::Constant(dims, -1.0);
  p.z_max = VectorXd::Constant(dims, 1.0);
  return p;
}

}  // namespace

TEST_CASE("promising region worked example") {
  const auto r = compute_regions(one_dim({-0.28, -0.16, -0.19}), 0.05, 3);
  REQUIRE(r.dims.size() == 1);
  REQUIRE(r.dims[0].size() == 1);
  CHECK(r.dims[0][0].lo == -0.33);
  CHECK(r.dims[0][0].hi == -0.11);

  const auto single = compute_regions(one_dim({0.0}), 0.05, 1);
  CHECK(single.dims[0] == std::vector<Interval>{{-0.05, 0.05}});

  CHECK_THROWS_AS(compute_regions(one_dim({0.1, 0.2}), 0.05, 3), Error);
  CHECK_THROWS_AS(compute_regions(one_dim({0.1}), 0.0, 1), Error);
}

TEST_CASE("region uses the accuracy ranking shared by every dimension") {
  std::vector<RegionInput> rs;
  rs.push_back({(VectorXd(2) << 0.5, -0.5).finished(), 0.2});
  rs.push_back({(VectorXd(2) << 0.0, 0.0).finished(), 0.9});
  rs.push_back({(VectorXd(2) << -0.5, 0.5).finished(), 0.1});
  const auto r = compute_regions(rs, 0.1, 2);
  CHECK(r.contains(0, 0.5));
  CHECK(r.contains(1, -0.5));
  CHECK_FALSE(r.contains(0, -0.5));
  CHECK(r.volume(0) == doctest::Approx(0.4));
}

TEST_CASE("region union against pairwise merge on random records") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(s);
    std::vector<RegionInput> rs;
    for (int i = 0; i < 100; ++i) {
      VectorXd z(4);
      for (int d = 0; d < 4; ++d) z(d) = uniform(rng, -1, 1);
      rs.push_back({z, uniform01(rng)});
    }
    const int k = 1 + static_cast<int>(uniform_index(rng, 30));
    const double sigma = uniform(rng, 0.01, 0.2);
    const auto region = compute_regions(rs, sigma, k);

    // Filter-then-sort top-k by accuracy.
    std::vector<RegionInput> sorted = rs;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const RegionInput& a, const RegionInput& b) { return a.accuracy > b.accuracy; });
    for (int d = 0; d < 4; ++d) {
      std::vector<Interval> ivs;
      for (int i = 0; i < k; ++i) ivs.push_back({sorted[i].z(d) - sigma, sorted[i].z(d) + sigma});
      const auto expect = pairwise_union(ivs);
      CHECK(region.dims[d] == expect);
      for (const auto& iv : region.dims[d]) CHECK(iv.length() >= 2 * sigma - 1e-12);
      for (std::size_t i = 1; i < region.dims[d].size(); ++i) CHECK(region.dims[d][i].lo > region.dims[d][i - 1].hi);
      for (int i = 0; i < k; ++i) CHECK(region.contains(d, sorted[i].z(d)));
      // Every point of the union is within sigma of a top-k value.
      for (int probe = 0; probe < 50; ++probe) {
        const double x = uniform(rng, -1.3, 1.3);
        bool near = false;
        for (int i = 0; i < k; ++i) near = near || std::abs(x - sorted[i].z(d)) <= sigma;
        CHECK(region.contains(d, x) == near);
      }
    }
  }
}

TEST_CASE("merge_intervals") {
  CHECK(merge_intervals({}).empty());
  const std::vector<Interval> in{{0.5, 0.7}, {0.0, 0.2}, {0.2, 0.3}, {0.6, 0.9}};
  const std::vector<Interval> expect{{0.0, 0.3}, {0.5, 0.9}};
  CHECK(merge_intervals(in) == expect);
}

TEST_CASE("mixture law") {
  const auto region = compute_regions(one_dim({0.0, 0.1, 0.2}), 0.05, 3);
  SamplerPolicy p = unit_box(1);
  p.eps1 = 0.05;
  p.eps2 = 0.0;
  const FlopsPredictor flat = [](const VectorXd&) { return 0.0; };
  std::array<int, 3> counts{};
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<int>(sample_latent(region, p, flat, derive_seed(1, "mix", i)).branch)];
  CHECK(std::abs(counts[0] / double(n) - 0.05) < 0.01);
  CHECK(counts[1] == 0);
  CHECK(std::abs(counts[2] / double(n) - 0.95) < 0.01);

  // Three-way split with a finite limit.
  p.eps1 = p.eps2 = 1.0 / 3.0;
  p.flops_limit = 10.0;
  counts = {};
  for (int i = 0; i < 30000; ++i)
    ++counts[static_cast<int>(sample_latent(region, p, flat, derive_seed(2, "mix", i)).branch)];
  for (int c : counts) CHECK(std::abs(c / 30000.0 - 1.0 / 3.0) < 0.015);
}

TEST_CASE("branch geometry") {
  const auto region = compute_regions(one_dim({0.0, 0.3, 0.31}), 0.05, 3);
  SamplerPolicy p = unit_box(1);
  p.eps1 = 1.0;
  const FlopsPredictor flat = [](const VectorXd&) { return 0.0; };
  for (int i = 0; i < 2000; ++i) {
    const auto d = sample_latent(region, p, flat, derive_seed(3, "in", i));
    CHECK(d.branch == Branch::kPromising);
    CHECK(region.contains(0, d.code.sample(0)));
    CHECK(d.code.mean == d.code.sample);
  }
  p.eps1 = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const double z = sample_latent(region, p, flat, derive_seed(4, "box", i)).code.sample(0);
    CHECK(z >= -1.0);
    CHECK(z <= 1.0);
  }
  const auto a = sample_latent(region, p, flat, 99), b = sample_latent(region, p, flat, 99);
  CHECK(a.code.sample == b.code.sample);
}

TEST_CASE("FLOPS edge with a linear predictor") {
  const auto region = compute_regions(one_dim({0.0}), 0.05, 1);
  SamplerPolicy p = unit_box(1);
  p.eps1 = 0.0;
  p.eps2 = 1.0;
  p.flops_limit = 50.0;
  p.edge_band = 0.1;
  const FlopsPredictor lin = [](const VectorXd& z) { return 50.0 + 50.0 * z(0); };  // 0 .. 100
  for (int i = 0; i < 2000; ++i) {
    const auto d = sample_latent(region, p, lin, derive_seed(5, "edge", i));
    CHECK(d.branch == Branch::kFlopsEdge);
    const double f = lin(d.code.sample);
    CHECK(f <= 50.0);
    CHECK(f >= 45.0);
  }
  // Unreachable band: the cheapest draw is kept.
  const FlopsPredictor high = [](const VectorXd& z) { return 1000.0 + z(0); };
  const auto d = sample_latent(region, p, high, 7);
  CHECK(high(d.code.sample) < 1000.0);
}

TEST_CASE("FLOPS edge with a trained predictor") {
  const auto& t = testutil::trained_fixture();
  std::vector<TokenSequence> toks;
  std::vector<double> flops;
  std::vector<RegionInput> rs;
  for (const auto& e : t.data) {
    toks.push_back(e.tokens);
    flops.push_back(e.flops);
  }
  const MatrixXd means = t.controller.encode_means(toks);
  for (std::size_t i = 0; i < t.data.size(); ++i) rs.push_back({means.col(Eigen::Index(i)), t.data[i].accuracy});
  std::sort(flops.begin(), flops.end());
  SamplerPolicy p;
  set_global_range(p, means);
  p.eps1 = p.eps2 = 1.0 / 3.0;
  p.flops_limit = flops[flops.size() * 6 / 10];
  const auto region = compute_regions(rs, 0.05, 3);
  const FlopsPredictor pred = [&](const VectorXd& z) { return t.controller.predict_flops_raw(LatentCode::point(z)); };
  int edge = 0, under = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto d = sample_latent(region, p, pred, derive_seed(6, "edge", i));
    if (d.branch != Branch::kFlopsEdge) continue;
    ++edge;
    under += pred(d.code.sample) <= p.flops_limit;
  }
  REQUIRE(edge > 3000);
  CHECK(under >= 0.99 * edge);
}

TEST_CASE("policy validation and global range") {
  SamplerPolicy p = unit_box(2);
  p.eps1 = 0.9;
  p.eps2 = 0.2;
  p.flops_limit = 1.0;
  CHECK_THROWS_AS(p.validate(), Error);
  p.eps2 = 0.1;
  CHECK_NOTHROW(p.validate());
  CHECK(p.eps3() == doctest::Approx(0.0));
  p.eps1 = -0.1;
  CHECK_THROWS_AS(p.validate(), Error);
  p = unit_box(2);
  p.eps2 = 0.5;
  CHECK_THROWS_AS(p.validate(), Error);  // infinite limit

  MatrixXd means(2, 3);
  means << 0, 1, 2, -1, -1, 3;
  set_global_range(p, means, 0.2);
  CHECK(p.z_min(0) == doctest::Approx(-0.2));
  CHECK(p.z_max(0) == doctest::Approx(2.2));
  CHECK(p.z_min(1) == doctest::Approx(-1.4));
  CHECK(p.z_max(1) == doctest::Approx(3.4));
}

TEST_CASE("latent gradient step") {
  const Controller ctl(ControllerConfig{}, 12);
  const LatentCode z = ctl.encode(tokenize(random_cell(5)), 1);
  const LatentCode same = latent_gradient_step(z, ctl, 0.0, 0.0);
  CHECK(same.mean == z.mean);
  CHECK_THROWS_AS(latent_gradient_step(z, ctl, -1.0, 0.0), Error);

  // Both head gradients against central differences.
  const VectorXd ga = ctl.acc_gradient(z.mean), gf = ctl.flops_gradient(z.mean);
  for (Eigen::Index d = 0; d < z.mean.size(); ++d) {
    VectorXd up = z.mean, dn = z.mean;
    up(d) += 1e-6;
    dn(d) -= 1e-6;
    const double na = (ctl.predict_acc(LatentCode::point(up)) - ctl.predict_acc(LatentCode::point(dn))) / 2e-6;
    const double nf = (ctl.predict_flops(LatentCode::point(up)) - ctl.predict_flops(LatentCode::point(dn))) / 2e-6;
    CHECK(std::abs(ga(d) - na) <= 1e-3 * std::max({std::abs(ga(d)), std::abs(na), 1e-6}));
    CHECK(std::abs(gf(d) - nf) <= 1e-3 * std::max({std::abs(gf(d)), std::abs(nf), 1e-6}));
  }

  const LatentCode moved = latent_gradient_step(z, ctl, 0.5, 0.25);
  CHECK((moved.mean - (z.mean + 0.5 * ga - 0.25 * gf)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(moved.sample == moved.mean);
}

TEST_CASE("first-order ascent under a trained predictor") {
  const auto& t = testutil::trained_fixture();
  int up = 0;
  for (int i = 0; i < 1000; ++i) {
    Rng rng(derive_seed(8, "z", i));
    VectorXd z(t.controller.latent_dim());
    for (Eigen::Index d = 0; d < z.size(); ++d) z(d) = uniform(rng, -1, 1);
    const LatentCode c = LatentCode::point(z);
    up += t.controller.predict_acc(latent_gradient_step(c, t.controller, 1e-3, 0.0)) >= t.controller.predict_acc(c);
  }
  CHECK(up >= 950);
}

TEST_CASE("improve_architectures") {
  const auto& t = testutil::trained_fixture();
  std::vector<LatentCode> starts;
  for (int i = 0; i < 10; ++i) {
    starts.push_back(LatentCode::point(t.controller.encode(t.data[i].tokens, 0).mean));
  }
  // No movement: reconstructions of the inputs.
  const auto still = improve_architectures(starts, t.controller, 1.0, 0.0, 0, {}, 7);
  MatrixXd means(t.controller.latent_dim(), 10);
  for (int i = 0; i < 10; ++i) means.col(i) = starts[i].mean;
  const auto recon = t.controller.decode_batch(means);
  std::size_t next = 0;
  for (int i = 0; i < 10; ++i) {
    try {
      const CellGraph c = detokenize(recon[i]);
      if (std::find(still.cells.begin(), still.cells.begin() + next, c) != still.cells.begin() + next) continue;
      REQUIRE(next < still.cells.size());
      CHECK(still.cells[next++] == c);
    } catch (const Error&) {
    }
  }
  CHECK(next == still.cells.size());

  // Known cells are dropped; everything returned is valid and novel.
  std::unordered_set<std::string> known;
  for (const auto& e : t.data) known.insert(serialize(detokenize(e.tokens)));
  int with_novel = 0;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<LatentCode> group;
    for (int i = 0; i < 10; ++i) group.push_back(LatentCode::point(t.controller.encode(t.data[10 * rep + i].tokens, 0).mean));
    const auto r = improve_architectures(group, t.controller, 30.0, 0.0, 1, known, 5);
    for (const auto& c : r.cells) {
      CHECK(validate(c) == Verdict::kOk);
      CHECK(known.count(serialize(c)) == 0);
      CHECK(c.num_nodes() <= 5);
    }
    CHECK(r.cells.size() == r.latents.size());
    CHECK(r.cells.size() + r.unrepairable + r.duplicates + r.out_of_space == 10);
    with_novel += !r.cells.empty();
  }
  MESSAGE("runs with a novel cell: " << with_novel << " of 20");
  CHECK(with_novel >= 18);
}
