#include "dnas/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dnas/error.hpp"
#include "dnas/rng.hpp"

namespace dnas {

std::vector<Interval> merge_intervals(std::vector<Interval> intervals) {
  std::sort(intervals.begin(), intervals.end(),
            [](const Interval& a, const Interval& b) { return a.lo < b.lo || (a.lo == b.lo && a.hi < b.hi); });
  std::vector<Interval> merged;
  for (const Interval& iv : intervals) {
    if (!merged.empty() && iv.lo <= merged.back().hi)
      merged.back().hi = std::max(merged.back().hi, iv.hi);
    else
      merged.push_back(iv);
  }
  return merged;
}

bool PromisingRegion::contains(int dim, double x) const {
  for (const Interval& iv : dims.at(dim))
    if (x >= iv.lo && x <= iv.hi) return true;
  return false;
}

double PromisingRegion::volume(int dim) const {
  double v = 0.0;
  for (const Interval& iv : dims.at(dim)) v += iv.length();
  return v;
}

PromisingRegion compute_regions(std::span<const RegionInput> records, double sigma, int k) {
  if (!(sigma > 0.0)) throw Error(ErrorCode::kConfigError, "sigma must be positive");
  if (k < 1 || records.size() < static_cast<std::size_t>(k))
    throw Error(ErrorCode::kInsufficientRecords,
                "need at least k=" + std::to_string(k) + " records, got " + std::to_string(records.size()));
  const Eigen::Index dims = records.front().z.size();
  for (const auto& r : records) nn::require_shape(r.z.size() == dims, "compute_regions: latent sizes differ");

  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return records[a].accuracy > records[b].accuracy; });

  PromisingRegion region;
  region.sigma = sigma;
  region.k = k;
  region.dims.resize(static_cast<std::size_t>(dims));
  for (Eigen::Index d = 0; d < dims; ++d) {
    std::vector<Interval> ivs;
    for (int i = 0; i < k; ++i) {
      const double z = records[order[i]].z(d);
      ivs.push_back({z - sigma, z + sigma});
    }
    region.dims[d] = merge_intervals(std::move(ivs));
  }
  return region;
}

std::string_view to_string(Branch b) {
  switch (b) {
    case Branch::kPromising: return "PROMISING";
    case Branch::kFlopsEdge: return "FLOPS_EDGE";
    case Branch::kGlobal: return "GLOBAL";
  }
  return "?";
}

void SamplerPolicy::validate() const {
  const auto fail = [](const std::string& m) { throw Error(ErrorCode::kConfigError, m); };
  if (eps1 < 0.0 || eps2 < 0.0) fail("eps1 and eps2 must be non-negative");
  if (eps1 + eps2 > 1.0 + 1e-12) fail("eps1 + eps2 must not exceed 1");
  if (eps2 > 0.0 && !std::isfinite(flops_limit)) fail("eps2 > 0 needs a finite FLOPS limit");
  if (edge_band < 0.0) fail("edge band must be non-negative");
  if (rejection_cap < 1) fail("rejection cap must be positive");
  if (z_min.size() != z_max.size()) fail("global range bounds differ in size");
  if ((z_max.array() < z_min.array()).any()) fail("global range has z_max < z_min");
}

void set_global_range(SamplerPolicy& policy, const MatrixXd& means, double expand) {
  nn::require_shape(means.cols() > 0, "set_global_range: no latent codes");
  const VectorXd lo = means.rowwise().minCoeff();
  const VectorXd hi = means.rowwise().maxCoeff();
  const VectorXd pad = 0.5 * expand * (hi - lo);
  policy.z_min = lo - pad;
  policy.z_max = hi + pad;
}

namespace {

double sample_union(const std::vector<Interval>& ivs, Rng& rng) {
  double total = 0.0;
  for (const Interval& iv : ivs) total += iv.length();
  double u = uniform01(rng) * total;
  for (const Interval& iv : ivs) {
    if (u < iv.length()) return iv.lo + u;
    u -= iv.length();
  }
  return ivs.back().hi;
}

VectorXd sample_box(const SamplerPolicy& policy, Rng& rng) {
  VectorXd z(policy.z_min.size());
  for (Eigen::Index d = 0; d < z.size(); ++d) z(d) = uniform(rng, policy.z_min(d), policy.z_max(d));
  return z;
}

}  // namespace

LatentDraw sample_latent(const PromisingRegion& region, const SamplerPolicy& policy,
                         const FlopsPredictor& predict_flops, std::uint64_t seed) {
  Rng rng(seed);
  const double u = uniform01(rng);
  const Branch branch = u < policy.eps1                 ? Branch::kPromising
                        : u < policy.eps1 + policy.eps2 ? Branch::kFlopsEdge
                                                        : Branch::kGlobal;
  VectorXd z;
  switch (branch) {
    case Branch::kPromising: {
      z.resize(policy.z_min.size());
      for (Eigen::Index d = 0; d < z.size(); ++d) {
        const bool has = static_cast<std::size_t>(d) < region.dims.size() && !region.dims[d].empty();
        z(d) = has ? sample_union(region.dims[d], rng) : uniform(rng, policy.z_min(d), policy.z_max(d));
      }
      break;
    }
    case Branch::kFlopsEdge: {
      const double f = policy.flops_limit;
      const double floor = f - policy.edge_band * std::abs(f);
      bool have_under = false;
      double best_gap = std::numeric_limits<double>::infinity();
      double lowest = std::numeric_limits<double>::infinity();
      VectorXd best_under, best_any;
      for (int attempt = 0; attempt < policy.rejection_cap; ++attempt) {
        VectorXd cand = sample_box(policy, rng);
        const double pred = predict_flops(cand);
        if (pred <= f && pred >= floor) {
          z = std::move(cand);
          break;
        }
        if (pred <= f && f - pred < best_gap) {
          best_gap = f - pred;
          best_under = cand;
          have_under = true;
        }
        if (pred < lowest) {
          lowest = pred;
          best_any = std::move(cand);
        }
      }
      // Nothing in the band: closest under the limit, else the cheapest draw.
      if (z.size() == 0) z = have_under ? best_under : best_any;
      break;
    }
    case Branch::kGlobal: z = sample_box(policy, rng); break;
  }
  return {LatentCode::point(z), branch};
}

LatentCode latent_gradient_step(const LatentCode& z, const Controller& controller, double eta1,
                                double eta2) {
  if (eta1 < 0.0 || eta2 < 0.0) throw Error(ErrorCode::kConfigError, "step sizes must be non-negative");
  VectorXd next = z.mean;
  if (eta1 != 0.0) next += eta1 * controller.acc_gradient(z.mean);
  if (eta2 != 0.0) next -= eta2 * controller.flops_gradient(z.mean);
  LatentCode out = z;
  out.mean = next;
  out.sample = next;
  return out;
}

ImproveResult improve_architectures(std::span<const LatentCode> starts, const Controller& controller,
                                    double eta1, double eta2, int steps,
                                    const std::unordered_set<std::string>& known, int max_nodes) {
  ImproveResult result;
  if (starts.empty()) return result;
  MatrixXd moved(controller.latent_dim(), static_cast<Eigen::Index>(starts.size()));
  for (std::size_t i = 0; i < starts.size(); ++i) {
    LatentCode z = starts[i];
    for (int s = 0; s < steps; ++s) z = latent_gradient_step(z, controller, eta1, eta2);
    moved.col(static_cast<Eigen::Index>(i)) = z.mean;
  }
  const auto decoded = controller.decode_batch(moved);
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < decoded.size(); ++i) {
    CellGraph cell;
    try {
      cell = detokenize(decoded[i]);
    } catch (const Error&) {
      ++result.unrepairable;
      continue;
    }
    if (cell.num_nodes() > max_nodes) {
      ++result.out_of_space;
      continue;
    }
    std::string key = serialize(cell);
    if (known.count(key) || !seen.insert(std::move(key)).second) {
      ++result.duplicates;
      continue;
    }
    result.cells.push_back(std::move(cell));
    result.latents.push_back(moved.col(static_cast<Eigen::Index>(i)));
  }
  return result;
}

}  // namespace dnas
