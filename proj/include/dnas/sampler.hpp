#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "dnas/controller.hpp"

namespace dnas {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double length() const { return hi - lo; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

// Sorts and merges overlapping or touching intervals.
std::vector<Interval> merge_intervals(std::vector<Interval> intervals);

// Per latent dimension, the union of [z_i - sigma, z_i + sigma] over the
// top-k records by accuracy.
struct PromisingRegion {
  std::vector<std::vector<Interval>> dims;
  double sigma = 0.0;
  int k = 0;

  bool contains(int dim, double x) const;
  double volume(int dim) const;  // total length of the union
};

struct RegionInput {
  VectorXd z;
  double accuracy = 0.0;
};

// One accuracy ranking (ties by input order) shared by every dimension.
PromisingRegion compute_regions(std::span<const RegionInput> records, double sigma, int k);

enum class Branch { kPromising, kFlopsEdge, kGlobal };

std::string_view to_string(Branch b);

struct SamplerPolicy {
  double eps1 = 0.05;  // promising region
  double eps2 = 0.0;   // FLOPS edge
  double flops_limit = std::numeric_limits<double>::infinity();
  double edge_band = 0.1;  // FLOPS edge is [F - edge_band * F, F]
  int rejection_cap = 200;
  VectorXd z_min, z_max;   // global sampling box

  double eps3() const { return 1.0 - eps1 - eps2; }
  void validate() const;  // throws Error(kConfigError)
};

// Per-dimension min/max of the columns of means, widened by expand * width
// in total (half on each side).
void set_global_range(SamplerPolicy& policy, const MatrixXd& means, double expand = 0.2);

// Raw (de-normalized) FLOPS prediction for a latent point.
using FlopsPredictor = std::function<double(const VectorXd&)>;

struct LatentDraw {
  LatentCode code;
  Branch branch = Branch::kGlobal;
};

LatentDraw sample_latent(const PromisingRegion& region, const SamplerPolicy& policy,
                         const FlopsPredictor& predict_flops, std::uint64_t seed);

// z' = z + eta1 * d f_acc/dz - eta2 * d f_flops/dz, evaluated at z.mean.
LatentCode latent_gradient_step(const LatentCode& z, const Controller& controller, double eta1,
                                double eta2);

struct ImproveResult {
  std::vector<CellGraph> cells;       // novel, valid, in input order
  std::vector<VectorXd> latents;      // the final z' of each returned cell
  std::size_t unrepairable = 0;
  std::size_t duplicates = 0;         // already known or repeated
  std::size_t out_of_space = 0;       // more than max_nodes nodes
};

// latent_gradient_step `steps` times from each start, then greedy decode and repair.
// Cells whose serialize() key is in `known`, or with more than max_nodes
// nodes, are dropped.
ImproveResult improve_architectures(std::span<const LatentCode> starts, const Controller& controller,
                                    double eta1, double eta2, int steps,
                                    const std::unordered_set<std::string>& known,
                                    int max_nodes = kMaxNodes);

}  // namespace dnas
