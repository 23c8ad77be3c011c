#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "dnas/controller.hpp"

namespace dnas {

// Cells decoded while sweeping one latent coordinate of a base cell's
// posterior mean. The base value is inserted into the grid.
struct TraversalReport {
  int dim = 0;
  std::size_t base_index = 0;                // entry holding the base value
  std::vector<double> values;                // ascending
  std::vector<TokenSequence> tokens;         // raw decoder output
  std::vector<std::optional<CellGraph>> cells;  // nullopt when unrepairable
  std::vector<int> edit_distances;           // token edits vs the base entry
};

TraversalReport traverse(const Controller& controller, const CellGraph& base, int dim, double lo,
                         double hi, int steps);

struct CorrelationInput {
  VectorXd z;
  double accuracy = 0.0;
  double flops = 0.0;
};

struct CorrelationReport {
  int dim = 0;
  std::vector<double> z;
  std::vector<double> accuracy;
  std::vector<double> flops;
  double tau_acc = 0.0;    // Kendall tau-b of z against accuracy
  double tau_flops = 0.0;  // and against FLOPS
};

// Throws Error(kInsufficientRecords) below 10 records.
CorrelationReport correlate(std::span<const CorrelationInput> records, int dim);

// Tau-b; 0 when either side has no variation.
double kendall_tau_b(std::span<const double> x, std::span<const double> y);

void write_traversal_csv(const TraversalReport& r, const std::filesystem::path& path);
void write_correlation_csv(const CorrelationReport& r, const std::filesystem::path& path);

}  // namespace dnas
