#include "dnas/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dnas/error.hpp"

namespace dnas {

TraversalReport traverse(const Controller& controller, const CellGraph& base, int dim, double lo,
                         double hi, int steps) {
  if (dim < 0 || dim >= controller.latent_dim())
    throw Error(ErrorCode::kConfigError, "dimension " + std::to_string(dim) + " out of range");
  if (steps < 2) throw Error(ErrorCode::kConfigError, "steps must be at least 2");
  if (!(lo < hi)) throw Error(ErrorCode::kConfigError, "need lo < hi");

  const TokenSequence tok = tokenize(base);
  const VectorXd mean = controller.encode_means(std::span(&tok, 1)).col(0);

  TraversalReport r;
  r.dim = dim;
  for (int i = 0; i < steps; ++i)
    r.values.push_back(lo + (hi - lo) * i / (steps - 1));
  const double base_value = mean(dim);
  const auto at = std::lower_bound(r.values.begin(), r.values.end(), base_value);
  r.base_index = static_cast<std::size_t>(at - r.values.begin());
  r.values.insert(at, base_value);

  MatrixXd z = mean.replicate(1, static_cast<Eigen::Index>(r.values.size()));
  for (std::size_t i = 0; i < r.values.size(); ++i) z(dim, static_cast<Eigen::Index>(i)) = r.values[i];
  r.tokens = controller.decode_batch(z);
  const TokenSequence& ref = r.tokens[r.base_index];
  for (const auto& t : r.tokens) {
    r.edit_distances.push_back(hamming(t, ref));
    try {
      r.cells.emplace_back(detokenize(t));
    } catch (const Error&) {
      r.cells.emplace_back(std::nullopt);
    }
  }
  return r;
}

double kendall_tau_b(std::span<const double> x, std::span<const double> y) {
  nn::require_shape(x.size() == y.size(), "kendall_tau_b: length mismatch");
  const std::size_t n = x.size();
  double concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0) {
        ++ties_x;
      } else if (dy == 0) {
        ++ties_y;
      } else if ((dx > 0) == (dy > 0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  const double denom = std::sqrt((concordant + discordant + ties_x) * (concordant + discordant + ties_y));
  return denom > 0 ? (concordant - discordant) / denom : 0.0;
}

CorrelationReport correlate(std::span<const CorrelationInput> records, int dim) {
  if (records.size() < 10)
    throw Error(ErrorCode::kInsufficientRecords,
                "correlate needs at least 10 records, got " + std::to_string(records.size()));
  CorrelationReport r;
  r.dim = dim;
  for (const auto& rec : records) {
    if (dim < 0 || dim >= rec.z.size())
      throw Error(ErrorCode::kConfigError, "dimension " + std::to_string(dim) + " out of range");
    r.z.push_back(rec.z(dim));
    r.accuracy.push_back(rec.accuracy);
    r.flops.push_back(rec.flops);
  }
  r.tau_acc = kendall_tau_b(r.z, r.accuracy);
  r.tau_flops = kendall_tau_b(r.z, r.flops);
  return r;
}

void write_traversal_csv(const TraversalReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out.precision(17);
  out << "value,is_base,edit_distance,cell\n";
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    out << r.values[i] << ',' << (i == r.base_index ? 1 : 0) << ',' << r.edit_distances[i] << ','
        << (r.cells[i] ? serialize(*r.cells[i]) : "UNREPAIRABLE") << '\n';
  }
}

void write_correlation_csv(const CorrelationReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out.precision(17);
  out << "# tau_acc=" << r.tau_acc << " tau_flops=" << r.tau_flops << '\n';
  out << "z,accuracy,flops\n";
  for (std::size_t i = 0; i < r.z.size(); ++i) out << r.z[i] << ',' << r.accuracy[i] << ',' << r.flops[i] << '\n';
}

}  // namespace dnas
