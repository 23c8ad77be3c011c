#pragma once

#include <filesystem>

#include "dnas/nn/param_store.hpp"

namespace dnas::nn {

// Two files per checkpoint:
//   <stem>.json  index: {"format": "dnas-tensors", "version": 1,
//                "dtype": "float64", "byte_order": "little", "step": n,
//                "tensors": [{"name", "shape": [rows, cols],
//                             "offset": byte offset, "count": values}]}
//   <stem>.bin   values of every tensor in index order, each tensor
//                row-major, IEEE-754 binary64 little-endian, no padding.
// Only parameter values and the step counter are stored.
void save_checkpoint(const ParamStore<double>& store, const std::filesystem::path& stem);

// Loads into an existing store; names and shapes must match exactly.
void load_checkpoint(ParamStore<double>& store, const std::filesystem::path& stem);

}  // namespace dnas::nn
