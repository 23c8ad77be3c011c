#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace dnas {

enum class OpType : std::uint8_t { kConv1x1, kConv3x3, kMaxPool3x3, kInput, kOutput };

inline constexpr std::array<OpType, 3> kInteriorOps = {
    OpType::kConv1x1, OpType::kConv3x3, OpType::kMaxPool3x3};

std::string_view to_string(OpType op);
OpType op_from_string(std::string_view name);

inline constexpr int kMinNodes = 2;
inline constexpr int kMaxNodes = 7;
inline constexpr int kMaxEdges = 9;

using Adjacency = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic,
                                Eigen::RowMajor, kMaxNodes, kMaxNodes>;

// A cell: DAG over nodes 0..V-1 in topological order, node 0 is INPUT and
// node V-1 is OUTPUT.
struct CellGraph {
  Adjacency adjacency;
  std::vector<OpType> ops;

  CellGraph() = default;
  CellGraph(Adjacency adj, std::vector<OpType> node_ops)
      : adjacency(std::move(adj)), ops(std::move(node_ops)) {}

  int num_nodes() const { return static_cast<int>(ops.size()); }
  int num_edges() const;
  bool edge(int from, int to) const { return adjacency(from, to) != 0; }

  // Chain INPUT -> interior... -> OUTPUT.
  static CellGraph chain(const std::vector<OpType>& interior);

  friend bool operator==(const CellGraph& a, const CellGraph& b);
  friend bool operator<(const CellGraph& a, const CellGraph& b);
};

enum class Verdict { kOk, kNotDag, kTooManyEdges, kDisconnected, kBadTerminals, kBadShape };

std::string_view to_string(Verdict verdict);

Verdict validate(const CellGraph& g);

// Drops every node that is not on some INPUT -> OUTPUT path. Throws
// Error(kDisconnected) when no such path exists.
CellGraph prune(const CellGraph& g);

// Longest INPUT -> OUTPUT path in edges; 0 if there is none.
int longest_path(const CellGraph& g);

// Canonical text key: "<V>|<row-major upper triangle bits>|<op letters>".
std::string serialize(const CellGraph& g);

nlohmann::json to_json(const CellGraph& g);
CellGraph cell_from_json(const nlohmann::json& j);

// ---- tokens ----------------------------------------------------------------

enum Token : int {
  kPad = 0,
  kEdge0 = 1,
  kEdge1 = 2,
  kOpConv1x1 = 3,
  kOpConv3x3 = 4,
  kOpMaxPool3x3 = 5,
};

inline constexpr int kVocabSize = 6;
inline constexpr int kAdjacencySlots = kMaxNodes * (kMaxNodes - 1) / 2;  // 21
inline constexpr int kOpSlots = kMaxNodes - 2;                          // 5
inline constexpr int kSequenceLength = kAdjacencySlots + kOpSlots;     // 26

using TokenSequence = std::array<int, kSequenceLength>;

TokenSequence tokenize(const CellGraph& g);

struct DetokenizeResult {
  CellGraph cell;
  bool repaired = false;  // true when the sequence was outside tokenize's image
};

// Inverse of tokenize. Sequences outside its image are repaired: adjacency
// slots are mapped to the nearest edge token, op slots to the nearest op
// token, edges past the cap are dropped in slot order and the result is
// pruned. Throws Error(kUnrepairable) if no INPUT -> OUTPUT path survives.
DetokenizeResult detokenize_repair(const TokenSequence& tokens);
CellGraph detokenize(const TokenSequence& tokens);

// Number of slots where two sequences differ.
int hamming(const TokenSequence& a, const TokenSequence& b);

// ---- FLOPS -----------------------------------------------------------------

// Synthetic multiply-add model for a stack of identical cells. Per-node cost
// for feature maps of input_resolution^2 x channels:
//   conv1x1: R^2 C^2, conv3x3: 9 R^2 C^2, maxpool3x3: 9 R^2 C.
struct FlopsModel {
  int input_resolution = 32;
  int channels = 128;
  int cells_per_stack = 3;

  double op_cost(OpType op) const;
};

double estimate_flops(const CellGraph& g, const FlopsModel& model);

// ---- sampling --------------------------------------------------------------

// Uniform over valid cells with at most max_nodes nodes: V is drawn in
// proportion to its raw candidate count, then ops and edges uniformly, and
// invalid draws are rejected.
CellGraph random_cell(std::uint64_t seed, int max_nodes = kMaxNodes);

// Every valid cell with at most max_nodes nodes, in serialize() order.
std::vector<CellGraph> enumerate_cells(int max_nodes);

}  // namespace dnas
