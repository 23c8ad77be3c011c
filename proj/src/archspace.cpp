#include "dnas/archspace.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

#include "dnas/error.hpp"
#include "dnas/rng.hpp"

namespace dnas {

std::string_view to_string(OpType op) {
  switch (op) {
    case OpType::kConv1x1: return "conv1x1";
    case OpType::kConv3x3: return "conv3x3";
    case OpType::kMaxPool3x3: return "maxpool3x3";
    case OpType::kInput: return "input";
    case OpType::kOutput: return "output";
  }
  return "?";
}

OpType op_from_string(std::string_view name) {
  // NASBench-101 spells convolutions with a "-bn-relu" suffix.
  if (name == "conv1x1" || name == "conv1x1-bn-relu") return OpType::kConv1x1;
  if (name == "conv3x3" || name == "conv3x3-bn-relu") return OpType::kConv3x3;
  if (name == "maxpool3x3") return OpType::kMaxPool3x3;
  if (name == "input") return OpType::kInput;
  if (name == "output") return OpType::kOutput;
  throw Error(ErrorCode::kInvalidCell, "unknown op '" + std::string(name) + "'");
}

std::string_view to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::kOk: return "OK";
    case Verdict::kNotDag: return "NOT_DAG";
    case Verdict::kTooManyEdges: return "TOO_MANY_EDGES";
    case Verdict::kDisconnected: return "DISCONNECTED";
    case Verdict::kBadTerminals: return "BAD_TERMINALS";
    case Verdict::kBadShape: return "BAD_SHAPE";
  }
  return "?";
}

int CellGraph::num_edges() const {
  int n = 0;
  for (int i = 0; i < adjacency.rows(); ++i)
    for (int j = 0; j < adjacency.cols(); ++j) n += adjacency(i, j) != 0;
  return n;
}

CellGraph CellGraph::chain(const std::vector<OpType>& interior) {
  const int v = static_cast<int>(interior.size()) + 2;
  Adjacency adj = Adjacency::Zero(v, v);
  for (int i = 0; i + 1 < v; ++i) adj(i, i + 1) = 1;
  std::vector<OpType> ops;
  ops.reserve(v);
  ops.push_back(OpType::kInput);
  ops.insert(ops.end(), interior.begin(), interior.end());
  ops.push_back(OpType::kOutput);
  return {std::move(adj), std::move(ops)};
}

bool operator==(const CellGraph& a, const CellGraph& b) {
  if (a.ops != b.ops) return false;
  if (a.adjacency.rows() != b.adjacency.rows() || a.adjacency.cols() != b.adjacency.cols())
    return false;
  for (int i = 0; i < a.adjacency.rows(); ++i)
    for (int j = 0; j < a.adjacency.cols(); ++j)
      if ((a.adjacency(i, j) != 0) != (b.adjacency(i, j) != 0)) return false;
  return true;
}

bool operator<(const CellGraph& a, const CellGraph& b) { return serialize(a) < serialize(b); }

namespace {

bool shape_ok(const CellGraph& g) {
  const int v = g.num_nodes();
  return v >= kMinNodes && v <= kMaxNodes && g.adjacency.rows() == v && g.adjacency.cols() == v;
}

// on_path[i]: node i is reachable from node 0 and reaches node V-1. Assumes
// a topologically ordered DAG (only i < j entries are followed).
std::vector<bool> nodes_on_path(const CellGraph& g) {
  const int v = g.num_nodes();
  std::vector<bool> from_input(v, false), to_output(v, false);
  from_input[0] = true;
  for (int j = 1; j < v; ++j)
    for (int i = 0; i < j; ++i)
      if (from_input[i] && g.edge(i, j)) {
        from_input[j] = true;
        break;
      }
  to_output[v - 1] = true;
  for (int i = v - 2; i >= 0; --i)
    for (int j = i + 1; j < v; ++j)
      if (to_output[j] && g.edge(i, j)) {
        to_output[i] = true;
        break;
      }
  std::vector<bool> on(v);
  for (int i = 0; i < v; ++i) on[i] = from_input[i] && to_output[i];
  return on;
}

char op_letter(OpType op) {
  switch (op) {
    case OpType::kConv1x1: return '1';
    case OpType::kConv3x3: return '3';
    case OpType::kMaxPool3x3: return 'm';
    case OpType::kInput: return 'i';
    case OpType::kOutput: return 'o';
  }
  return '?';
}

int op_token(OpType op) {
  switch (op) {
    case OpType::kConv1x1: return kOpConv1x1;
    case OpType::kConv3x3: return kOpConv3x3;
    case OpType::kMaxPool3x3: return kOpMaxPool3x3;
    default: break;
  }
  throw std::logic_error("terminal op has no token");
}

// Nearest legal token by id distance; ties go to the lower id.
int nearest_of(int token, std::initializer_list<int> legal) {
  int best = *legal.begin();
  for (int t : legal)
    if (std::abs(t - token) < std::abs(best - token)) best = t;
  return best;
}

OpType token_op(int token) {
  switch (nearest_of(token, {kOpConv1x1, kOpConv3x3, kOpMaxPool3x3})) {
    case kOpConv1x1: return OpType::kConv1x1;
    case kOpConv3x3: return OpType::kConv3x3;
    default: return OpType::kMaxPool3x3;
  }
}

int triangle(int v) { return v * (v - 1) / 2; }

}  // namespace

Verdict validate(const CellGraph& g) {
  if (!shape_ok(g)) return Verdict::kBadShape;
  const int v = g.num_nodes();
  if (g.ops.front() != OpType::kInput || g.ops.back() != OpType::kOutput)
    return Verdict::kBadTerminals;
  for (int i = 1; i + 1 < v; ++i)
    if (g.ops[i] == OpType::kInput || g.ops[i] == OpType::kOutput) return Verdict::kBadTerminals;
  for (int i = 0; i < v; ++i)
    for (int j = 0; j <= i; ++j)
      if (g.adjacency(i, j) != 0) return Verdict::kNotDag;
  if (g.num_edges() > kMaxEdges) return Verdict::kTooManyEdges;
  const auto on = nodes_on_path(g);
  if (!std::all_of(on.begin(), on.end(), [](bool b) { return b; })) return Verdict::kDisconnected;
  return Verdict::kOk;
}

CellGraph prune(const CellGraph& g) {
  if (!shape_ok(g) || g.ops.front() != OpType::kInput || g.ops.back() != OpType::kOutput)
    throw Error(ErrorCode::kInvalidCell, "prune needs a cell with INPUT/OUTPUT terminals");
  const auto on = nodes_on_path(g);
  if (!on.front()) throw Error(ErrorCode::kDisconnected, "no INPUT -> OUTPUT path");
  std::vector<int> keep;
  for (int i = 0; i < g.num_nodes(); ++i)
    if (on[i]) keep.push_back(i);
  const int v = static_cast<int>(keep.size());
  Adjacency adj = Adjacency::Zero(v, v);
  std::vector<OpType> ops(v);
  for (int a = 0; a < v; ++a) {
    ops[a] = g.ops[keep[a]];
    for (int b = a + 1; b < v; ++b) adj(a, b) = g.edge(keep[a], keep[b]) ? 1 : 0;
  }
  return {std::move(adj), std::move(ops)};
}

int longest_path(const CellGraph& g) {
  const int v = g.num_nodes();
  std::vector<int> depth(v, -1);
  depth[0] = 0;
  for (int j = 1; j < v; ++j)
    for (int i = 0; i < j; ++i)
      if (depth[i] >= 0 && g.edge(i, j)) depth[j] = std::max(depth[j], depth[i] + 1);
  return std::max(depth[v - 1], 0);
}

std::string serialize(const CellGraph& g) {
  const int v = g.num_nodes();
  std::string key = std::to_string(v) + "|";
  for (int i = 0; i < v; ++i)
    for (int j = i + 1; j < v; ++j) key += g.edge(i, j) ? '1' : '0';
  key += '|';
  for (int i = 1; i + 1 < v; ++i) key += op_letter(g.ops[i]);
  return key;
}

nlohmann::json to_json(const CellGraph& g) {
  const int v = g.num_nodes();
  nlohmann::json adj = nlohmann::json::array();
  for (int i = 0; i < v; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < v; ++j) row.push_back(g.edge(i, j) ? 1 : 0);
    adj.push_back(std::move(row));
  }
  nlohmann::json ops = nlohmann::json::array();
  for (OpType op : g.ops) ops.push_back(std::string(to_string(op)));
  return {{"v", v}, {"adj", std::move(adj)}, {"ops", std::move(ops)}};
}

CellGraph cell_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("adj") || !j.contains("ops"))
    throw Error(ErrorCode::kInvalidCell, "cell JSON needs 'adj' and 'ops'");
  const auto& adj = j.at("adj");
  const auto& ops = j.at("ops");
  if (!adj.is_array() || !ops.is_array())
    throw Error(ErrorCode::kInvalidCell, "'adj' and 'ops' must be arrays");
  const int v = static_cast<int>(ops.size());
  if (j.contains("v") && j.at("v").get<int>() != v)
    throw Error(ErrorCode::kInvalidCell, "'v' disagrees with the op list");
  if (v < kMinNodes || v > kMaxNodes || static_cast<int>(adj.size()) != v)
    throw Error(ErrorCode::kInvalidCell, "adjacency must be V x V with 2 <= V <= 7");
  CellGraph g;
  g.adjacency = Adjacency::Zero(v, v);
  for (int r = 0; r < v; ++r) {
    if (!adj[r].is_array() || static_cast<int>(adj[r].size()) != v)
      throw Error(ErrorCode::kInvalidCell, "adjacency row " + std::to_string(r) + " has wrong length");
    for (int c = 0; c < v; ++c) g.adjacency(r, c) = adj[r][c].get<int>() != 0 ? 1 : 0;
  }
  for (const auto& op : ops) g.ops.push_back(op_from_string(op.get<std::string>()));
  return g;
}

TokenSequence tokenize(const CellGraph& g) {
  const CellGraph p = prune(g);
  if (const Verdict verdict = validate(p); verdict != Verdict::kOk)
    throw Error(ErrorCode::kInvalidCell, "cannot tokenize: " + std::string(to_string(verdict)));
  TokenSequence t;
  t.fill(kPad);
  const int v = p.num_nodes();
  int slot = 0;
  for (int i = 0; i < v; ++i)
    for (int j = i + 1; j < v; ++j) t[slot++] = p.edge(i, j) ? kEdge1 : kEdge0;
  for (int i = 1; i + 1 < v; ++i) t[kAdjacencySlots + i - 1] = op_token(p.ops[i]);
  return t;
}

DetokenizeResult detokenize_repair(const TokenSequence& tokens) {
  for (int tok : tokens)
    if (tok < 0 || tok >= kVocabSize)
      throw Error(ErrorCode::kShapeMismatch, "token id " + std::to_string(tok) + " outside vocabulary");

  // V is the smallest node count whose triangle covers the last used slot.
  int used = 0;
  for (int s = 0; s < kAdjacencySlots; ++s)
    if (tokens[s] != kPad) used = s + 1;
  if (used == 0) throw Error(ErrorCode::kUnrepairable, "no adjacency slots set");
  int v = kMinNodes;
  while (triangle(v) < used) ++v;

  bool repaired = used != triangle(v);
  Adjacency adj = Adjacency::Zero(v, v);
  int slot = 0, edges = 0;
  for (int i = 0; i < v; ++i)
    for (int j = i + 1; j < v; ++j, ++slot) {
      const int tok = tokens[slot];
      if (tok != kEdge0 && tok != kEdge1) repaired = true;
      // PAD inside the triangle reads as "no edge"; op ids snap to EDGE_1.
      const bool on = tok != kPad && nearest_of(tok, {kEdge0, kEdge1}) == kEdge1;
      if (on && edges < kMaxEdges) {
        adj(i, j) = 1;
        ++edges;
      } else if (on) {
        repaired = true;
      }
    }

  std::vector<OpType> ops(v);
  ops.front() = OpType::kInput;
  ops.back() = OpType::kOutput;
  for (int k = 1; k + 1 < v; ++k) {
    const int tok = tokens[kAdjacencySlots + k - 1];
    if (tok < kOpConv1x1) repaired = true;
    ops[k] = token_op(tok);
  }
  for (int s = kAdjacencySlots + v - 2; s < kSequenceLength; ++s)
    if (tokens[s] != kPad) repaired = true;

  CellGraph raw(std::move(adj), std::move(ops));
  CellGraph cell;
  try {
    cell = prune(raw);
  } catch (const Error&) {
    throw Error(ErrorCode::kUnrepairable, "no INPUT -> OUTPUT path after repair");
  }
  if (!(cell == raw)) repaired = true;
  return {std::move(cell), repaired};
}

CellGraph detokenize(const TokenSequence& tokens) { return detokenize_repair(tokens).cell; }

int hamming(const TokenSequence& a, const TokenSequence& b) {
  int d = 0;
  for (int s = 0; s < kSequenceLength; ++s) d += a[s] != b[s];
  return d;
}

double FlopsModel::op_cost(OpType op) const {
  const double r2 = static_cast<double>(input_resolution) * input_resolution;
  const double c = channels;
  switch (op) {
    case OpType::kConv1x1: return r2 * c * c;
    case OpType::kConv3x3: return 9.0 * r2 * c * c;
    case OpType::kMaxPool3x3: return 9.0 * r2 * c;
    default: return 0.0;
  }
}

double estimate_flops(const CellGraph& g, const FlopsModel& model) {
  double per_cell = 0.0;
  for (int i = 1; i + 1 < g.num_nodes(); ++i) per_cell += model.op_cost(g.ops[i]);
  return per_cell * model.cells_per_stack;
}

CellGraph random_cell(std::uint64_t seed, int max_nodes) {
  if (max_nodes < kMinNodes || max_nodes > kMaxNodes)
    throw Error(ErrorCode::kConfigError, "max_nodes must lie in [2, 7]");
  Rng rng(seed);
  // Raw candidate count per V: 2^(edge slots) * 3^(interior nodes).
  std::vector<double> weight;
  double total = 0.0;
  for (int v = kMinNodes; v <= max_nodes; ++v) {
    weight.push_back(std::ldexp(std::pow(3.0, v - 2), triangle(v)));
    total += weight.back();
  }
  constexpr int kRetryCap = 1'000'000;
  for (int attempt = 0; attempt < kRetryCap; ++attempt) {
    double u = uniform01(rng) * total;
    int v = kMinNodes;
    for (std::size_t k = 0; k + 1 < weight.size() && u >= weight[k]; ++k) {
      u -= weight[k];
      ++v;
    }
    CellGraph g;
    g.adjacency = Adjacency::Zero(v, v);
    for (int i = 0; i < v; ++i)
      for (int j = i + 1; j < v; ++j) g.adjacency(i, j) = (rng() >> 63) ? 1 : 0;
    g.ops.assign(v, OpType::kInput);
    g.ops.back() = OpType::kOutput;
    for (int i = 1; i + 1 < v; ++i) g.ops[i] = kInteriorOps[uniform_index(rng, 3)];
    if (validate(g) == Verdict::kOk) return g;
  }
  throw std::logic_error("random_cell: rejection cap exhausted");
}

std::vector<CellGraph> enumerate_cells(int max_nodes) {
  if (max_nodes < kMinNodes || max_nodes > 6)
    throw Error(ErrorCode::kConfigError, "exhaustive enumeration supports 2 <= max_nodes <= 6");
  std::vector<CellGraph> cells;
  for (int v = kMinNodes; v <= max_nodes; ++v) {
    const int slots = triangle(v);
    const int interior = v - 2;
    int combos = 1;
    for (int k = 0; k < interior; ++k) combos *= 3;
    for (std::uint32_t mask = 0; mask < (1u << slots); ++mask) {
      if (std::popcount(mask) > kMaxEdges) continue;
      CellGraph g;
      g.adjacency = Adjacency::Zero(v, v);
      int s = 0;
      for (int i = 0; i < v; ++i)
        for (int j = i + 1; j < v; ++j, ++s) g.adjacency(i, j) = (mask >> s) & 1u;
      g.ops.assign(v, OpType::kConv1x1);
      g.ops.front() = OpType::kInput;
      g.ops.back() = OpType::kOutput;
      if (validate(g) != Verdict::kOk) continue;
      for (int c = 0; c < combos; ++c) {
        int code = c;
        for (int k = 1; k <= interior; ++k) {
          g.ops[k] = kInteriorOps[code % 3];
          code /= 3;
        }
        cells.push_back(g);
      }
    }
  }
  std::sort(cells.begin(), cells.end(),
            [](const CellGraph& a, const CellGraph& b) { return serialize(a) < serialize(b); });
  return cells;
}

}  // namespace dnas
