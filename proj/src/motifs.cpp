#include "nbs/motifs.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "json.hpp"

#include "nbs/errors.h"
#include "nbs/log_prob.h"
#include "nbs/oracle.h"

namespace nbs {
namespace {

constexpr double kLogFloor = -30.0;
constexpr int kGridMixtures = 12;
constexpr int kChainMixtures = 4;
constexpr int kGmmMixtures = 4;

bool offset_less(const GridOffset& a, const GridOffset& b) {
  return a.row != b.row ? a.row < b.row : a.col < b.col;
}

std::size_t value_width(int card) { return card == 2 ? 1 : static_cast<std::size_t>(card); }

// Row-major index of an offset inside a list, or -1.
int find_offset(const std::vector<GridOffset>& list, GridOffset o) {
  for (std::size_t i = 0; i < list.size(); ++i) {
    if (list[i] == o) return static_cast<int>(i);
  }
  return -1;
}

std::size_t ipow(std::size_t base, int e) {
  std::size_t r = 1;
  for (int i = 0; i < e; ++i) r *= base;
  return r;
}

// Value of a table entry under a scope assignment given per scope variable.
double table_entry(const DiscreteModel& model, std::size_t f, std::span<const int> scope_states) {
  const auto strides = model.strides(f);
  std::size_t idx = 0;
  for (std::size_t i = 0; i < scope_states.size(); ++i) {
    idx += static_cast<std::size_t>(scope_states[i]) * strides[i];
  }
  return model.factor(f).values[idx];
}

std::vector<VariableId> sorted_present(std::span<const VariableId> vars) {
  std::vector<VariableId> out;
  for (VariableId v : vars) {
    if (v != kAbsentVariable) out.push_back(v);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Grid CPT slot parameters P(x = 1 | up, left) for one role, or nullopt
// when the variable's parents do not match the grid pattern.
std::optional<std::array<double, 4>> grid_slot_params(const DiscreteModel& model,
                                                      const GridLayout& layout,
                                                      const std::vector<char>& in_layout,
                                                      int row, int col) {
  const VariableId v = layout.at(row, col);
  if (model.cardinality(v) != 2) return std::nullopt;
  const VariableId up = layout.at(row - 1, col);
  const VariableId left = layout.at(row, col - 1);
  const auto parents = model.parents(v);
  // Scope position of the parent bound to each slot; -1 if unbound.
  int slot_pos[2] = {-1, -1};
  std::vector<int> leftovers;
  for (std::size_t i = 0; i < parents.size(); ++i) {
    const VariableId p = parents[i];
    if (model.cardinality(p) != 2) return std::nullopt;
    if (up != kAbsentVariable && p == up) {
      slot_pos[0] = static_cast<int>(i);
    } else if (left != kAbsentVariable && p == left) {
      slot_pos[1] = static_cast<int>(i);
    } else if (in_layout[p]) {
      return std::nullopt;
    } else {
      leftovers.push_back(static_cast<int>(i));
    }
  }
  if (up != kAbsentVariable && slot_pos[0] < 0) return std::nullopt;
  if (left != kAbsentVariable && slot_pos[1] < 0) return std::nullopt;
  std::size_t next = 0;
  for (int s = 0; s < 2 && next < leftovers.size(); ++s) {
    if (slot_pos[s] < 0) slot_pos[s] = leftovers[next++];
  }
  if (next != leftovers.size()) return std::nullopt;

  const std::size_t f = model.cpt_of(v);
  std::vector<int> states(parents.size() + 1, 0);
  std::array<double, 4> out{};
  for (int u = 0; u < 2; ++u) {
    for (int l = 0; l < 2; ++l) {
      if (slot_pos[0] >= 0) states[static_cast<std::size_t>(slot_pos[0])] = u;
      if (slot_pos[1] >= 0) states[static_cast<std::size_t>(slot_pos[1])] = l;
      states.back() = 1;
      out[static_cast<std::size_t>(2 * u + l)] = table_entry(model, f, states);
    }
  }
  return out;
}

std::vector<MotifInstantiation> detect_grid(const DiscreteModel& model, const Motif& motif,
                                            const DetectOptions& options) {
  std::vector<MotifInstantiation> out;
  if (!model.is_directed()) return out;
  std::optional<GridLayout> layout = options.layout;
  if (!layout) layout = infer_grid_layout(model);
  if (!layout) return out;
  const GridLayout& g = *layout;

  std::vector<char> in_layout(model.num_variables(), 0);
  for (VariableId v : g.cells) {
    if (v != kAbsentVariable) {
      model.check_variable(v);
      in_layout[v] = 1;
    }
  }
  std::vector<char> excluded(model.num_variables(), 0);
  for (VariableId v : options.excluded) {
    if (v < excluded.size()) excluded[v] = 1;
  }

  const int h = motif.block_rows;
  const int w = motif.block_cols;
  for (int r0 = g.row0; r0 + h <= g.row0 + g.rows; ++r0) {
    for (int c0 = g.col0; c0 + w <= g.col0 + g.cols; ++c0) {
      MotifInstantiation inst;
      inst.motif = motif.name;
      bool ok = true;
      for (const auto& o : motif.b_offsets) {
        const VariableId v = g.at(r0 + o.row, c0 + o.col);
        if (v == kAbsentVariable || excluded[v] || model.cardinality(v) != 2) {
          ok = false;
          break;
        }
        inst.b_vars.push_back(v);
      }
      if (!ok) continue;
      for (const auto& o : motif.c_offsets) {
        const VariableId v = g.at(r0 + o.row, c0 + o.col);
        if (v == kAbsentVariable && !options.virtual_boundary) {
          ok = false;
          break;
        }
        if (v != kAbsentVariable && model.cardinality(v) != 2) {
          ok = false;
          break;
        }
        inst.c_vars.push_back(v);
      }
      if (!ok) continue;
      for (const auto& o : motif.slot_offsets) {
        const int r = r0 + o.row;
        const int c = c0 + o.col;
        if (g.at(r, c) == kAbsentVariable) {
          inst.psi_features.insert(inst.psi_features.end(), 4, 0.5);
          continue;
        }
        const auto params = grid_slot_params(model, g, in_layout, r, c);
        if (!params) {
          ok = false;
          break;
        }
        inst.psi.push_back(model.cpt_of(g.at(r, c)));
        inst.psi_features.insert(inst.psi_features.end(), params->begin(), params->end());
      }
      if (!ok) continue;
      if (markov_blanket(model, inst.b_vars) != sorted_present(inst.c_vars)) continue;
      inst.anchor = inst.b_vars[motif.anchor_role()];
      out.push_back(std::move(inst));
    }
  }
  return out;
}

// Centered log potentials of the pairwise chain slots touching the block
// starting at s, or nullopt if some factor does not fit a slot.
std::optional<std::vector<double>> pairwise_chain_features(const DiscreteModel& model,
                                                           int s, int k, int card) {
  // Slots alternate pair(s-1, s), unary(s), pair(s, s+1), ..., pair(s+k-1, s+k).
  struct Slot {
    std::vector<VariableId> scope;
    std::vector<double> logs;
  };
  std::vector<Slot> slots;
  const auto c = static_cast<std::size_t>(card);
  for (int j = 0; j <= k; ++j) {
    slots.push_back({{static_cast<VariableId>(s + j - 1), static_cast<VariableId>(s + j)},
                     std::vector<double>(c * c, 0.0)});
    if (j < k) slots.push_back({{static_cast<VariableId>(s + j)}, std::vector<double>(c, 0.0)});
  }
  std::vector<VariableId> block;
  for (int j = 0; j < k; ++j) block.push_back(static_cast<VariableId>(s + j));
  for (std::size_t f : factors_touching(model, block)) {
    const auto& scope = model.factor(f).scope;
    std::vector<VariableId> sorted = scope;
    std::sort(sorted.begin(), sorted.end());
    Slot* target = nullptr;
    for (auto& slot : slots) {
      if (slot.scope == sorted) target = &slot;
    }
    if (!target) return std::nullopt;
    const auto logs = model.log_table(f);
    if (scope.size() == 1) {
      for (std::size_t i = 0; i < c; ++i) target->logs[i] += logs[i];
    } else {
      const bool swapped = scope[0] != sorted[0];
      for (std::size_t a = 0; a < c; ++a) {
        for (std::size_t b = 0; b < c; ++b) {
          target->logs[a * c + b] += swapped ? logs[b * c + a] : logs[a * c + b];
        }
      }
    }
  }
  std::vector<double> out;
  for (auto& slot : slots) {
    double mean = 0.0;
    for (double& x : slot.logs) {
      x = std::max(x, kLogFloor);
      mean += x;
    }
    mean /= static_cast<double>(slot.logs.size());
    for (double x : slot.logs) out.push_back(x - mean);
  }
  return out;
}

// Free CPT parameters of the directed chain slots for nodes s .. s+k+span-1,
// parents in ascending order, or nullopt on a structural mismatch.
std::optional<std::vector<double>> directed_chain_features(const DiscreteModel& model, int s,
                                                           int k, int span, int card) {
  std::vector<double> out;
  for (int j = s; j < s + k + span; ++j) {
    const auto v = static_cast<VariableId>(j);
    auto parents = std::vector<VariableId>(model.parents(v).begin(), model.parents(v).end());
    std::vector<VariableId> expected;
    for (int p = j - span; p < j; ++p) expected.push_back(static_cast<VariableId>(p));
    std::vector<VariableId> sorted = parents;
    std::sort(sorted.begin(), sorted.end());
    if (sorted != expected) return std::nullopt;
    // Scope position of each canonical parent.
    std::vector<std::size_t> pos(expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      pos[i] = static_cast<std::size_t>(
          std::find(parents.begin(), parents.end(), expected[i]) - parents.begin());
    }
    const std::size_t f = model.cpt_of(v);
    std::vector<int> states(parents.size() + 1, 0);
    const std::size_t rows = ipow(static_cast<std::size_t>(card), span);
    for (std::size_t row = 0; row < rows; ++row) {
      std::size_t rem = row;
      for (std::size_t i = expected.size(); i-- > 0;) {
        states[pos[i]] = static_cast<int>(rem % static_cast<std::size_t>(card));
        rem /= static_cast<std::size_t>(card);
      }
      for (int x = 1; x < card; ++x) {
        states.back() = x;
        out.push_back(table_entry(model, f, states));
      }
    }
  }
  return out;
}

std::vector<MotifInstantiation> detect_chain(const DiscreteModel& model, const Motif& motif,
                                             const DetectOptions& options) {
  std::vector<MotifInstantiation> out;
  if (model.is_directed() != motif.chain_directed) return out;
  const int n = static_cast<int>(model.num_variables());
  const int k = motif.chain_k;
  const int w = motif.chain_span;
  std::vector<char> excluded(model.num_variables(), 0);
  for (VariableId v : options.excluded) {
    if (v < excluded.size()) excluded[v] = 1;
  }
  for (int s = w; s + k + w <= n; ++s) {
    MotifInstantiation inst;
    inst.motif = motif.name;
    bool ok = true;
    for (int j = s; j < s + k; ++j) {
      const auto v = static_cast<VariableId>(j);
      if (excluded[v] || model.cardinality(v) != motif.chain_card) ok = false;
      inst.b_vars.push_back(v);
    }
    for (int j = s - w; j < s; ++j) inst.c_vars.push_back(static_cast<VariableId>(j));
    for (int j = s + k; j < s + k + w; ++j) inst.c_vars.push_back(static_cast<VariableId>(j));
    for (VariableId v : inst.c_vars) {
      if (model.cardinality(v) != motif.chain_card) ok = false;
    }
    if (!ok) continue;
    if (markov_blanket(model, inst.b_vars) != inst.c_vars) continue;
    const auto features = motif.chain_directed
                              ? directed_chain_features(model, s, k, w, motif.chain_card)
                              : pairwise_chain_features(model, s, k, motif.chain_card);
    if (!features) continue;
    inst.psi_features = *features;
    inst.psi = factors_touching(model, inst.b_vars);
    inst.anchor = inst.b_vars[motif.anchor_role()];
    out.push_back(std::move(inst));
  }
  return out;
}

void append_value(std::vector<double>& out, int value, int card) {
  if (card == 2) {
    out.push_back(static_cast<double>(value));
  } else {
    for (int s = 0; s < card; ++s) out.push_back(s == value ? 1.0 : 0.0);
  }
}

int decode_value(std::span<const double> in, std::size_t& pos, int card) {
  if (card == 2) return in[pos++] > 0.5 ? 1 : 0;
  int best = 0;
  for (int s = 0; s < card; ++s) {
    if (in[pos + static_cast<std::size_t>(s)] > in[pos + static_cast<std::size_t>(best)]) best = s;
  }
  pos += static_cast<std::size_t>(card);
  return best;
}

double safe_log(double p) { return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity(); }

std::vector<double> normalize_logs(std::vector<double> logs) {
  const double lse = log_sum_exp(logs);
  if (lse == -std::numeric_limits<double>::infinity()) {
    throw InconsistencyError("block conditional has zero mass");
  }
  for (double& x : logs) x -= lse;
  return logs;
}

std::vector<double> grid_conditional_from_input(const Motif& motif, std::span<const double> in) {
  const std::size_t nb = motif.num_b();
  const std::size_t nc = motif.num_c();
  std::vector<GridOffset> roles = motif.slot_offsets;
  std::vector<int> value(roles.size(), 0);
  std::vector<int> b_slot(nb);
  for (std::size_t i = 0; i < nb; ++i) b_slot[i] = find_offset(roles, motif.b_offsets[i]);
  for (std::size_t i = 0; i < nc; ++i) {
    value[static_cast<std::size_t>(find_offset(roles, motif.c_offsets[i]))] = in[i] > 0.5 ? 1 : 0;
  }
  std::vector<char> is_b(roles.size(), 0);
  for (int s : b_slot) is_b[static_cast<std::size_t>(s)] = 1;
  // Slots whose factor involves the block, with their parents' slots.
  struct Term {
    std::size_t slot;
    int up;
    int left;
  };
  std::vector<Term> terms;
  for (std::size_t s = 0; s < roles.size(); ++s) {
    const int up = find_offset(roles, {roles[s].row - 1, roles[s].col});
    const int left = find_offset(roles, {roles[s].row, roles[s].col - 1});
    const bool touches = is_b[s] || (up >= 0 && is_b[static_cast<std::size_t>(up)]) ||
                         (left >= 0 && is_b[static_cast<std::size_t>(left)]);
    if (touches) terms.push_back({s, up, left});
  }
  const double* params = in.data() + nc;
  std::vector<double> logs(std::size_t{1} << nb);
  for (std::size_t idx = 0; idx < logs.size(); ++idx) {
    for (std::size_t i = 0; i < nb; ++i) {
      value[static_cast<std::size_t>(b_slot[i])] = static_cast<int>((idx >> (nb - 1 - i)) & 1);
    }
    double total = 0.0;
    for (const auto& t : terms) {
      const int u = t.up >= 0 ? value[static_cast<std::size_t>(t.up)] : 0;
      const int l = t.left >= 0 ? value[static_cast<std::size_t>(t.left)] : 0;
      const double p1 = params[4 * t.slot + static_cast<std::size_t>(2 * u + l)];
      total += safe_log(value[t.slot] ? p1 : 1.0 - p1);
    }
    logs[idx] = total;
  }
  return normalize_logs(std::move(logs));
}

std::vector<double> chain_conditional_from_input(const Motif& motif, std::span<const double> in) {
  const int k = motif.chain_k;
  const int w = motif.chain_span;
  const int card = motif.chain_card;
  const auto c = static_cast<std::size_t>(card);
  // Window positions 0 .. k+2w-1; block occupies w .. w+k-1.
  std::vector<int> value(static_cast<std::size_t>(k + 2 * w), 0);
  std::size_t pos = 0;
  for (int j = 0; j < w; ++j) value[static_cast<std::size_t>(j)] = decode_value(in, pos, card);
  for (int j = w + k; j < k + 2 * w; ++j) {
    value[static_cast<std::size_t>(j)] = decode_value(in, pos, card);
  }
  const double* psi = in.data() + pos;
  std::vector<double> logs(ipow(c, k));
  for (std::size_t idx = 0; idx < logs.size(); ++idx) {
    std::size_t rem = idx;
    for (int i = k; i-- > 0;) {
      value[static_cast<std::size_t>(w + i)] = static_cast<int>(rem % c);
      rem /= c;
    }
    double total = 0.0;
    const double* p = psi;
    if (motif.chain_directed) {
      const std::size_t rows = ipow(c, w);
      for (int j = w; j < w + k + w; ++j) {
        std::size_t row = 0;
        for (int q = j - w; q < j; ++q) row = row * c + static_cast<std::size_t>(value[static_cast<std::size_t>(q)]);
        const double* r = p + row * (c - 1);
        const int x = value[static_cast<std::size_t>(j)];
        double px = 0.0;
        if (x == 0) {
          px = 1.0;
          for (std::size_t q = 0; q + 1 < c; ++q) px -= r[q];
          px = std::max(px, 0.0);
        } else {
          px = r[x - 1];
        }
        total += safe_log(px);
        p += rows * (c - 1);
      }
    } else {
      for (int j = 0; j <= k; ++j) {
        const auto a = static_cast<std::size_t>(value[static_cast<std::size_t>(w + j - 1)]);
        const auto b = static_cast<std::size_t>(value[static_cast<std::size_t>(w + j)]);
        total += p[a * c + b];
        p += c * c;
        if (j < k) {
          total += p[b];
          p += c;
        }
      }
    }
    logs[idx] = total;
  }
  return normalize_logs(std::move(logs));
}

}  // namespace

std::size_t Motif::anchor_role() const {
  if (kind == MotifKind::grid) {
    const GridOffset center{(block_rows - 1) / 2, (block_cols - 1) / 2};
    return static_cast<std::size_t>(find_offset(b_offsets, center));
  }
  if (kind == MotifKind::chain) return static_cast<std::size_t>((chain_k - 1) / 2);
  return 0;
}

MdnConfig Motif::mdn_config(double lambda) const {
  return MdnConfig::sized(input_dim, heads, n_mixtures, encoding, lambda);
}

Motif grid_block_motif(int rows, int cols) {
  if (rows < 1 || cols < 1) throw DomainError("grid block needs positive dimensions");
  Motif m;
  m.kind = MotifKind::grid;
  m.block_rows = rows;
  m.block_cols = cols;
  m.name = rows == 3 && cols == 3   ? "grid9"
           : rows == 2 && cols == 2 ? "grid4"
                                    : "grid" + std::to_string(rows) + "x" + std::to_string(cols);
  m.encoding = "grid" + std::to_string(rows) + "x" + std::to_string(cols) + "/v1";
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m.b_offsets.push_back({r, c});
  }
  for (int c = 0; c <= cols; ++c) m.c_offsets.push_back({-1, c});
  for (int r = 0; r < rows; ++r) {
    m.c_offsets.push_back({r, -1});
    m.c_offsets.push_back({r, cols});
  }
  for (int c = -1; c < cols; ++c) m.c_offsets.push_back({rows, c});
  m.slot_offsets = m.b_offsets;
  m.slot_offsets.insert(m.slot_offsets.end(), m.c_offsets.begin(), m.c_offsets.end());
  std::sort(m.slot_offsets.begin(), m.slot_offsets.end(), offset_less);
  m.b_cards.assign(m.b_offsets.size(), 2);
  m.c_cards.assign(m.c_offsets.size(), 2);
  m.input_dim = m.c_offsets.size() + 4 * m.slot_offsets.size();
  m.heads.assign(m.b_offsets.size(), HeadSpec::categorical(2));
  m.n_mixtures = kGridMixtures;
  return m;
}

Motif grid_motif() { return grid_block_motif(3, 3); }

Motif chain_motif(int k, int cardinality, int span, bool directed) {
  if (k < 2 || k > 4) throw DomainError("chain motif size must be 2, 3 or 4");
  if (cardinality < 2) throw DomainError("chain cardinality must be at least 2");
  if (span < 1 || (!directed && span != 1)) throw DomainError("invalid chain span");
  Motif m;
  m.kind = MotifKind::chain;
  m.chain_k = k;
  m.chain_span = span;
  m.chain_directed = directed;
  m.chain_card = cardinality;
  const std::string base = directed ? (span == 2 ? "skipchain" : "dchain" + std::to_string(span) + "-")
                                    : "chain";
  m.name = base + std::to_string(k) + (cardinality == 2 ? "" : ":" + std::to_string(cardinality));
  m.encoding = base + std::to_string(k) + "-c" + std::to_string(cardinality) + "/v1";
  m.b_cards.assign(static_cast<std::size_t>(k), cardinality);
  m.c_cards.assign(static_cast<std::size_t>(2 * span), cardinality);
  const auto c = static_cast<std::size_t>(cardinality);
  std::size_t psi = 0;
  if (directed) {
    psi = static_cast<std::size_t>(k + span) * ipow(c, span) * (c - 1);
  } else {
    psi = static_cast<std::size_t>(k + 1) * c * c + static_cast<std::size_t>(k) * c;
  }
  m.input_dim = 2 * static_cast<std::size_t>(span) * value_width(cardinality) + psi;
  m.heads.assign(static_cast<std::size_t>(k), HeadSpec::categorical(cardinality));
  m.n_mixtures = kChainMixtures;
  return m;
}

Motif gmm_pair_motif() {
  Motif m;
  m.kind = MotifKind::gmm_pair;
  m.name = "gmm-pair";
  m.encoding = "gmm-pair-m8-n60-d2/v1";
  // n*d sorted points, m*d means, m activity bits, m proposal mask, PC, mean.
  m.input_dim = 60 * 2 + 8 * 2 + 8 + 8 + 2 + 2;
  m.heads = {HeadSpec::gaussian(2), HeadSpec::categorical(2), HeadSpec::gaussian(2),
             HeadSpec::categorical(2)};
  m.n_mixtures = kGmmMixtures;
  return m;
}

Motif motif_by_name(const std::string& name) {
  std::string base = name;
  int card = 2;
  if (const auto colon = name.find(':'); colon != std::string::npos) {
    base = name.substr(0, colon);
    try {
      std::size_t used = 0;
      card = std::stoi(name.substr(colon + 1), &used);
      if (used != name.size() - colon - 1) throw std::invalid_argument(name);
    } catch (const std::exception&) {
      throw ConfigError("bad cardinality suffix in motif name '" + name + "'");
    }
  }
  try {
    if (base == "grid9" && card == 2) return grid_motif();
    if (base == "grid4" && card == 2) return grid_block_motif(2, 2);
    if (base == "gmm-pair" && card == 2) return gmm_pair_motif();
    for (int k = 2; k <= 4; ++k) {
      if (base == "chain" + std::to_string(k)) return chain_motif(k, card);
      if (base == "skipchain" + std::to_string(k)) return chain_motif(k, card, 2, true);
    }
  } catch (const DomainError& e) {
    throw ConfigError("motif '" + name + "': " + e.what());
  }
  throw ConfigError("unknown motif '" + name + "'");
}

std::vector<std::string> motif_names() {
  return {"grid9", "grid4", "chain2", "chain3", "chain4",
          "skipchain2", "skipchain3", "skipchain4", "gmm-pair"};
}

GridLayout GridLayout::dense(int rows, int cols) {
  GridLayout g;
  g.rows = rows;
  g.cols = cols;
  g.cells.resize(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  for (std::size_t i = 0; i < g.cells.size(); ++i) g.cells[i] = static_cast<VariableId>(i);
  return g;
}

VariableId GridLayout::at(int row, int col) const {
  if (!contains(row, col)) return kAbsentVariable;
  return cells[static_cast<std::size_t>(row - row0) * static_cast<std::size_t>(cols) +
               static_cast<std::size_t>(col - col0)];
}

std::optional<GridLayout> infer_grid_layout(const DiscreteModel& model) {
  if (!model.is_directed()) return std::nullopt;
  const std::size_t n = model.num_variables();
  for (std::size_t cols = 1; cols <= n; ++cols) {
    if (n % cols != 0) continue;
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      std::vector<VariableId> expected;
      if (i >= cols) expected.push_back(static_cast<VariableId>(i - cols));
      if (i % cols != 0) expected.push_back(static_cast<VariableId>(i - 1));
      std::vector<VariableId> got(model.parents(static_cast<VariableId>(i)).begin(),
                                  model.parents(static_cast<VariableId>(i)).end());
      std::sort(got.begin(), got.end());
      std::sort(expected.begin(), expected.end());
      ok = got == expected;
    }
    if (ok) return GridLayout::dense(static_cast<int>(n / cols), static_cast<int>(cols));
  }
  return std::nullopt;
}

bool MotifInstantiation::contains(VariableId v) const {
  return std::find(b_vars.begin(), b_vars.end(), v) != b_vars.end();
}

std::vector<MotifInstantiation> detect_instantiations(const DiscreteModel& model,
                                                      const Motif& motif,
                                                      const DetectOptions& options) {
  switch (motif.kind) {
    case MotifKind::grid:
      return detect_grid(model, motif, options);
    case MotifKind::chain:
      return detect_chain(model, motif, options);
    case MotifKind::gmm_pair:
      break;
  }
  return {};
}

std::vector<double> encode_input(const Motif& motif, const MotifInstantiation& inst,
                                 std::span<const int> c_values) {
  if (c_values.size() != motif.num_c() || inst.c_vars.size() != motif.num_c()) {
    throw PreconditionError("conditioning values do not cover the motif's conditioning roles");
  }
  std::vector<double> out;
  out.reserve(motif.input_dim);
  for (std::size_t i = 0; i < c_values.size(); ++i) {
    const int card = motif.c_cards[i];
    if (inst.c_vars[i] == kAbsentVariable) {
      out.insert(out.end(), value_width(card), 0.0);
      continue;
    }
    if (c_values[i] < 0 || c_values[i] >= card) {
      throw DomainError("conditioning value out of range");
    }
    append_value(out, c_values[i], card);
  }
  out.insert(out.end(), inst.psi_features.begin(), inst.psi_features.end());
  if (out.size() != motif.input_dim) {
    throw VersionError("instantiation encodes to " + std::to_string(out.size()) +
                       " inputs, motif expects " + std::to_string(motif.input_dim));
  }
  return out;
}

std::vector<int> conditioning_values(const MotifInstantiation& inst, const Assignment& state) {
  std::vector<int> values(inst.c_vars.size(), 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (inst.c_vars[i] != kAbsentVariable) values[i] = state[inst.c_vars[i]];
  }
  return values;
}

std::vector<double> encode_input(const Motif& motif, const MotifInstantiation& inst,
                                 const Assignment& state) {
  const auto values = conditioning_values(inst, state);
  return encode_input(motif, inst, std::span<const int>(values));
}

std::vector<double> block_log_conditional_from_input(const Motif& motif,
                                                     std::span<const double> input) {
  if (input.size() != motif.input_dim) {
    throw PreconditionError("input size does not match the motif");
  }
  switch (motif.kind) {
    case MotifKind::grid:
      return grid_conditional_from_input(motif, input);
    case MotifKind::chain:
      return chain_conditional_from_input(motif, input);
    case MotifKind::gmm_pair:
      break;
  }
  throw UnsupportedError("continuous motifs have no discrete block conditional");
}

void CptDistribution::validate() const {
  if (!(p_determ >= 0.0 && p_determ <= 1.0)) throw ConfigError("p_determ must lie in [0, 1]");
  if (alpha.empty()) throw ConfigError("alpha must be nonempty");
  for (double a : alpha) {
    if (!(a > 0.0)) throw ConfigError("alpha components must be positive");
  }
}

std::vector<double> sample_cpt_row(const CptDistribution& dist, int cardinality, Rng& rng) {
  const auto c = static_cast<std::size_t>(cardinality);
  std::vector<double> row(c, 0.0);
  if (rng.uniform() < dist.p_determ) {
    row[rng.below(c)] = 1.0;
    return row;
  }
  for (;;) {
    double sum = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
      row[i] = rng.gamma(dist.alpha[i % dist.alpha.size()]);
      sum += row[i];
    }
    if (sum > 0.0 && std::isfinite(sum)) {
      for (double& x : row) x /= sum;
      return row;
    }
  }
}

namespace {

FactorTable random_cpt(std::vector<VariableId> scope, const std::vector<int>& cards,
                       const CptDistribution& dist, Rng& rng) {
  FactorTable f;
  f.scope = std::move(scope);
  const int card = cards[f.scope.back()];
  std::size_t rows = 1;
  for (std::size_t i = 0; i + 1 < f.scope.size(); ++i) {
    rows *= static_cast<std::size_t>(cards[f.scope[i]]);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = sample_cpt_row(dist, card, rng);
    f.values.insert(f.values.end(), row.begin(), row.end());
  }
  return f;
}

FactorTable random_potential(std::vector<VariableId> scope, const std::vector<int>& cards,
                             const PotentialDistribution& dist, Rng& rng) {
  FactorTable f;
  f.scope = std::move(scope);
  std::size_t size = 1;
  for (VariableId v : f.scope) size *= static_cast<std::size_t>(cards[v]);
  f.values.resize(size);
  for (double& x : f.values) x = std::exp(dist.log_scale * rng.normal());
  return f;
}

// Directed grid over an arbitrary cell set; each cell's parents are its up
// and left cells when present. Returns the model and the id of each cell.
DiscreteModel grid_over_cells(const std::vector<GridOffset>& cells, const CptDistribution& dist,
                              Rng& rng) {
  const std::vector<int> cards(cells.size(), 2);
  std::vector<FactorTable> cpts;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::vector<VariableId> scope;
    const int up = find_offset(cells, {cells[i].row - 1, cells[i].col});
    const int left = find_offset(cells, {cells[i].row, cells[i].col - 1});
    if (up >= 0) scope.push_back(static_cast<VariableId>(up));
    if (left >= 0) scope.push_back(static_cast<VariableId>(left));
    scope.push_back(static_cast<VariableId>(i));
    cpts.push_back(random_cpt(std::move(scope), cards, dist, rng));
  }
  return DiscreteModel::directed(cards, std::move(cpts));
}

SampledInstantiation sample_grid_instantiation(const InstantiationDistribution& dist, Rng& rng) {
  const Motif& m = dist.motif;
  const int h = m.block_rows;
  const int w = m.block_cols;
  // Role cells plus root-side completion cells that give every role a full
  // up/left parent pair.
  std::vector<GridOffset> cells = m.slot_offsets;
  for (int c = 0; c <= w; ++c) cells.push_back({-2, c});
  cells.push_back({-1, -1});
  for (int r = 0; r <= h; ++r) cells.push_back({r, -2});
  std::sort(cells.begin(), cells.end(), offset_less);

  SampledInstantiation out;
  out.fragment = grid_over_cells(cells, dist.cpt, rng);

  GridLayout layout;
  layout.row0 = -1;
  layout.col0 = -1;
  layout.rows = h + 2;
  layout.cols = w + 2;
  layout.cells.assign(static_cast<std::size_t>(layout.rows * layout.cols), kAbsentVariable);
  for (const auto& o : m.slot_offsets) {
    layout.cells[static_cast<std::size_t>((o.row + 1) * layout.cols + (o.col + 1))] =
        static_cast<VariableId>(find_offset(cells, o));
  }
  DetectOptions opts;
  opts.virtual_boundary = false;
  opts.layout = layout;
  auto found = detect_instantiations(out.fragment, m, opts);
  if (found.size() != 1) {
    throw Error("grid fragment produced " + std::to_string(found.size()) + " instantiations");
  }
  out.inst = std::move(found.front());
  out.layout = std::move(layout);
  return out;
}

SampledInstantiation sample_chain_instantiation(const InstantiationDistribution& dist, Rng& rng) {
  const Motif& m = dist.motif;
  const int n = m.chain_k + 2 * m.chain_span;
  SampledInstantiation out;
  out.fragment = m.chain_directed
                     ? random_directed_chain(n, m.chain_card, m.chain_span, dist.cpt, rng)
                     : random_pairwise_chain(n, m.chain_card, dist.potential, rng);
  DetectOptions opts;
  opts.virtual_boundary = false;
  auto found = detect_instantiations(out.fragment, m, opts);
  if (found.size() != 1) {
    throw Error("chain fragment produced " + std::to_string(found.size()) + " instantiations");
  }
  out.inst = std::move(found.front());
  return out;
}

}  // namespace

SampledInstantiation sample_instantiation(const InstantiationDistribution& dist, Rng& rng) {
  dist.cpt.validate();
  switch (dist.motif.kind) {
    case MotifKind::grid:
      return sample_grid_instantiation(dist, rng);
    case MotifKind::chain:
      return sample_chain_instantiation(dist, rng);
    case MotifKind::gmm_pair:
      break;
  }
  throw UnsupportedError("GMM instantiations are sampled by the GMM module");
}

DiscreteModel random_grid(int rows, int cols, const CptDistribution& dist, Rng& rng) {
  if (rows < 1 || cols < 1) throw DomainError("grid needs positive dimensions");
  dist.validate();
  const std::vector<int> cards(static_cast<std::size_t>(rows * cols), 2);
  std::vector<FactorTable> cpts;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      std::vector<VariableId> scope;
      if (r > 0) scope.push_back(static_cast<VariableId>((r - 1) * cols + c));
      if (c > 0) scope.push_back(static_cast<VariableId>(r * cols + c - 1));
      scope.push_back(static_cast<VariableId>(r * cols + c));
      cpts.push_back(random_cpt(std::move(scope), cards, dist, rng));
    }
  }
  return DiscreteModel::directed(cards, std::move(cpts));
}

DiscreteModel random_pairwise_chain(int n, int cardinality, const PotentialDistribution& dist,
                                    Rng& rng) {
  if (n < 1 || cardinality < 2) throw DomainError("invalid chain shape");
  const std::vector<int> cards(static_cast<std::size_t>(n), cardinality);
  std::vector<FactorTable> factors;
  for (int i = 0; i < n; ++i) {
    factors.push_back(random_potential({static_cast<VariableId>(i)}, cards, dist, rng));
    if (i + 1 < n) {
      factors.push_back(random_potential(
          {static_cast<VariableId>(i), static_cast<VariableId>(i + 1)}, cards, dist, rng));
    }
  }
  return DiscreteModel::undirected(cards, std::move(factors));
}

DiscreteModel random_directed_chain(int n, int cardinality, int span,
                                    const CptDistribution& dist, Rng& rng) {
  if (n < 1 || cardinality < 2 || span < 1) throw DomainError("invalid chain shape");
  dist.validate();
  const std::vector<int> cards(static_cast<std::size_t>(n), cardinality);
  std::vector<FactorTable> cpts;
  for (int i = 0; i < n; ++i) {
    std::vector<VariableId> scope;
    for (int p = std::max(0, i - span); p < i; ++p) scope.push_back(static_cast<VariableId>(p));
    scope.push_back(static_cast<VariableId>(i));
    cpts.push_back(random_cpt(std::move(scope), cards, dist, rng));
  }
  return DiscreteModel::directed(cards, std::move(cpts));
}

PartialAssignment random_evidence(const DiscreteModel& model, std::size_t count, Rng& rng) {
  const std::size_t n = model.num_variables();
  if (count > n) throw DomainError("more evidence variables than model variables");
  const Assignment draw = model.is_directed() ? sample_prior(model, rng) : sample_exact(model, {}, rng);
  std::vector<VariableId> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<VariableId>(i);
  PartialAssignment out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.below(n - i);
    std::swap(ids[i], ids[j]);
    out[ids[i]] = draw[ids[i]];
  }
  return out;
}

std::string instantiations_to_json(const std::vector<MotifInstantiation>& insts) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& inst : insts) {
    nlohmann::json c = nlohmann::json::array();
    for (VariableId v : inst.c_vars) {
      if (v == kAbsentVariable) {
        c.push_back(nullptr);
      } else {
        c.push_back(v);
      }
    }
    arr.push_back({{"motif", inst.motif},
                   {"b", inst.b_vars},
                   {"c", c},
                   {"psi", inst.psi},
                   {"anchor", inst.anchor}});
  }
  return arr.dump(2);
}

}  // namespace nbs
