#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nbs/mdn.h"
#include "nbs/model.h"
#include "nbs/rng.h"

namespace nbs {

// Marks a conditioning role that lies outside the host model.
inline constexpr VariableId kAbsentVariable = std::numeric_limits<VariableId>::max();

enum class MotifKind { grid, chain, gmm_pair };

// Offsets are (row, column) relative to the block's top-left cell.
struct GridOffset {
  int row = 0;
  int col = 0;
  friend bool operator==(const GridOffset&, const GridOffset&) = default;
};

struct Motif {
  std::string name;
  MotifKind kind = MotifKind::grid;
  // Versioned tag of the input layout; stored in trained params.
  std::string encoding;

  // Cardinalities of the proposed and conditioning roles, in role order.
  std::vector<int> b_cards;
  std::vector<int> c_cards;

  // Grid motifs: block shape, role offsets, and the CPT slots (one per role,
  // B and C merged in row-major offset order).
  int block_rows = 0;
  int block_cols = 0;
  std::vector<GridOffset> b_offsets;
  std::vector<GridOffset> c_offsets;
  std::vector<GridOffset> slot_offsets;

  // Chain motifs: k consecutive variables conditioned on `span` neighbors
  // on each side. Directed chains give each variable the previous `span`
  // variables as parents; undirected chains are pairwise MRFs (span 1).
  int chain_k = 0;
  int chain_span = 1;
  bool chain_directed = false;
  int chain_card = 2;

  std::size_t input_dim = 0;
  std::vector<HeadSpec> heads;
  int n_mixtures = 4;

  std::size_t num_b() const { return b_cards.size(); }
  std::size_t num_c() const { return c_cards.size(); }
  // Index of the role treated as the block center.
  std::size_t anchor_role() const;
  MdnConfig mdn_config(double lambda = 4.0) const;
};

// Block of h x w grid cells with its Markov blanket in an up/left grid BN.
Motif grid_block_motif(int rows, int cols);
// The 3x3 block with 14 conditioning cells and 23 CPT slots.
Motif grid_motif();
// k consecutive chain variables. Throws DomainError for k outside 2..4 or
// cardinality below 2.
Motif chain_motif(int k, int cardinality = 2, int span = 1, bool directed = false);
Motif gmm_pair_motif();

// Names: "grid9", "grid4", "chain2".."chain4", "skipchain2".."skipchain4"
// (optionally suffixed ":card"), "gmm-pair". Throws ConfigError otherwise.
Motif motif_by_name(const std::string& name);
std::vector<std::string> motif_names();

// Mapping from grid cells to variables. Cells are addressed by absolute
// (row, col) with the top-left cell at (row0, col0).
struct GridLayout {
  int rows = 0;
  int cols = 0;
  int row0 = 0;
  int col0 = 0;
  std::vector<VariableId> cells;  // kAbsentVariable for holes

  static GridLayout dense(int rows, int cols);
  VariableId at(int row, int col) const;
  bool contains(int row, int col) const {
    return row >= row0 && row < row0 + rows && col >= col0 && col < col0 + cols;
  }
};

// Recognizes a model whose variable i sits at (i / cols, i % cols) with
// parents exactly its up and left neighbors.
std::optional<GridLayout> infer_grid_layout(const DiscreteModel& model);

struct MotifInstantiation {
  std::string motif;
  std::vector<VariableId> b_vars;
  // kAbsentVariable marks a conditioning role outside the host model.
  std::vector<VariableId> c_vars;
  // Factors whose tables make up the local parameters, in slot order.
  std::vector<std::size_t> psi;
  // Encoded local parameters; the tail of every network input.
  std::vector<double> psi_features;
  VariableId anchor = 0;

  bool contains(VariableId v) const;
};

struct DetectOptions {
  // Grid motifs: treat conditioning cells beyond the grid edge as absent
  // instead of rejecting the placement.
  bool virtual_boundary = true;
  // Grid motifs: explicit layout; inferred when empty.
  std::optional<GridLayout> layout;
  // Variables that may not appear in B (typically evidence).
  std::vector<VariableId> excluded;
};

// All placements of the motif, ordered by block top-left cell (row-major)
// or chain start.
std::vector<MotifInstantiation> detect_instantiations(const DiscreteModel& model,
                                                      const Motif& motif,
                                                      const DetectOptions& options = {});

// Network input: conditioning values in role order (0/1 for binary roles,
// one-hot above), then the local parameters. Values of absent roles are
// ignored and encoded as zeros. Throws PreconditionError on a size mismatch.
std::vector<double> encode_input(const Motif& motif, const MotifInstantiation& inst,
                                 std::span<const int> c_values);
// Reads the conditioning values from a full state.
std::vector<double> encode_input(const Motif& motif, const MotifInstantiation& inst,
                                 const Assignment& state);
std::vector<int> conditioning_values(const MotifInstantiation& inst, const Assignment& state);

// log p(B | C) over all block assignments (row-major, last role fastest),
// computed from an encoded input alone.
std::vector<double> block_log_conditional_from_input(const Motif& motif,
                                                     std::span<const double> input);

// Eq. 4 style CPT rows: deterministic with probability p_determ (split
// evenly between the two unit vectors of a binary row), Dirichlet(alpha)
// otherwise.
struct CptDistribution {
  double p_determ = 0.05;
  std::vector<double> alpha{0.5, 0.5};

  void validate() const;
};

// Random factor tables for undirected chains: entries exp(scale * N(0,1)).
struct PotentialDistribution {
  double log_scale = 1.0;
};

struct InstantiationDistribution {
  Motif motif;
  CptDistribution cpt;
  PotentialDistribution potential;
};

struct SampledInstantiation {
  DiscreteModel fragment;
  MotifInstantiation inst;
  // Layout of the role cells (grid motifs).
  std::optional<GridLayout> layout;
};

SampledInstantiation sample_instantiation(const InstantiationDistribution& dist, Rng& rng);

std::vector<double> sample_cpt_row(const CptDistribution& dist, int cardinality, Rng& rng);

// Grid BN with parents (up, left) and rows drawn from `dist`.
DiscreteModel random_grid(int rows, int cols, const CptDistribution& dist, Rng& rng);
// Pairwise MRF chain with unary and pairwise potentials.
DiscreteModel random_pairwise_chain(int n, int cardinality, const PotentialDistribution& dist,
                                    Rng& rng);
// Directed chain where variable i has parents i-span .. i-1.
DiscreteModel random_directed_chain(int n, int cardinality, int span,
                                    const CptDistribution& dist, Rng& rng);

// Observes `count` distinct variables, values taken from one prior draw so
// the evidence always has positive probability.
PartialAssignment random_evidence(const DiscreteModel& model, std::size_t count, Rng& rng);

std::string instantiations_to_json(const std::vector<MotifInstantiation>& insts);

}  // namespace nbs
