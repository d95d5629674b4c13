#pragma once

#include <string>
#include <string_view>

#include "nbs/model.h"

namespace nbs {

struct MarginalTable;

// UAI competition model format. A BAYES preamble yields a directed model in
// which the last variable of each function scope is the child; MARKOV
// yields an undirected model. Throws ParseError with line and offset.
DiscreteModel parse_uai(std::string_view text);

// Accepts both the single-sample layout "N v s v s ..." and the
// multi-sample layout "1 N v s ..." (first sample only).
PartialAssignment parse_uai_evidence(std::string_view text);

// Tables are written with 17 significant digits so parsing is lossless.
std::string serialize_uai(const DiscreteModel& model);
std::string serialize_uai_evidence(const PartialAssignment& evidence);

DiscreteModel read_uai_file(const std::string& path);
PartialAssignment read_evidence_file(const std::string& path);

// "MAR" header, then the variable count followed by each variable's
// cardinality and probabilities on one line.
std::string serialize_mar(const MarginalTable& marginals);
MarginalTable parse_mar(std::string_view text);
// variable,state,probability rows under a header line.
std::string serialize_marginals_csv(const MarginalTable& marginals);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);

}  // namespace nbs
