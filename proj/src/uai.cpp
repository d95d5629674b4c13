#include "nbs/uai.h"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "nbs/errors.h"
#include "nbs/oracle.h"

namespace nbs {
namespace {

struct Token {
  std::string_view text;
  std::size_t line;
  std::size_t offset;
};

class TokenStream {
 public:
  explicit TokenStream(std::string_view text) {
    std::size_t line = 1;
    std::size_t i = 0;
    while (i < text.size()) {
      const char c = text[i];
      if (c == '\n') {
        ++line;
        ++i;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++i;
      } else {
        const std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        tokens_.push_back({text.substr(start, i - start), line, start});
      }
    }
    end_line_ = line;
    end_offset_ = text.size();
  }

  bool done() const { return pos_ >= tokens_.size(); }
  std::size_t remaining() const { return tokens_.size() - pos_; }

  const Token& next(const char* what) {
    if (done()) {
      throw ParseError(std::string("unexpected end of input, expected ") + what,
                       end_line_, end_offset_);
    }
    return tokens_[pos_++];
  }

  long long next_int(const char* what) {
    const Token& t = next(what);
    long long value = 0;
    auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), value);
    if (ec != std::errc() || ptr != t.text.data() + t.text.size()) {
      throw ParseError(std::string("expected integer ") + what + ", got '" +
                           std::string(t.text) + "'",
                       t.line, t.offset);
    }
    return value;
  }

  double next_real(const char* what) {
    const Token& t = next(what);
    // from_chars for double is not available on every toolchain we target.
    std::string s(t.text);
    char* end = nullptr;
    const double value = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) {
      throw ParseError(std::string("expected real ") + what + ", got '" + s + "'",
                       t.line, t.offset);
    }
    return value;
  }

  const Token& last() const { return tokens_[pos_ - 1]; }

  [[noreturn]] void fail(const std::string& what) const {
    const Token& t = pos_ == 0 ? tokens_.front() : tokens_[pos_ - 1];
    throw ParseError(what, t.line, t.offset);
  }

 private:
  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
  std::size_t end_line_ = 1;
  std::size_t end_offset_ = 0;
};

void append_real(std::string& out, double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  out += buf;
}

}  // namespace

DiscreteModel parse_uai(std::string_view text) {
  TokenStream ts(text);
  if (ts.done()) throw ParseError("empty model file", 1, 0);
  const Token& header = ts.next("preamble");
  const bool bayes = header.text == "BAYES";
  if (!bayes && header.text != "MARKOV") {
    throw ParseError("unknown preamble '" + std::string(header.text) +
                         "', expected BAYES or MARKOV",
                     header.line, header.offset);
  }
  const long long n = ts.next_int("variable count");
  if (n < 0) ts.fail("negative variable count");
  std::vector<int> cards(static_cast<std::size_t>(n));
  for (auto& c : cards) {
    const long long k = ts.next_int("cardinality");
    if (k < 2) ts.fail("cardinality must be at least 2");
    c = static_cast<int>(k);
  }
  const long long nf = ts.next_int("function count");
  if (nf < 0) ts.fail("negative function count");
  std::vector<FactorTable> factors(static_cast<std::size_t>(nf));
  for (auto& f : factors) {
    const long long arity = ts.next_int("scope size");
    if (arity < 0 || (bayes && arity == 0)) ts.fail("invalid scope size");
    for (long long i = 0; i < arity; ++i) {
      const long long v = ts.next_int("scope variable");
      if (v < 0 || v >= n) ts.fail("scope variable out of range");
      f.scope.push_back(static_cast<VariableId>(v));
    }
  }
  for (auto& f : factors) {
    const long long count = ts.next_int("table size");
    std::size_t expected = 1;
    for (VariableId v : f.scope) expected *= static_cast<std::size_t>(cards[v]);
    if (count < 0 || static_cast<std::size_t>(count) != expected) {
      ts.fail("table size " + std::to_string(count) + " does not match scope (" +
              std::to_string(expected) + ")");
    }
    f.values.resize(expected);
    for (auto& x : f.values) {
      x = ts.next_real("table entry");
      if (!(x >= 0.0)) ts.fail("negative table entry");
    }
  }
  if (!ts.done()) {
    const Token& extra = ts.next("");
    throw ParseError("trailing tokens after last table", extra.line, extra.offset);
  }
  try {
    return bayes ? DiscreteModel::directed(std::move(cards), std::move(factors))
                 : DiscreteModel::undirected(std::move(cards), std::move(factors));
  } catch (const DomainError& e) {
    throw ParseError(e.what(), header.line, header.offset);
  }
}

PartialAssignment parse_uai_evidence(std::string_view text) {
  TokenStream ts(text);
  PartialAssignment out;
  if (ts.done()) return out;
  const std::size_t total = ts.remaining();
  long long count = ts.next_int("evidence count");
  // "1 N v s ..." is the multi-sample layout with a single sample.
  if (static_cast<std::size_t>(2 * count + 1) != total && count >= 1) {
    count = ts.next_int("evidence count");
  }
  if (count < 0) ts.fail("negative evidence count");
  for (long long i = 0; i < count; ++i) {
    const long long v = ts.next_int("evidence variable");
    const long long s = ts.next_int("evidence state");
    if (v < 0 || s < 0) ts.fail("negative evidence entry");
    if (!out.emplace(static_cast<VariableId>(v), static_cast<int>(s)).second) {
      ts.fail("variable observed twice");
    }
  }
  if (!ts.done()) {
    const Token& extra = ts.next("");
    throw ParseError("trailing tokens in evidence", extra.line, extra.offset);
  }
  return out;
}

std::string serialize_uai(const DiscreteModel& model) {
  std::string out = model.is_directed() ? "BAYES\n" : "MARKOV\n";
  out += std::to_string(model.num_variables()) + "\n";
  for (std::size_t v = 0; v < model.num_variables(); ++v) {
    if (v) out += ' ';
    out += std::to_string(model.cardinality(static_cast<VariableId>(v)));
  }
  out += "\n" + std::to_string(model.factors().size()) + "\n";
  for (const auto& f : model.factors()) {
    out += std::to_string(f.scope.size());
    for (VariableId v : f.scope) out += " " + std::to_string(v);
    out += '\n';
  }
  for (const auto& f : model.factors()) {
    out += "\n" + std::to_string(f.values.size()) + "\n";
    const std::size_t row = f.scope.empty()
                                ? 1
                                : static_cast<std::size_t>(model.cardinality(f.scope.back()));
    for (std::size_t i = 0; i < f.values.size(); ++i) {
      out += ' ';
      append_real(out, f.values[i]);
      if ((i + 1) % row == 0) out += '\n';
    }
  }
  return out;
}

std::string serialize_uai_evidence(const PartialAssignment& evidence) {
  std::string out = std::to_string(evidence.size());
  for (const auto& [v, s] : evidence) {
    out += " " + std::to_string(v) + " " + std::to_string(s);
  }
  out += '\n';
  return out;
}

std::string serialize_mar(const MarginalTable& marginals) {
  std::string out = "MAR\n" + std::to_string(marginals.probs.size());
  for (const auto& p : marginals.probs) {
    out += " " + std::to_string(p.size());
    for (double x : p) {
      out += ' ';
      append_real(out, x);
    }
  }
  out += '\n';
  return out;
}

MarginalTable parse_mar(std::string_view text) {
  TokenStream ts(text);
  const Token& header = ts.next("MAR header");
  if (header.text != "MAR") {
    throw ParseError("expected MAR header", header.line, header.offset);
  }
  MarginalTable out;
  const long long n = ts.next_int("variable count");
  if (n < 0) ts.fail("negative variable count");
  out.probs.resize(static_cast<std::size_t>(n));
  for (auto& p : out.probs) {
    const long long k = ts.next_int("cardinality");
    if (k < 1) ts.fail("invalid cardinality");
    p.resize(static_cast<std::size_t>(k));
    for (auto& x : p) x = ts.next_real("probability");
  }
  return out;
}

std::string serialize_marginals_csv(const MarginalTable& marginals) {
  std::string out = "variable,state,probability\n";
  for (std::size_t v = 0; v < marginals.probs.size(); ++v) {
    for (std::size_t s = 0; s < marginals.probs[v].size(); ++s) {
      out += std::to_string(v) + "," + std::to_string(s) + ",";
      append_real(out, marginals.probs[v][s]);
      out += '\n';
    }
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

DiscreteModel read_uai_file(const std::string& path) {
  return parse_uai(read_text_file(path));
}

PartialAssignment read_evidence_file(const std::string& path) {
  return parse_uai_evidence(read_text_file(path));
}

}  // namespace nbs
