#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nopvis/smali.hpp"

namespace nopvis {

// Analysis-effort class of an injected snippet.
enum class ComplexityClass {
  StraightLine,           // 0
  FunctionOrConditional,  // 0.33
  LoopOrNestedCondition,  // 0.66
  RecursionOrComplex,     // 1
};

// How entangled an injected snippet is with the host's own variables.
enum class ConnectionClass {
  NoAttachment,               // 0
  OneOriginalVariable,        // 0.5
  MultipleOriginalVariables,  // 1
};

double value(ComplexityClass c);
double value(ConnectionClass c);
std::string_view to_string(ComplexityClass c);
std::string_view to_string(ConnectionClass c);
ComplexityClass complexity_from_string(std::string_view s);
ConnectionClass connection_from_string(std::string_view s);

// One modified method. Counts are Instruction lines only: labels,
// directives and comments never contribute to either count.
struct InjectionSite {
  std::string host_method;
  std::size_t injected_instruction_count = 0;   // |l_i|
  std::size_t original_instruction_count = 0;   // |s_i|
  bool contains_explicit_nop = false;
  ComplexityClass complexity = ComplexityClass::StraightLine;
  ConnectionClass connection = ConnectionClass::NoAttachment;
  // Indices into the modified method's lines, ascending.
  std::vector<std::size_t> injected_line_spans;
  // Registers appended to the locals area (parameters shifted up).
  int registers_added = 0;

  friend bool operator==(const InjectionSite&, const InjectionSite&) = default;
};

struct InjectionManifest {
  std::string app_id;
  std::vector<InjectionSite> sites;
  // Optimizer-chosen payload mnemonics, in placeholder order.
  std::vector<std::string> assignment;

  friend bool operator==(const InjectionManifest&,
                         const InjectionManifest&) = default;
};

struct CccWeights {
  double w1 = 0.4;
  double w2 = 0.2;
  double w3 = 0.4;

  // Throws std::invalid_argument unless each weight is in [0,1] and the
  // three sum to 1 within 1e-9.
  void validate() const;
};

struct CccReport {
  double c1 = 0;
  double c2 = 0;
  double c3 = 0;
  CccWeights weights;
  double ccc = 0;
};

class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

double clarity(const InjectionManifest& manifest);
double complexity(const InjectionManifest& manifest);
double connection(const InjectionManifest& manifest);
CccReport ccc(const InjectionManifest& manifest, const CccWeights& weights = {});
// Weighted combination of already-computed components.
double combine(double c1, double c2, double c3, const CccWeights& weights = {});

struct ComplexityHint {
  // "name(descriptor)" of the host; invoking it from the snippet is recursion.
  std::string host_signature;
};

ComplexityClass classify_complexity(std::span<const SmaliLine> snippet,
                                    const ComplexityHint& hint = {});

// Counts distinct original registers (those referenced by the host's
// instructions, plus its parameters) that the snippet reads or writes.
ConnectionClass classify_connection(std::span<const SmaliLine> snippet,
                                    const SmaliMethod& host);

struct InjectedSnippet {
  std::vector<SmaliLine> lines;
  std::vector<std::size_t> positions;  // indices into modified.lines
};

// Lines of `modified` not matched by a longest common subsequence against
// `original` (lines compared ignoring indentation).
InjectedSnippet diff_injection(const SmaliMethod& original,
                               const SmaliMethod& modified);

InjectionSite describe_injection(std::string host_ref,
                                 const SmaliMethod& original,
                                 const SmaliMethod& modified);

// Pairs classes by name (by position when unnamed) and methods by
// signature; every method with injected instructions becomes a site.
InjectionManifest manifest_from_diff(std::string app_id,
                                     std::span<const SmaliClass> original,
                                     std::span<const SmaliClass> modified);

std::string method_ref(const SmaliClass& cls, const SmaliMethod& m);

nlohmann::json to_json(const InjectionManifest& manifest);
InjectionManifest manifest_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CccReport& report);

}  // namespace nopvis
