#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "nopvis/detector.hpp"
#include "nopvis/injector.hpp"

namespace nopvis {

// Marks an x slot in the template before an opcode is chosen.
inline constexpr OpcodeId kPlaceholderSentinel = kUnknownOpcodeId;

struct TemplateSite {
  std::size_t class_index = 0;
  std::size_t method_index = 0;
  std::string method;
  // Start of the spliced pattern in the template sequence.
  std::size_t offset = 0;
  // Indices into AttackTemplate::placeholder_positions.
  std::vector<std::size_t> placeholders;
};

struct AttackTemplate {
  AttackKind pattern = AttackKind::Sio;
  std::size_t payload_length = 2;
  OpcodeSequence base;  // sentinel at every placeholder
  std::vector<std::size_t> placeholder_positions;
  std::vector<TemplateSite> sites;
  std::vector<SkipRecord> skipped;
};

class EmptyTemplateError : public std::runtime_error {
 public:
  EmptyTemplateError() : std::runtime_error("no injectable methods") {}
};

// Splices `const, const, x...` (SIO) or `const, if-eqz, x...` (IMI) at the
// entry of every injectable method whose pattern still fits in max_len.
AttackTemplate build_attack_template(std::span<const SmaliClass> app,
                                     AttackKind pattern,
                                     const OpcodeTable& table,
                                     std::size_t max_len = kDefaultMaxLen,
                                     std::size_t payload_length = 2,
                                     std::string app_id = {});

std::vector<OpcodeId> substitute(const AttackTemplate& tmpl,
                                 std::span<const OpcodeId> assignment);

struct TraceStep {
  std::size_t placeholder = 0;
  std::size_t position = 0;
  OpcodeId id = 0;
  double score = 0;   // p_malware after the step
  double margin = 0;  // logit gap after the step
};

struct OptimizationTrace {
  double initial_score = 0;
  double final_score = 0;
  std::vector<TraceStep> steps;
  std::size_t sweeps = 0;
  bool evaded = false;
};

struct OptimizationResult {
  std::vector<OpcodeId> assignment;
  OptimizationTrace trace;
};

// Greedy coordinate descent over the placeholders in sequence order.
// Starts from candidates[0] everywhere; a move is kept only if it lowers
// p_malware, and ties go to the lower id. Stops once the score falls below
// `threshold` or after `budget` sweeps.
OptimizationResult optimize_placeholders(const DetectorModel& model,
                                         const AttackTemplate& tmpl,
                                         std::span<const OpcodeId> candidates,
                                         double threshold = 0.5,
                                         std::size_t budget = 2);

struct Realization {
  std::vector<SmaliClass> app;
  InjectionManifest manifest;
  // Template sites the injector refused; excluded from consistency checks.
  std::vector<std::size_t> unrealized;
  std::vector<SkipRecord> skips;
};

Realization realize(std::span<const SmaliClass> app, const AttackTemplate& tmpl,
                    std::span<const OpcodeId> assignment,
                    const OpcodeTable& table, SioConstants constants = {},
                    std::string app_id = {});

struct ConsistencyReport {
  bool consistent = false;
  std::size_t compared = 0;
  std::optional<std::size_t> first_mismatch;
};

// Re-extracts the realized app and compares it with the substituted
// template restricted to the realized sites.
ConsistencyReport check_consistency(std::span<const SmaliClass> original,
                                    const AttackTemplate& tmpl,
                                    std::span<const OpcodeId> assignment,
                                    const Realization& realized,
                                    const OpcodeTable& table);

nlohmann::json to_json(const OptimizationTrace& trace);
// One JSON object per accepted step.
std::string trace_jsonl(const OptimizationTrace& trace);

}  // namespace nopvis
