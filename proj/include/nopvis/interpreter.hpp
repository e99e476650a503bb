#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nopvis/smali.hpp"

namespace nopvis {

inline constexpr std::size_t kDefaultStepBudget = 1'000'000;

// The method uses something outside the int-only subset; the oracle abstains.
class UnsupportedMethod : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonTermination : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Runtime fault inside a supported method: uninitialized register read,
// division by zero, or falling off the end of the code.
class ExecFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Frame state of a running method. Arguments occupy the last `ins`
// registers of the frame, as on Dalvik.
struct ExecState {
  std::vector<std::optional<std::int32_t>> registers;
  std::size_t pc = 0;
  std::size_t steps = 0;
  std::size_t step_budget = kDefaultStepBudget;
};

// Static int methods built from const, move, int arithmetic, if-*, goto,
// nop and return. Returns the empty string when supported.
std::string unsupported_reason(const SmaliMethod& method);

std::int32_t eval_method(const SmaliMethod& method,
                         std::span<const std::int32_t> args,
                         std::size_t step_budget = kDefaultStepBudget);

enum class Verdict { Equal, NotEqual, Abstain };

std::string_view to_string(Verdict v);

struct EquivalenceResult {
  Verdict verdict = Verdict::Abstain;
  std::size_t cases = 0;
  // Populated for NotEqual.
  std::vector<std::int32_t> witness;
  std::string original_outcome;
  std::string modified_outcome;
  // Populated for Abstain.
  std::string reason;
};

// Compares outcomes (return value or fault kind) over integer edge cases
// {0, 1, -1, MIN, MAX} plus `trials` seeded random argument tuples.
EquivalenceResult check_equivalence(const SmaliMethod& original,
                                    const SmaliMethod& modified,
                                    std::size_t trials = 1000,
                                    std::uint64_t seed = 0);

}  // namespace nopvis
