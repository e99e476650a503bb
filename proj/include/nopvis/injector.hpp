#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "nopvis/ccc.hpp"
#include "nopvis/smali.hpp"

namespace nopvis {

enum class AttackKind { SimpleNop, Sio, Imi };

std::string_view to_string(AttackKind kind);
AttackKind attack_kind_from_string(std::string_view s);  // "nop", "sio", "imi"

struct AttackVariant {
  AttackKind kind = AttackKind::SimpleNop;
  // Mnemonics filling the x slots (SIO/IMI); each must be whitelisted.
  std::vector<std::string> payload = {"sub-int", "xor-int"};
  int nop_count = 3;

  void validate() const;
};

struct SioConstants {
  std::int32_t first = 0x8;
  std::int32_t second = 0xA;
};

struct MethodSelector {
  // Skip methods whose frame already exceeds this many registers.
  std::optional<int> max_registers;
  // Only methods starting inside the detector's opcode horizon.
  std::size_t horizon = kDefaultMaxLen;
};

struct InjectionPlan {
  AttackVariant variant;
  MethodSelector selector;
  std::uint64_t seed = 0;
  // Fixed SIO constants; drawn per method from `seed` when unset.
  std::optional<SioConstants> sio_constants = SioConstants{};
};

struct Injection {
  SmaliMethod method;
  InjectionSite site;
};

struct InjectionSkip {
  std::string reason;
};

using InjectOutcome = std::variant<Injection, InjectionSkip>;

// Explicit `nop`s after the first instruction.
InjectOutcome inject_simple_nop(const SmaliMethod& method, int count,
                                std::string host_ref = {});

// const, const, x... at method entry, writing only scratch registers.
InjectOutcome inject_sio(const SmaliMethod& method,
                         std::span<const std::string> payload,
                         SioConstants constants = {},
                         std::string host_ref = {});

// const 0x1, if-eqz, x..., label at method entry. The guard is never taken,
// so the payload always runs; it only writes a register that is dead on entry.
InjectOutcome inject_imi(const SmaliMethod& method,
                         std::span<const std::string> payload,
                         std::string host_ref = {});

// Why `method` cannot take the given attack, or nullopt when it can.
std::optional<std::string> injection_blocker(const SmaliMethod& method,
                                             AttackKind kind);

struct SkipRecord {
  std::string method;
  std::string reason;
};

struct AttackResult {
  std::vector<SmaliClass> app;
  InjectionManifest manifest;
  std::vector<SkipRecord> skips;
};

class EmptyManifestError : public std::runtime_error {
 public:
  EmptyManifestError() : std::runtime_error("empty manifest") {}
};

// Throws EmptyManifestError when no method could be injected.
AttackResult apply_attack(std::span<const SmaliClass> app,
                          const InjectionPlan& plan, std::string app_id = {});

// Remove the recorded spans and undo any register renumbering.
SmaliMethod strip_injection(const SmaliMethod& modified,
                            const InjectionSite& site);

// Locals (frame indices) whose entry value is overwritten before it is
// read, scanning the straight-line prefix of the method. Ascending.
std::vector<int> dead_locals_at_entry(const SmaliMethod& method);

// Add `delta` to every v-register with frame index >= `threshold` and to the
// `.registers`/`.locals` count. Used to open scratch slots below the params.
SmaliMethod shift_registers(const SmaliMethod& method, int threshold,
                            int delta);

nlohmann::json to_json(const SkipRecord& skip);

}  // namespace nopvis
