#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nopvis {

using OpcodeId = std::uint32_t;

inline constexpr OpcodeId kUnknownOpcodeId = 0;
inline constexpr OpcodeId kPaddingOpcodeId = 1;

// Static description of one Dalvik mnemonic.
//
// `registers` encodes the role of each register operand, positionally:
//   w  written           W  written, wide (register and register+1)
//   r  read              R  read, wide
//   x  read and written  X  read and written, wide
//   v  variadic register list in braces, all read
struct OpcodeInfo {
  std::string_view mnemonic;
  std::uint8_t dalvik_value;
  std::string_view registers;

  bool is_conditional_branch() const;
  bool is_goto() const;
  bool is_switch() const;
  bool is_return() const;
  bool is_throw() const;
  bool is_invoke() const;
  bool is_move_result() const;
  // True when execution never falls through to the next instruction.
  bool ends_flow() const;
};

// Lookup by mnemonic; nullptr for anything outside the Dalvik instruction set.
const OpcodeInfo* find_opcode(std::string_view mnemonic);

// Every mnemonic in Dalvik opcode order.
std::span<const OpcodeInfo> all_opcodes();

// Mnemonic <-> integer id mapping consumed by the detector.
//
// Ids are the Dalvik opcode byte plus two, so id 0 (unknown) and id 1
// (inter-method padding) are never assigned to a real mnemonic.
class OpcodeTable {
 public:
  static const OpcodeTable& dalvik();

  OpcodeId id_of(std::string_view mnemonic) const;
  std::optional<std::string_view> mnemonic_of(OpcodeId id) const;
  std::size_t vocabulary_size() const { return vocabulary_size_; }

 private:
  OpcodeTable();

  std::unordered_map<std::string_view, OpcodeId> ids_;
  std::vector<std::string_view> names_;
  std::size_t vocabulary_size_ = 0;
};

// Two-register int arithmetic ops the injector may place in a payload slot.
std::span<const std::string_view> injectable_whitelist();
bool is_injectable(std::string_view mnemonic);
// Whitelist mapped through `table`, ascending by id.
std::vector<OpcodeId> injectable_ids(const OpcodeTable& table);

}  // namespace nopvis
