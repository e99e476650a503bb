#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nopvis/opcodes.hpp"

namespace nopvis {

enum class LineKind { Comment, Directive, Label, Instruction, Blank };

std::string_view to_string(LineKind kind);

// One physical line of Smali text. `raw` keeps the original text minus
// trailing whitespace; the remaining fields are derived from it.
struct SmaliLine {
  std::string raw;
  LineKind kind = LineKind::Blank;
  std::string opcode;
  std::vector<std::string> operands;
  std::vector<std::string> registers_read;
  std::vector<std::string> registers_written;
  std::string trailing_comment;
  std::size_t source_line = 0;  // 1-based; 0 for synthesized lines

  bool is_instruction() const { return kind == LineKind::Instruction; }
  // Label name including the leading ':' (Label lines only).
  std::string_view label() const;
  // Branch target label of an if-*/goto instruction, if any.
  std::optional<std::string_view> branch_target() const;
  const OpcodeInfo* info() const { return find_opcode(opcode); }

  // Structural equality; ignores source_line.
  friend bool operator==(const SmaliLine& a, const SmaliLine& b);
};

// Parse a single line outside of any payload/annotation block.
SmaliLine parse_line(std::string_view text, std::size_t source_line = 0);

SmaliLine make_instruction(std::string_view opcode,
                           const std::vector<std::string>& operands,
                           std::string_view indent = "    ");
SmaliLine make_label(std::string_view name, std::string_view indent = "    ");

struct RegisterRef {
  bool parameter = false;  // p-named
  int index = 0;

  std::string name() const;
  friend bool operator==(const RegisterRef&, const RegisterRef&) = default;
};

std::optional<RegisterRef> parse_register(std::string_view token);

enum class RegisterDirective { None, Registers, Locals };

struct SmaliMethod {
  std::string name;
  std::string descriptor;
  std::vector<std::string> access_flags;
  // From the `.method` header through `.end method`, inclusive.
  std::vector<SmaliLine> lines;
  std::size_t source_line = 0;

  // "name(descriptor)" as used in invoke operands.
  std::string signature() const;
  bool is_static() const;
  bool has_body() const { return instruction_count() > 0; }
  std::size_t instruction_count() const;

  RegisterDirective register_directive() const;
  // Total frame size: the `.registers` value, or `.locals` plus ins.
  int registers_declared() const;
  int ins_count() const;
  int locals_count() const;
  // Parameter type descriptors, excluding the implicit `this`.
  std::vector<std::string> parameter_types() const;
  std::string return_type() const;

  // Map a v/p register name onto its frame index.
  std::optional<int> frame_index(std::string_view reg) const;
  // Frame indices occupied by the incoming arguments.
  std::vector<int> parameter_frame_indices() const;

  friend bool operator==(const SmaliMethod& a, const SmaliMethod& b);
};

struct SmaliClass {
  std::string class_name;
  std::string super_name;
  std::string source_path;  // relative path inside the app tree
  std::vector<SmaliLine> preamble;
  std::vector<SmaliMethod> methods;
  // Lines following methods[i] up to the next method or end of file.
  std::vector<std::vector<SmaliLine>> after_method;

  std::size_t line_count() const;

  friend bool operator==(const SmaliClass& a, const SmaliClass& b);
};

class SmaliParseError : public std::runtime_error {
 public:
  SmaliParseError(std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Line-oriented, tolerant parse. Throws SmaliParseError on structural
// problems (unterminated or nested `.method`).
SmaliClass parse_class(std::string_view text);
// Problems that do not prevent parsing, e.g. "missing .class directive".
std::vector<std::string> validate_class(const SmaliClass& cls);
std::string serialize_class(const SmaliClass& cls);

struct OpcodeSequence {
  std::string app_id;
  std::vector<OpcodeId> ids;
  std::size_t max_len = 8192;
};

inline constexpr std::size_t kDefaultMaxLen = 8192;

// Position of one method's opcodes inside the concatenated sequence.
struct MethodSpan {
  std::size_t class_index = 0;
  std::size_t method_index = 0;
  std::size_t offset = 0;
  std::size_t length = 0;
};

// Methods in extraction order (class name, then file order); methods
// without instructions are omitted. Offsets ignore truncation.
std::vector<MethodSpan> method_layout(std::span<const SmaliClass> app);

OpcodeSequence extract_opcode_sequence(std::span<const SmaliClass> app,
                                       const OpcodeTable& table,
                                       std::size_t max_len = kDefaultMaxLen,
                                       std::string app_id = {});

// One app is one directory tree of .smali files.
struct SmaliApp {
  std::string id;
  std::vector<SmaliClass> classes;
};

SmaliApp load_app(const std::filesystem::path& dir);
void write_app(const SmaliApp& app, const std::filesystem::path& dir);

}  // namespace nopvis
