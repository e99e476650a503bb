#include "nopvis/smali.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

namespace nopvis {
namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' ||
         c == '\v';
}

std::string_view rtrim(std::string_view s) {
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string_view ltrim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  return s;
}

std::string_view trim(std::string_view s) { return ltrim(rtrim(s)); }

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

// Position of a '#' that starts a comment, skipping string literals.
std::size_t comment_start(std::string_view s) {
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
    } else if (c == '"') {
      in_string = true;
    } else if (c == '#') {
      return i;
    }
  }
  return std::string_view::npos;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t start = i;
    while (i < s.size() && !is_space(s[i])) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

// Split on commas at brace depth zero, outside string literals.
std::vector<std::string> split_operands(std::string_view s) {
  std::vector<std::string> out;
  s = trim(s);
  if (s.empty()) return out;
  int depth = 0;
  bool in_string = false;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      --depth;
    } else if (c == ',' && depth == 0) {
      out.emplace_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  out.emplace_back(trim(s.substr(start)));
  return out;
}

// Register operands in textual order; brace lists and ranges expanded.
std::vector<RegisterRef> register_operands(
    const std::vector<std::string>& operands) {
  std::vector<RegisterRef> regs;
  for (const auto& op : operands) {
    std::string_view sv = op;
    if (!sv.empty() && sv.front() == '{') {
      sv.remove_prefix(1);
      if (!sv.empty() && sv.back() == '}') sv.remove_suffix(1);
      auto range = sv.find("..");
      if (range != std::string_view::npos) {
        auto lo = parse_register(trim(sv.substr(0, range)));
        auto hi = parse_register(trim(sv.substr(range + 2)));
        if (lo && hi && lo->parameter == hi->parameter) {
          for (int i = lo->index; i <= hi->index; ++i)
            regs.push_back({lo->parameter, i});
        }
        continue;
      }
      for (const auto& item : split_operands(sv)) {
        if (auto r = parse_register(item)) regs.push_back(*r);
      }
    } else if (auto r = parse_register(sv)) {
      regs.push_back(*r);
    }
  }
  return regs;
}

void sort_unique(std::vector<std::string>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

void assign_register_roles(SmaliLine& line) {
  auto regs = register_operands(line.operands);
  const OpcodeInfo* info = find_opcode(line.opcode);
  auto next = [](const RegisterRef& r) {
    return RegisterRef{r.parameter, r.index + 1}.name();
  };
  for (std::size_t i = 0; i < regs.size(); ++i) {
    char role = 'r';
    if (info != nullptr && !info->registers.empty()) {
      if (info->registers.front() == 'v') {
        role = 'r';
      } else if (i < info->registers.size()) {
        role = info->registers[i];
      }
    }
    const auto& r = regs[i];
    switch (role) {
      case 'w':
        line.registers_written.push_back(r.name());
        break;
      case 'W':
        line.registers_written.push_back(r.name());
        line.registers_written.push_back(next(r));
        break;
      case 'x':
        line.registers_read.push_back(r.name());
        line.registers_written.push_back(r.name());
        break;
      case 'X':
        line.registers_read.push_back(r.name());
        line.registers_read.push_back(next(r));
        line.registers_written.push_back(r.name());
        line.registers_written.push_back(next(r));
        break;
      case 'R':
        line.registers_read.push_back(r.name());
        line.registers_read.push_back(next(r));
        break;
      default:
        line.registers_read.push_back(r.name());
        break;
    }
  }
  sort_unique(line.registers_read);
  sort_unique(line.registers_written);
}

std::string_view directive_name(std::string_view trimmed) {
  auto tokens = split_ws(trimmed);
  return tokens.empty() ? std::string_view{} : tokens.front();
}

bool opens_block(std::string_view trimmed) {
  auto name = directive_name(trimmed);
  return name == ".annotation" || name == ".subannotation" ||
         name == ".array-data" || name == ".packed-switch" ||
         name == ".sparse-switch";
}

bool closes_block(std::string_view trimmed) {
  auto tokens = split_ws(trimmed);
  if (tokens.size() < 2 || tokens[0] != ".end") return false;
  auto what = tokens[1];
  return what == "annotation" || what == "subannotation" ||
         what == "array-data" || what == "packed-switch" ||
         what == "sparse-switch";
}

bool is_end_method(std::string_view trimmed) {
  auto tokens = split_ws(trimmed.substr(0, comment_start(trimmed)));
  return tokens.size() >= 2 && tokens[0] == ".end" && tokens[1] == "method";
}

// Parse one type descriptor at the front of `s`; returns its length.
std::size_t type_length(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size() && s[i] == '[') ++i;
  if (i >= s.size()) return i;
  if (s[i] == 'L') {
    auto semi = s.find(';', i);
    return semi == std::string_view::npos ? s.size() : semi + 1;
  }
  return i + 1;
}

void parse_method_header(SmaliMethod& m, const SmaliLine& header) {
  std::string_view body = header.raw;
  body = rtrim(body.substr(0, comment_start(body)));
  auto tokens = split_ws(body);
  if (tokens.size() < 2) return;
  auto sig = tokens.back();
  auto paren = sig.find('(');
  if (paren == std::string_view::npos) {
    m.name = std::string(sig);
  } else {
    m.name = std::string(sig.substr(0, paren));
    m.descriptor = std::string(sig.substr(paren));
  }
  for (std::size_t i = 1; i + 1 < tokens.size(); ++i)
    m.access_flags.emplace_back(tokens[i]);
}

}  // namespace

std::string_view to_string(LineKind kind) {
  switch (kind) {
    case LineKind::Comment:
      return "comment";
    case LineKind::Directive:
      return "directive";
    case LineKind::Label:
      return "label";
    case LineKind::Instruction:
      return "instruction";
    case LineKind::Blank:
      return "blank";
  }
  return "?";
}

std::string_view SmaliLine::label() const {
  if (kind != LineKind::Label) return {};
  auto t = trim(std::string_view(raw));
  return t.substr(0, std::min(t.size(), comment_start(t)));
}

std::optional<std::string_view> SmaliLine::branch_target() const {
  if (kind != LineKind::Instruction) return std::nullopt;
  const OpcodeInfo* op = info();
  if (op == nullptr || !(op->is_conditional_branch() || op->is_goto()))
    return std::nullopt;
  if (operands.empty() || !starts_with(operands.back(), ":"))
    return std::nullopt;
  return std::string_view(operands.back());
}

bool operator==(const SmaliLine& a, const SmaliLine& b) {
  return a.raw == b.raw && a.kind == b.kind;
}

SmaliLine parse_line(std::string_view text, std::size_t source_line) {
  SmaliLine line;
  line.raw = std::string(rtrim(text));
  line.source_line = source_line;
  auto t = ltrim(std::string_view(line.raw));
  if (t.empty()) {
    line.kind = LineKind::Blank;
  } else if (t.front() == '#') {
    line.kind = LineKind::Comment;
  } else if (t.front() == '.') {
    line.kind = LineKind::Directive;
  } else if (t.front() == ':') {
    line.kind = LineKind::Label;
  } else {
    line.kind = LineKind::Instruction;
    auto cpos = comment_start(t);
    if (cpos != std::string_view::npos) {
      line.trailing_comment = std::string(t.substr(cpos));
      t = rtrim(t.substr(0, cpos));
    }
    std::size_t i = 0;
    while (i < t.size() && !is_space(t[i])) ++i;
    line.opcode = std::string(t.substr(0, i));
    line.operands = split_operands(t.substr(i));
    assign_register_roles(line);
  }
  return line;
}

SmaliLine make_instruction(std::string_view opcode,
                           const std::vector<std::string>& operands,
                           std::string_view indent) {
  std::string raw(indent);
  raw += opcode;
  for (std::size_t i = 0; i < operands.size(); ++i) {
    raw += i == 0 ? " " : ", ";
    raw += operands[i];
  }
  return parse_line(raw);
}

SmaliLine make_label(std::string_view name, std::string_view indent) {
  std::string raw(indent);
  if (!starts_with(name, ":")) raw += ':';
  raw += name;
  return parse_line(raw);
}

std::string RegisterRef::name() const {
  return (parameter ? "p" : "v") + std::to_string(index);
}

std::optional<RegisterRef> parse_register(std::string_view token) {
  token = trim(token);
  if (token.size() < 2 || (token[0] != 'v' && token[0] != 'p'))
    return std::nullopt;
  int value = 0;
  for (std::size_t i = 1; i < token.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(token[i])))
      return std::nullopt;
    value = value * 10 + (token[i] - '0');
    if (value > 65535) return std::nullopt;
  }
  return RegisterRef{token[0] == 'p', value};
}

std::string SmaliMethod::signature() const { return name + descriptor; }

bool SmaliMethod::is_static() const {
  return std::find(access_flags.begin(), access_flags.end(), "static") !=
         access_flags.end();
}

std::size_t SmaliMethod::instruction_count() const {
  return static_cast<std::size_t>(
      std::count_if(lines.begin(), lines.end(),
                    [](const SmaliLine& l) { return l.is_instruction(); }));
}

namespace {

std::optional<std::pair<RegisterDirective, int>> find_register_directive(
    const SmaliMethod& m) {
  for (const auto& l : m.lines) {
    if (l.kind != LineKind::Directive) continue;
    auto t = trim(std::string_view(l.raw));
    auto tokens = split_ws(t.substr(0, comment_start(t)));
    if (tokens.size() < 2) continue;
    RegisterDirective kind;
    if (tokens[0] == ".registers") {
      kind = RegisterDirective::Registers;
    } else if (tokens[0] == ".locals") {
      kind = RegisterDirective::Locals;
    } else {
      continue;
    }
    try {
      return std::make_pair(kind,
                            std::stoi(std::string(tokens[1]), nullptr, 0));
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
  return std::nullopt;
}

}  // namespace

RegisterDirective SmaliMethod::register_directive() const {
  auto d = find_register_directive(*this);
  return d ? d->first : RegisterDirective::None;
}

int SmaliMethod::registers_declared() const {
  auto d = find_register_directive(*this);
  if (!d) return ins_count();
  return d->first == RegisterDirective::Registers ? d->second
                                                  : d->second + ins_count();
}

int SmaliMethod::ins_count() const {
  int n = is_static() ? 0 : 1;
  for (const auto& t : parameter_types()) n += (t == "J" || t == "D") ? 2 : 1;
  return n;
}

int SmaliMethod::locals_count() const {
  auto d = find_register_directive(*this);
  if (!d) return 0;
  return d->first == RegisterDirective::Locals
             ? d->second
             : std::max(0, d->second - ins_count());
}

std::vector<std::string> SmaliMethod::parameter_types() const {
  std::vector<std::string> out;
  std::string_view d = descriptor;
  auto open = d.find('(');
  auto close = d.find(')');
  if (open == std::string_view::npos || close == std::string_view::npos)
    return out;
  auto params = d.substr(open + 1, close - open - 1);
  while (!params.empty()) {
    auto n = type_length(params);
    if (n == 0) break;
    out.emplace_back(params.substr(0, n));
    params.remove_prefix(n);
  }
  return out;
}

std::string SmaliMethod::return_type() const {
  std::string_view d = descriptor;
  auto close = d.find(')');
  if (close == std::string_view::npos) return {};
  auto rest = d.substr(close + 1);
  return std::string(rest.substr(0, type_length(rest)));
}

std::optional<int> SmaliMethod::frame_index(std::string_view reg) const {
  auto r = parse_register(reg);
  if (!r) return std::nullopt;
  return r->parameter ? locals_count() + r->index : r->index;
}

std::vector<int> SmaliMethod::parameter_frame_indices() const {
  std::vector<int> out(static_cast<std::size_t>(ins_count()));
  std::iota(out.begin(), out.end(), locals_count());
  return out;
}

bool operator==(const SmaliMethod& a, const SmaliMethod& b) {
  return a.name == b.name && a.descriptor == b.descriptor &&
         a.access_flags == b.access_flags && a.lines == b.lines;
}

std::size_t SmaliClass::line_count() const {
  std::size_t n = preamble.size();
  for (const auto& m : methods) n += m.lines.size();
  for (const auto& g : after_method) n += g.size();
  return n;
}

bool operator==(const SmaliClass& a, const SmaliClass& b) {
  return a.class_name == b.class_name && a.super_name == b.super_name &&
         a.preamble == b.preamble && a.methods == b.methods &&
         a.after_method == b.after_method;
}

SmaliParseError::SmaliParseError(std::size_t line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what),
      line_(line) {}

SmaliClass parse_class(std::string_view text) {
  SmaliClass cls;
  std::optional<SmaliMethod> current;
  int block_depth = 0;
  std::size_t line_no = 0;

  auto emit = [&](SmaliLine line) {
    if (current) {
      current->lines.push_back(std::move(line));
    } else if (cls.methods.empty()) {
      cls.preamble.push_back(std::move(line));
    } else {
      cls.after_method.back().push_back(std::move(line));
    }
  };

  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto piece = text.substr(
        pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;

    auto trimmed = trim(piece);
    if (block_depth > 0) {
      SmaliLine line;
      line.raw = std::string(rtrim(piece));
      line.source_line = line_no;
      if (trimmed.empty()) {
        line.kind = LineKind::Blank;
      } else if (trimmed.front() == '#') {
        line.kind = LineKind::Comment;
      } else {
        line.kind = LineKind::Directive;
      }
      if (opens_block(trimmed)) ++block_depth;
      if (closes_block(trimmed)) --block_depth;
      emit(std::move(line));
      continue;
    }

    SmaliLine line = parse_line(piece, line_no);
    if (line.kind == LineKind::Directive) {
      auto name = directive_name(trimmed);
      if (name == ".method") {
        if (current) {
          throw SmaliParseError(current->source_line,
                                "unterminated .method '" + current->name +
                                    "' (new .method at line " +
                                    std::to_string(line_no) + ")");
        }
        current.emplace();
        current->source_line = line_no;
        parse_method_header(*current, line);
        current->lines.push_back(std::move(line));
        continue;
      }
      if (is_end_method(trimmed)) {
        if (!current) throw SmaliParseError(line_no, "stray .end method");
        current->lines.push_back(std::move(line));
        cls.methods.push_back(std::move(*current));
        cls.after_method.emplace_back();
        current.reset();
        continue;
      }
      if (!current && cls.methods.empty()) {
        auto tokens = split_ws(trimmed.substr(0, comment_start(trimmed)));
        if (name == ".class" && tokens.size() >= 2) {
          cls.class_name = std::string(tokens.back());
        } else if (name == ".super" && tokens.size() >= 2) {
          cls.super_name = std::string(tokens.back());
        }
      }
      if (opens_block(trimmed)) ++block_depth;
    }
    emit(std::move(line));
  }
  if (current) {
    throw SmaliParseError(current->source_line,
                          "unterminated .method '" + current->name + "'");
  }
  return cls;
}

std::vector<std::string> validate_class(const SmaliClass& cls) {
  std::vector<std::string> issues;
  if (cls.class_name.empty()) issues.emplace_back("missing .class directive");
  return issues;
}

std::string serialize_class(const SmaliClass& cls) {
  std::string out;
  auto append = [&out](const std::vector<SmaliLine>& lines) {
    for (const auto& l : lines) {
      out += l.raw;
      out += '\n';
    }
  };
  append(cls.preamble);
  for (std::size_t i = 0; i < cls.methods.size(); ++i) {
    append(cls.methods[i].lines);
    if (i < cls.after_method.size()) append(cls.after_method[i]);
  }
  return out;
}

std::vector<MethodSpan> method_layout(std::span<const SmaliClass> app) {
  std::vector<std::size_t> order(app.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return app[a].class_name < app[b].class_name;
                   });
  std::vector<MethodSpan> spans;
  std::size_t offset = 0;
  for (auto ci : order) {
    const auto& cls = app[ci];
    for (std::size_t mi = 0; mi < cls.methods.size(); ++mi) {
      auto n = cls.methods[mi].instruction_count();
      if (n == 0) continue;
      if (!spans.empty()) ++offset;  // padding id between methods
      spans.push_back({ci, mi, offset, n});
      offset += n;
    }
  }
  return spans;
}

OpcodeSequence extract_opcode_sequence(std::span<const SmaliClass> app,
                                       const OpcodeTable& table,
                                       std::size_t max_len,
                                       std::string app_id) {
  if (max_len == 0) throw std::invalid_argument("max_len must be >= 1");
  OpcodeSequence seq;
  seq.app_id = std::move(app_id);
  seq.max_len = max_len;
  for (const auto& span : method_layout(app)) {
    if (seq.ids.size() >= max_len) break;
    if (!seq.ids.empty()) seq.ids.push_back(kPaddingOpcodeId);
    for (const auto& line : app[span.class_index].methods[span.method_index].lines) {
      if (seq.ids.size() >= max_len) break;
      if (line.is_instruction()) seq.ids.push_back(table.id_of(line.opcode));
    }
  }
  if (seq.ids.size() > max_len) seq.ids.resize(max_len);
  return seq;
}

SmaliApp load_app(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw std::invalid_argument("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".smali")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  SmaliApp app;
  app.id = dir.filename().string();
  if (app.id.empty()) app.id = dir.parent_path().filename().string();
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    try {
      auto cls = parse_class(buf.str());
      cls.source_path = fs::relative(f, dir).generic_string();
      app.classes.push_back(std::move(cls));
    } catch (const SmaliParseError& e) {
      throw SmaliParseError(e.line(), f.string() + ": " + e.what());
    }
  }
  return app;
}

void write_app(const SmaliApp& app, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  for (std::size_t i = 0; i < app.classes.size(); ++i) {
    const auto& cls = app.classes[i];
    fs::path rel = cls.source_path;
    if (rel.empty()) {
      std::string name = cls.class_name;
      if (name.size() > 2 && name.front() == 'L' && name.back() == ';') {
        name = name.substr(1, name.size() - 2);
      } else {
        name = "class_" + std::to_string(i);
      }
      rel = name + ".smali";
    }
    auto path = dir / rel;
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << serialize_class(cls);
    if (!out) throw std::runtime_error("cannot write " + path.string());
  }
}

}  // namespace nopvis
