#include "nopvis/injector.hpp"

#include <algorithm>
#include <random>
#include <set>

namespace nopvis {
namespace {

// Highest register every injected instruction can address (const, 23x
// binops and if-eqz all take 8-bit register fields).
constexpr int kInjectedRegisterCap = 255;
// Renumbering original code must keep 4-bit register fields (v0..v15) valid.
constexpr int kShiftedFrameCap = 16;

std::string_view indent_of(std::string_view raw) {
  std::size_t i = 0;
  while (i < raw.size() && (raw[i] == ' ' || raw[i] == '\t')) ++i;
  return raw.substr(0, i);
}

std::string body_indent(const SmaliMethod& m) {
  for (const auto& l : m.lines) {
    if (l.is_instruction()) return std::string(indent_of(l.raw));
  }
  return "    ";
}

std::string reg(int frame_index) { return "v" + std::to_string(frame_index); }

std::string hex(std::int32_t v) {
  char buf[32];
  if (v < 0) {
    std::snprintf(buf, sizeof buf, "-0x%X", static_cast<unsigned>(-static_cast<std::int64_t>(v)));
  } else {
    std::snprintf(buf, sizeof buf, "0x%X", static_cast<unsigned>(v));
  }
  return buf;
}

// Index of the first Instruction or Label line (entry placement point).
std::optional<std::size_t> entry_position(const SmaliMethod& m) {
  for (std::size_t i = 0; i < m.lines.size(); ++i) {
    auto k = m.lines[i].kind;
    if (k == LineKind::Instruction || k == LineKind::Label) return i;
  }
  return std::nullopt;
}

std::string fresh_label(const SmaliMethod& m, std::string_view base) {
  std::set<std::string, std::less<>> taken;
  for (const auto& l : m.lines) {
    if (l.kind == LineKind::Label) taken.emplace(l.label());
  }
  std::string name = ":" + std::string(base);
  for (int n = 1; taken.count(name); ++n)
    name = ":" + std::string(base) + "_" + std::to_string(n);
  return name;
}

bool is_int_type(const std::string& t) {
  return t == "I" || t == "S" || t == "B" || t == "C" || t == "Z";
}

std::string rewrite_register_token(std::string_view token, int threshold,
                                   int delta) {
  auto r = parse_register(token);
  if (!r || r->parameter || r->index < threshold) return std::string(token);
  return reg(r->index + delta);
}

std::string rewrite_operand(const std::string& op, int threshold, int delta) {
  if (op.empty() || op.front() != '{')
    return rewrite_register_token(op, threshold, delta);
  std::string_view inner(op);
  inner.remove_prefix(1);
  if (!inner.empty() && inner.back() == '}') inner.remove_suffix(1);
  std::string out = "{";
  auto range = inner.find("..");
  auto trimmed = [](std::string_view s) {
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
    return s;
  };
  if (range != std::string_view::npos) {
    out += rewrite_register_token(trimmed(inner.substr(0, range)), threshold, delta);
    out += " .. ";
    out += rewrite_register_token(trimmed(inner.substr(range + 2)), threshold, delta);
  } else {
    std::size_t start = 0;
    bool first = true;
    while (start <= inner.size()) {
      auto comma = inner.find(',', start);
      auto item = trimmed(inner.substr(
          start, comma == std::string_view::npos ? std::string_view::npos
                                                 : comma - start));
      if (!item.empty()) {
        if (!first) out += ", ";
        out += rewrite_register_token(item, threshold, delta);
        first = false;
      }
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
  }
  out += "}";
  return out;
}

SmaliLine rewrite_instruction(const SmaliLine& line, int threshold,
                              int delta) {
  std::vector<std::string> ops;
  ops.reserve(line.operands.size());
  for (const auto& op : line.operands)
    ops.push_back(rewrite_operand(op, threshold, delta));
  if (ops == line.operands) return line;
  auto out = make_instruction(line.opcode, ops, indent_of(line.raw));
  if (!line.trailing_comment.empty()) {
    out = parse_line(out.raw + "  " + line.trailing_comment);
  }
  out.source_line = line.source_line;
  return out;
}

SmaliLine rewrite_directive(const SmaliLine& line, int threshold, int delta) {
  std::string_view raw = line.raw;
  auto indent = indent_of(raw);
  std::string_view body = raw.substr(indent.size());
  auto replace_count = [&](std::string_view name) -> std::optional<SmaliLine> {
    if (body.substr(0, name.size()) != name) return std::nullopt;
    std::string rest(body.substr(name.size()));
    std::size_t i = 0;
    while (i < rest.size() && rest[i] == ' ') ++i;
    std::size_t j = i;
    while (j < rest.size() && rest[j] != ' ' && rest[j] != '\t' && rest[j] != '#') ++j;
    if (i == j) return std::nullopt;
    int n = std::stoi(rest.substr(i, j - i), nullptr, 0);
    auto out = parse_line(std::string(indent) + std::string(name) + " " +
                          std::to_string(n + delta) + rest.substr(j));
    out.source_line = line.source_line;
    return out;
  };
  if (auto r = replace_count(".registers")) return *r;
  if (auto r = replace_count(".locals")) return *r;

  // Debug-info directives naming a register as their first operand.
  for (std::string_view name : {".local ", ".end local ", ".restart local "}) {
    if (body.substr(0, name.size()) != name) continue;
    std::string rest(body.substr(name.size()));
    std::size_t end = rest.find_first_of(", \t#");
    std::string token = rest.substr(0, end);
    std::string replaced = rewrite_register_token(token, threshold, delta);
    if (replaced == token) return line;
    auto out = parse_line(std::string(indent) + std::string(name) + replaced +
                          (end == std::string::npos ? "" : rest.substr(end)));
    out.source_line = line.source_line;
    return out;
  }
  return line;
}

InjectionSite make_site(std::string host_ref, const SmaliMethod& host,
                        const SmaliMethod& modified,
                        std::vector<std::size_t> spans, int registers_added) {
  InjectionSite site;
  site.host_method = std::move(host_ref);
  site.original_instruction_count = host.instruction_count();
  std::vector<SmaliLine> snippet;
  for (auto i : spans) {
    const auto& l = modified.lines[i];
    snippet.push_back(l);
    if (!l.is_instruction()) continue;
    ++site.injected_instruction_count;
    if (l.opcode == "nop") site.contains_explicit_nop = true;
  }
  site.complexity = classify_complexity(snippet, {host.signature()});
  site.connection = classify_connection(snippet, host);
  site.injected_line_spans = std::move(spans);
  site.registers_added = registers_added;
  return site;
}

struct ScratchPlan {
  SmaliMethod host;  // original, renumbered if registers were added
  std::vector<int> scratch;
  int added = 0;
};

std::variant<ScratchPlan, InjectionSkip> plan_scratch(const SmaliMethod& m,
                                                      std::size_t needed) {
  if (!m.has_body()) return InjectionSkip{"no method body"};
  auto dead = dead_locals_at_entry(m);
  ScratchPlan plan;
  for (std::size_t i = 0; i < dead.size() && plan.scratch.size() < needed; ++i)
    plan.scratch.push_back(dead[i]);
  int missing = static_cast<int>(needed - plan.scratch.size());
  int locals = m.locals_count();
  if (missing > 0) {
    if (m.register_directive() == RegisterDirective::None)
      return InjectionSkip{"no .registers/.locals directive"};
    if (m.registers_declared() + missing > kShiftedFrameCap)
      return InjectionSkip{"register budget exhausted: " +
                           std::to_string(m.registers_declared()) + " + " +
                           std::to_string(missing) +
                           " exceeds the 4-bit register cap"};
    for (int i = 0; i < missing; ++i) plan.scratch.push_back(locals + i);
    plan.host = shift_registers(m, locals, missing);
    plan.added = missing;
  } else {
    plan.host = m;
  }
  for (int r : plan.scratch) {
    if (r > kInjectedRegisterCap)
      return InjectionSkip{"scratch register above v255"};
  }
  return plan;
}

void check_payload(std::span<const std::string> payload) {
  if (payload.empty())
    throw std::invalid_argument("payload must contain at least one opcode");
  for (const auto& x : payload) {
    if (!is_injectable(x))
      throw std::invalid_argument("opcode '" + x +
                                  "' is not in the injectable whitelist");
  }
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::SimpleNop:
      return "nop";
    case AttackKind::Sio:
      return "sio";
    case AttackKind::Imi:
      return "imi";
  }
  return "?";
}

AttackKind attack_kind_from_string(std::string_view s) {
  if (s == "nop") return AttackKind::SimpleNop;
  if (s == "sio") return AttackKind::Sio;
  if (s == "imi") return AttackKind::Imi;
  throw std::invalid_argument("unknown attack variant '" + std::string(s) +
                              "' (expected nop, sio or imi)");
}

void AttackVariant::validate() const {
  if (kind == AttackKind::SimpleNop) {
    if (nop_count < 1) throw std::invalid_argument("nop_count must be >= 1");
    return;
  }
  check_payload(payload);
}

std::vector<int> dead_locals_at_entry(const SmaliMethod& method) {
  const int locals = method.locals_count();
  std::set<int> read;
  std::set<int> written;
  std::vector<int> dead;
  for (const auto& line : method.lines) {
    if (line.kind == LineKind::Label) break;
    if (!line.is_instruction()) continue;
    const OpcodeInfo* op = line.info();
    for (const auto& r : line.registers_read) {
      if (auto idx = method.frame_index(r); idx && !written.count(*idx))
        read.insert(*idx);
    }
    for (const auto& r : line.registers_written) {
      auto idx = method.frame_index(r);
      if (!idx) continue;
      if (!read.count(*idx) && !written.count(*idx) && *idx < locals)
        dead.push_back(*idx);
      written.insert(*idx);
    }
    if (op == nullptr || op->ends_flow() || op->is_conditional_branch() ||
        op->is_switch())
      break;
  }
  std::sort(dead.begin(), dead.end());
  return dead;
}

SmaliMethod shift_registers(const SmaliMethod& method, int threshold,
                            int delta) {
  SmaliMethod out = method;
  if (delta == 0) return out;
  for (auto& line : out.lines) {
    if (line.is_instruction()) {
      line = rewrite_instruction(line, threshold, delta);
    } else if (line.kind == LineKind::Directive) {
      line = rewrite_directive(line, threshold, delta);
    }
  }
  return out;
}

InjectOutcome inject_simple_nop(const SmaliMethod& method, int count,
                                std::string host_ref) {
  if (count < 1) throw std::invalid_argument("nop count must be >= 1");
  std::vector<std::size_t> instr;
  for (std::size_t i = 0; i < method.lines.size(); ++i) {
    if (method.lines[i].is_instruction()) instr.push_back(i);
  }
  if (instr.empty()) return InjectionSkip{"no method body"};

  const auto& first = method.lines[instr[0]];
  const OpcodeInfo* op = first.info();
  bool before_first = op == nullptr || op->ends_flow() || op->is_switch();
  if (instr.size() > 1) {
    const OpcodeInfo* next = method.lines[instr[1]].info();
    if (next != nullptr && next->is_move_result()) before_first = true;
  }
  std::size_t pos = before_first ? instr[0] : instr[0] + 1;

  SmaliMethod out = method;
  auto indent = body_indent(method);
  std::vector<SmaliLine> nops(static_cast<std::size_t>(count),
                              make_instruction("nop", {}, indent));
  out.lines.insert(out.lines.begin() + static_cast<std::ptrdiff_t>(pos),
                   nops.begin(), nops.end());
  std::vector<std::size_t> spans;
  for (int i = 0; i < count; ++i) spans.push_back(pos + static_cast<std::size_t>(i));
  auto site = make_site(std::move(host_ref), method, out, std::move(spans), 0);
  return Injection{std::move(out), std::move(site)};
}

InjectOutcome inject_sio(const SmaliMethod& method,
                         std::span<const std::string> payload,
                         SioConstants constants, std::string host_ref) {
  check_payload(payload);
  auto planned = plan_scratch(method, 2);
  if (auto* skip = std::get_if<InjectionSkip>(&planned)) return *skip;
  auto& plan = std::get<ScratchPlan>(planned);
  auto pos = entry_position(plan.host);
  if (!pos) return InjectionSkip{"no method body"};

  auto indent = body_indent(plan.host);
  auto a = reg(plan.scratch[0]);
  auto b = reg(plan.scratch[1]);
  std::vector<SmaliLine> block;
  block.push_back(make_instruction("const", {a, hex(constants.first)}, indent));
  block.push_back(make_instruction("const", {b, hex(constants.second)}, indent));
  for (const auto& x : payload) block.push_back(make_instruction(x, {a, a, b}, indent));

  SmaliMethod out = plan.host;
  out.lines.insert(out.lines.begin() + static_cast<std::ptrdiff_t>(*pos),
                   block.begin(), block.end());
  std::vector<std::size_t> spans;
  for (std::size_t i = 0; i < block.size(); ++i) spans.push_back(*pos + i);
  auto site = make_site(std::move(host_ref), plan.host, out, std::move(spans),
                        plan.added);
  return Injection{std::move(out), std::move(site)};
}

InjectOutcome inject_imi(const SmaliMethod& method,
                         std::span<const std::string> payload,
                         std::string host_ref) {
  check_payload(payload);
  auto planned = plan_scratch(method, 1);
  if (auto* skip = std::get_if<InjectionSkip>(&planned)) return *skip;
  auto& plan = std::get<ScratchPlan>(planned);
  auto pos = entry_position(plan.host);
  if (!pos) return InjectionSkip{"no method body"};

  // Read from int parameters where available, as the payload's sources.
  std::vector<int> sources;
  {
    int index = plan.host.locals_count() + (plan.host.is_static() ? 0 : 1);
    for (const auto& t : plan.host.parameter_types()) {
      if (is_int_type(t) && sources.size() < 2) sources.push_back(index);
      index += (t == "J" || t == "D") ? 2 : 1;
    }
  }
  int flag = plan.scratch[0];
  while (sources.size() < 2) sources.push_back(flag);

  auto indent = body_indent(plan.host);
  auto label = fresh_label(plan.host, "impossible");
  std::vector<SmaliLine> block;
  block.push_back(make_instruction("const", {reg(flag), "0x1"}, indent));
  block.push_back(make_instruction("if-eqz", {reg(flag), label}, indent));
  for (const auto& x : payload) {
    block.push_back(make_instruction(
        x, {reg(flag), reg(sources[0]), reg(sources[1])}, indent));
  }
  block.push_back(make_label(label, indent));

  SmaliMethod out = plan.host;
  out.lines.insert(out.lines.begin() + static_cast<std::ptrdiff_t>(*pos),
                   block.begin(), block.end());
  std::vector<std::size_t> spans;
  for (std::size_t i = 0; i < block.size(); ++i) spans.push_back(*pos + i);
  auto site = make_site(std::move(host_ref), plan.host, out, std::move(spans),
                        plan.added);
  return Injection{std::move(out), std::move(site)};
}

std::optional<std::string> injection_blocker(const SmaliMethod& method,
                                             AttackKind kind) {
  static const std::vector<std::string> probe = {"add-int", "add-int"};
  InjectOutcome r = kind == AttackKind::SimpleNop ? inject_simple_nop(method, 1)
                    : kind == AttackKind::Sio     ? inject_sio(method, probe)
                                                  : inject_imi(method, probe);
  if (auto* skip = std::get_if<InjectionSkip>(&r)) return skip->reason;
  return std::nullopt;
}

AttackResult apply_attack(std::span<const SmaliClass> app,
                          const InjectionPlan& plan, std::string app_id) {
  plan.variant.validate();
  AttackResult result;
  result.app.assign(app.begin(), app.end());
  result.manifest.app_id = std::move(app_id);

  std::vector<std::vector<std::optional<std::size_t>>> offsets(app.size());
  for (std::size_t c = 0; c < app.size(); ++c)
    offsets[c].resize(app[c].methods.size());
  for (const auto& span : method_layout(app))
    offsets[span.class_index][span.method_index] = span.offset;

  std::size_t counter = 0;
  for (std::size_t c = 0; c < app.size(); ++c) {
    auto& cls = result.app[c];
    for (std::size_t mi = 0; mi < cls.methods.size(); ++mi) {
      const auto& method = app[c].methods[mi];
      auto ref = method_ref(cls, method);
      auto offset = offsets[c][mi];
      if (!offset) {
        result.skips.push_back({ref, "no method body"});
        continue;
      }
      if (*offset >= plan.selector.horizon) {
        result.skips.push_back({ref, "beyond the opcode horizon"});
        continue;
      }
      if (plan.selector.max_registers &&
          method.registers_declared() > *plan.selector.max_registers) {
        result.skips.push_back({ref, "more registers than the selector allows"});
        continue;
      }
      InjectOutcome outcome;
      switch (plan.variant.kind) {
        case AttackKind::SimpleNop:
          outcome = inject_simple_nop(method, plan.variant.nop_count, ref);
          break;
        case AttackKind::Sio: {
          SioConstants k;
          if (plan.sio_constants) {
            k = *plan.sio_constants;
          } else {
            auto h = mix(plan.seed ^ mix(counter));
            k.first = static_cast<std::int32_t>(1 + h % 15);
            k.second = static_cast<std::int32_t>(1 + (h >> 8) % 15);
          }
          outcome = inject_sio(method, plan.variant.payload, k, ref);
          break;
        }
        case AttackKind::Imi:
          outcome = inject_imi(method, plan.variant.payload, ref);
          break;
      }
      ++counter;
      if (auto* skip = std::get_if<InjectionSkip>(&outcome)) {
        result.skips.push_back({ref, skip->reason});
        continue;
      }
      auto& inj = std::get<Injection>(outcome);
      cls.methods[mi] = std::move(inj.method);
      result.manifest.sites.push_back(std::move(inj.site));
    }
  }
  if (result.manifest.sites.empty()) throw EmptyManifestError();
  return result;
}

SmaliMethod strip_injection(const SmaliMethod& modified,
                            const InjectionSite& site) {
  SmaliMethod out = modified;
  auto spans = site.injected_line_spans;
  std::sort(spans.rbegin(), spans.rend());
  for (auto i : spans) {
    if (i >= out.lines.size())
      throw std::out_of_range("injection span outside the method");
    out.lines.erase(out.lines.begin() + static_cast<std::ptrdiff_t>(i));
  }
  if (site.registers_added > 0)
    out = shift_registers(out, out.locals_count(), -site.registers_added);
  return out;
}

nlohmann::json to_json(const SkipRecord& skip) {
  return {{"method", skip.method}, {"reason", skip.reason}};
}

}  // namespace nopvis
