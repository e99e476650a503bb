#include "nopvis/interpreter.hpp"

#include <limits>
#include <random>
#include <unordered_map>

namespace nopvis {
namespace {

enum class Op {
  Nop,
  Move,
  Const,
  Return,
  Goto,
  IfCmp,
  IfZero,
  Binary,
  BinaryLit,
  Unary,
};

enum class Cmp { Eq, Ne, Lt, Ge, Gt, Le };

struct Decoded {
  Op op = Op::Nop;
  std::string arith;  // binary/unary operation name, e.g. "add", "rsub", "neg"
  Cmp cmp = Cmp::Eq;
  int dst = 0;
  int a = 0;
  int b = 0;
  std::int32_t literal = 0;
  std::size_t target = 0;
  std::string text;
};

bool starts_with(std::string_view s, std::string_view p) {
  return s.substr(0, p.size()) == p;
}

std::optional<std::int64_t> parse_literal(std::string s) {
  while (!s.empty() && (s.back() == 't' || s.back() == 's' || s.back() == 'L'))
    s.pop_back();
  if (s.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    auto v = std::stoll(s, &used, 0);
    if (used != s.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

bool int_category(const std::string& t) {
  return t == "I" || t == "S" || t == "B" || t == "C" || t == "Z";
}

std::optional<Cmp> comparison(std::string_view suffix) {
  if (suffix == "eq") return Cmp::Eq;
  if (suffix == "ne") return Cmp::Ne;
  if (suffix == "lt") return Cmp::Lt;
  if (suffix == "ge") return Cmp::Ge;
  if (suffix == "gt") return Cmp::Gt;
  if (suffix == "le") return Cmp::Le;
  return std::nullopt;
}

bool is_binary_name(std::string_view s) {
  for (auto n : {"add", "sub", "mul", "div", "rem", "and", "or", "xor", "shl",
                 "shr", "ushr"}) {
    if (s == n) return true;
  }
  return false;
}

struct Program {
  std::vector<Decoded> code;
  int frame = 0;
  int locals = 0;
  int ins = 0;
};

Program decode(const SmaliMethod& m) {
  if (!m.is_static()) throw UnsupportedMethod("instance method");
  for (const auto& t : m.parameter_types()) {
    if (!int_category(t)) throw UnsupportedMethod("non-int parameter " + t);
  }
  if (!int_category(m.return_type()))
    throw UnsupportedMethod("non-int return type '" + m.return_type() + "'");
  if (m.register_directive() == RegisterDirective::None)
    throw UnsupportedMethod("no register directive");

  Program p;
  p.frame = m.registers_declared();
  p.locals = m.locals_count();
  p.ins = m.ins_count();

  std::unordered_map<std::string, std::size_t> labels;
  for (const auto& line : m.lines) {
    if (line.kind == LineKind::Label) {
      labels[std::string(line.label())] = p.code.size();
    } else if (line.is_instruction()) {
      p.code.push_back({});
    }
  }
  p.code.clear();

  auto regs = [&](const SmaliLine& line, std::size_t idx) {
    if (idx >= line.operands.size())
      throw UnsupportedMethod("missing operand in '" + line.raw + "'");
    auto r = m.frame_index(line.operands[idx]);
    if (!r || *r >= p.frame)
      throw UnsupportedMethod("bad register operand in '" + line.raw + "'");
    return *r;
  };
  auto literal = [&](const SmaliLine& line, std::size_t idx) {
    if (idx >= line.operands.size())
      throw UnsupportedMethod("missing literal in '" + line.raw + "'");
    auto v = parse_literal(line.operands[idx]);
    if (!v) throw UnsupportedMethod("bad literal in '" + line.raw + "'");
    return static_cast<std::int32_t>(static_cast<std::uint32_t>(*v));
  };
  auto target = [&](const SmaliLine& line) {
    auto t = line.operands.empty() ? std::string{} : line.operands.back();
    auto it = labels.find(t);
    if (it == labels.end())
      throw UnsupportedMethod("unknown label in '" + line.raw + "'");
    return it->second;
  };

  for (const auto& line : m.lines) {
    if (!line.is_instruction()) continue;
    Decoded d;
    d.text = line.raw;
    std::string_view op = line.opcode;
    if (op == "nop") {
      d.op = Op::Nop;
    } else if (op == "move" || op == "move/from16" || op == "move/16") {
      d.op = Op::Move;
      d.dst = regs(line, 0);
      d.a = regs(line, 1);
    } else if (op == "const/4" || op == "const/16" || op == "const" ||
               op == "const/high16") {
      d.op = Op::Const;
      d.dst = regs(line, 0);
      d.literal = literal(line, 1);
    } else if (op == "return") {
      d.op = Op::Return;
      d.a = regs(line, 0);
    } else if (starts_with(op, "goto")) {
      d.op = Op::Goto;
      d.target = target(line);
    } else if (starts_with(op, "if-")) {
      auto suffix = op.substr(3);
      bool zero = !suffix.empty() && suffix.back() == 'z';
      auto cmp = comparison(zero ? suffix.substr(0, suffix.size() - 1) : suffix);
      if (!cmp) throw UnsupportedMethod("opcode " + line.opcode);
      d.cmp = *cmp;
      d.a = regs(line, 0);
      if (zero) {
        d.op = Op::IfZero;
        if (line.operands.size() != 2)
          throw UnsupportedMethod("malformed '" + line.raw + "'");
      } else {
        d.op = Op::IfCmp;
        if (line.operands.size() != 3)
          throw UnsupportedMethod("malformed '" + line.raw + "'");
        d.b = regs(line, 1);
      }
      d.target = target(line);
    } else if (op == "neg-int" || op == "not-int" || op == "int-to-byte" ||
               op == "int-to-char" || op == "int-to-short") {
      d.op = Op::Unary;
      d.arith = std::string(op);
      d.dst = regs(line, 0);
      d.a = regs(line, 1);
    } else if (op == "rsub-int" || op == "rsub-int/lit8") {
      d.op = Op::BinaryLit;
      d.arith = "rsub";
      d.dst = regs(line, 0);
      d.a = regs(line, 1);
      d.literal = literal(line, 2);
    } else {
      auto dash = op.find("-int");
      auto name = op.substr(0, dash);
      auto rest = dash == std::string_view::npos ? std::string_view{}
                                                 : op.substr(dash + 4);
      if (dash == std::string_view::npos || !is_binary_name(name))
        throw UnsupportedMethod("opcode " + line.opcode);
      d.arith = std::string(name);
      d.dst = regs(line, 0);
      if (rest.empty()) {
        d.op = Op::Binary;
        d.a = regs(line, 1);
        d.b = regs(line, 2);
      } else if (rest == "/2addr") {
        d.op = Op::Binary;
        d.a = d.dst;
        d.b = regs(line, 1);
      } else if (rest == "/lit8" || rest == "/lit16") {
        d.op = Op::BinaryLit;
        d.a = regs(line, 1);
        d.literal = literal(line, 2);
      } else {
        throw UnsupportedMethod("opcode " + line.opcode);
      }
    }
    p.code.push_back(std::move(d));
  }
  if (p.code.empty()) throw UnsupportedMethod("no instructions");
  return p;
}

std::int32_t arith(const std::string& name, std::int32_t x, std::int32_t y) {
  auto ux = static_cast<std::uint32_t>(x);
  auto uy = static_cast<std::uint32_t>(y);
  if (name == "add") return static_cast<std::int32_t>(ux + uy);
  if (name == "sub") return static_cast<std::int32_t>(ux - uy);
  if (name == "rsub") return static_cast<std::int32_t>(uy - ux);
  if (name == "mul") return static_cast<std::int32_t>(ux * uy);
  if (name == "and") return x & y;
  if (name == "or") return x | y;
  if (name == "xor") return x ^ y;
  if (name == "shl") return static_cast<std::int32_t>(ux << (uy & 31));
  if (name == "shr") return x >> (uy & 31);
  if (name == "ushr") return static_cast<std::int32_t>(ux >> (uy & 31));
  if (name == "div" || name == "rem") {
    if (y == 0) throw ExecFault("ArithmeticException: divide by zero");
    if (x == std::numeric_limits<std::int32_t>::min() && y == -1)
      return name == "div" ? x : 0;
    return name == "div" ? x / y : x % y;
  }
  throw UnsupportedMethod("arithmetic " + name);
}

bool compare(Cmp c, std::int32_t x, std::int32_t y) {
  switch (c) {
    case Cmp::Eq:
      return x == y;
    case Cmp::Ne:
      return x != y;
    case Cmp::Lt:
      return x < y;
    case Cmp::Ge:
      return x >= y;
    case Cmp::Gt:
      return x > y;
    case Cmp::Le:
      return x <= y;
  }
  return false;
}

std::int32_t run(const Program& p, std::span<const std::int32_t> args,
                 std::size_t step_budget) {
  if (static_cast<int>(args.size()) != p.ins)
    throw std::invalid_argument("expected " + std::to_string(p.ins) +
                                " arguments, got " +
                                std::to_string(args.size()));
  ExecState s;
  s.step_budget = step_budget;
  s.registers.assign(static_cast<std::size_t>(p.frame), std::nullopt);
  for (std::size_t i = 0; i < args.size(); ++i)
    s.registers[static_cast<std::size_t>(p.locals) + i] = args[i];

  auto get = [&](int r) {
    const auto& v = s.registers[static_cast<std::size_t>(r)];
    if (!v) throw ExecFault("read of uninitialized v" + std::to_string(r));
    return *v;
  };
  auto set = [&](int r, std::int32_t v) {
    s.registers[static_cast<std::size_t>(r)] = v;
  };

  while (true) {
    if (s.pc >= p.code.size()) throw ExecFault("fell off the end of the method");
    if (++s.steps > s.step_budget)
      throw NonTermination("step budget of " + std::to_string(s.step_budget) +
                           " exceeded");
    const auto& d = p.code[s.pc];
    std::size_t next = s.pc + 1;
    switch (d.op) {
      case Op::Nop:
        break;
      case Op::Move:
        set(d.dst, get(d.a));
        break;
      case Op::Const:
        set(d.dst, d.literal);
        break;
      case Op::Return:
        return get(d.a);
      case Op::Goto:
        next = d.target;
        break;
      case Op::IfCmp:
        if (compare(d.cmp, get(d.a), get(d.b))) next = d.target;
        break;
      case Op::IfZero:
        if (compare(d.cmp, get(d.a), 0)) next = d.target;
        break;
      case Op::Binary:
        set(d.dst, arith(d.arith, get(d.a), get(d.b)));
        break;
      case Op::BinaryLit:
        set(d.dst, arith(d.arith, get(d.a), d.literal));
        break;
      case Op::Unary: {
        auto x = get(d.a);
        std::int32_t r = 0;
        if (d.arith == "neg-int") {
          r = static_cast<std::int32_t>(0u - static_cast<std::uint32_t>(x));
        } else if (d.arith == "not-int") {
          r = ~x;
        } else if (d.arith == "int-to-byte") {
          r = static_cast<std::int8_t>(x);
        } else if (d.arith == "int-to-char") {
          r = static_cast<std::uint16_t>(x);
        } else {
          r = static_cast<std::int16_t>(x);
        }
        set(d.dst, r);
        break;
      }
    }
    s.pc = next;
  }
}

std::string outcome(const Program& p, std::span<const std::int32_t> args) {
  try {
    return "value " + std::to_string(run(p, args, kDefaultStepBudget));
  } catch (const NonTermination&) {
    return "nontermination";
  } catch (const ExecFault& e) {
    return std::string("fault: ") + e.what();
  }
}

}  // namespace

std::string unsupported_reason(const SmaliMethod& method) {
  try {
    decode(method);
    return {};
  } catch (const UnsupportedMethod& e) {
    return e.what();
  }
}

std::int32_t eval_method(const SmaliMethod& method,
                         std::span<const std::int32_t> args,
                         std::size_t step_budget) {
  return run(decode(method), args, step_budget);
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Equal:
      return "equal";
    case Verdict::NotEqual:
      return "not-equal";
    case Verdict::Abstain:
      return "abstain";
  }
  return "?";
}

EquivalenceResult check_equivalence(const SmaliMethod& original,
                                    const SmaliMethod& modified,
                                    std::size_t trials, std::uint64_t seed) {
  EquivalenceResult result;
  Program a;
  Program b;
  try {
    a = decode(original);
  } catch (const UnsupportedMethod& e) {
    result.reason = std::string("original: ") + e.what();
    return result;
  }
  try {
    b = decode(modified);
  } catch (const UnsupportedMethod& e) {
    result.reason = std::string("modified: ") + e.what();
    return result;
  }
  if (a.ins != b.ins) {
    result.reason = "arity differs";
    return result;
  }

  const std::size_t n = static_cast<std::size_t>(a.ins);
  const std::int32_t edges[] = {0, 1, -1, std::numeric_limits<std::int32_t>::min(),
                                std::numeric_limits<std::int32_t>::max()};
  std::vector<std::vector<std::int32_t>> cases;
  if (n <= 3) {
    std::size_t total = 1;
    for (std::size_t i = 0; i < n; ++i) total *= 5;
    for (std::size_t c = 0; c < total; ++c) {
      std::vector<std::int32_t> args(n);
      std::size_t k = c;
      for (std::size_t i = 0; i < n; ++i, k /= 5) args[i] = edges[k % 5];
      cases.push_back(std::move(args));
    }
  } else {
    for (auto e : edges) cases.emplace_back(n, e);
  }
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<std::int32_t> args(n);
    for (auto& x : args) x = static_cast<std::int32_t>(static_cast<std::uint32_t>(rng()));
    cases.push_back(std::move(args));
  }

  for (const auto& args : cases) {
    ++result.cases;
    auto x = outcome(a, args);
    auto y = outcome(b, args);
    if (x != y) {
      result.verdict = Verdict::NotEqual;
      result.witness = args;
      result.original_outcome = x;
      result.modified_outcome = y;
      return result;
    }
  }
  result.verdict = Verdict::Equal;
  return result;
}

}  // namespace nopvis
