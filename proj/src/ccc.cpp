#include "nopvis/ccc.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace nopvis {
namespace {

std::string_view strip_indent(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
    s.remove_prefix(1);
  return s;
}

void require_sites(const InjectionManifest& m) {
  if (m.sites.empty())
    throw UndefinedMetricError("empty manifest: metric undefined");
}

template <typename F>
double mean_over_sites(const InjectionManifest& m, F f) {
  require_sites(m);
  double sum = 0;
  for (const auto& s : m.sites) sum += f(s);
  return sum / static_cast<double>(m.sites.size());
}

}  // namespace

double value(ComplexityClass c) {
  switch (c) {
    case ComplexityClass::StraightLine:
      return 0.0;
    case ComplexityClass::FunctionOrConditional:
      return 0.33;
    case ComplexityClass::LoopOrNestedCondition:
      return 0.66;
    case ComplexityClass::RecursionOrComplex:
      return 1.0;
  }
  return 0.0;
}

double value(ConnectionClass c) {
  switch (c) {
    case ConnectionClass::NoAttachment:
      return 0.0;
    case ConnectionClass::OneOriginalVariable:
      return 0.5;
    case ConnectionClass::MultipleOriginalVariables:
      return 1.0;
  }
  return 0.0;
}

std::string_view to_string(ComplexityClass c) {
  switch (c) {
    case ComplexityClass::StraightLine:
      return "StraightLine";
    case ComplexityClass::FunctionOrConditional:
      return "FunctionOrConditional";
    case ComplexityClass::LoopOrNestedCondition:
      return "LoopOrNestedCondition";
    case ComplexityClass::RecursionOrComplex:
      return "RecursionOrComplex";
  }
  return "?";
}

std::string_view to_string(ConnectionClass c) {
  switch (c) {
    case ConnectionClass::NoAttachment:
      return "NoAttachment";
    case ConnectionClass::OneOriginalVariable:
      return "OneOriginalVariable";
    case ConnectionClass::MultipleOriginalVariables:
      return "MultipleOriginalVariables";
  }
  return "?";
}

ComplexityClass complexity_from_string(std::string_view s) {
  for (auto c : {ComplexityClass::StraightLine,
                 ComplexityClass::FunctionOrConditional,
                 ComplexityClass::LoopOrNestedCondition,
                 ComplexityClass::RecursionOrComplex}) {
    if (to_string(c) == s) return c;
  }
  throw std::invalid_argument("unknown complexity class '" + std::string(s) +
                              "'");
}

ConnectionClass connection_from_string(std::string_view s) {
  for (auto c : {ConnectionClass::NoAttachment,
                 ConnectionClass::OneOriginalVariable,
                 ConnectionClass::MultipleOriginalVariables}) {
    if (to_string(c) == s) return c;
  }
  throw std::invalid_argument("unknown connection class '" + std::string(s) +
                              "'");
}

void CccWeights::validate() const {
  for (double w : {w1, w2, w3}) {
    if (!(w >= 0.0 && w <= 1.0))
      throw std::invalid_argument("CCC weights must lie in [0,1]");
  }
  if (std::abs(w1 + w2 + w3 - 1.0) > 1e-9)
    throw std::invalid_argument("CCC weights must sum to 1");
}

double clarity(const InjectionManifest& manifest) {
  require_sites(manifest);
  for (const auto& s : manifest.sites) {
    if (s.contains_explicit_nop) return 1.0;
  }
  return mean_over_sites(manifest, [](const InjectionSite& s) {
    if (s.injected_instruction_count == 0)
      throw std::invalid_argument("site " + s.host_method +
                                  " has no injected instructions");
    // e^l / (e^l + s), written to stay finite for large l.
    double l = static_cast<double>(s.injected_instruction_count);
    double n = static_cast<double>(s.original_instruction_count);
    return 1.0 / (1.0 + n * std::exp(-l));
  });
}

double complexity(const InjectionManifest& manifest) {
  return mean_over_sites(
      manifest, [](const InjectionSite& s) { return value(s.complexity); });
}

double connection(const InjectionManifest& manifest) {
  return mean_over_sites(
      manifest, [](const InjectionSite& s) { return value(s.connection); });
}

double combine(double c1, double c2, double c3, const CccWeights& weights) {
  weights.validate();
  return weights.w1 * c1 + weights.w2 * (1.0 - c2) + weights.w3 * (1.0 - c3);
}

CccReport ccc(const InjectionManifest& manifest, const CccWeights& weights) {
  weights.validate();
  CccReport r;
  r.c1 = clarity(manifest);
  r.c2 = complexity(manifest);
  r.c3 = connection(manifest);
  r.weights = weights;
  r.ccc = combine(r.c1, r.c2, r.c3, weights);
  return r;
}

ComplexityClass classify_complexity(std::span<const SmaliLine> snippet,
                                    const ComplexityHint& hint) {
  std::vector<std::pair<std::string_view, std::size_t>> labels;
  for (std::size_t i = 0; i < snippet.size(); ++i) {
    if (snippet[i].kind == LineKind::Label)
      labels.emplace_back(snippet[i].label(), i);
  }
  auto label_pos = [&](std::string_view name) -> std::optional<std::size_t> {
    for (const auto& [l, i] : labels) {
      if (l == name) return i;
    }
    return std::nullopt;
  };

  int back_edges = 0;
  bool recursion = false;
  // Forward branches as [start, end) line ranges within the snippet.
  std::vector<std::pair<std::size_t, std::size_t>> forward;
  for (std::size_t i = 0; i < snippet.size(); ++i) {
    const auto& line = snippet[i];
    if (!line.is_instruction()) continue;
    const OpcodeInfo* op = line.info();
    if (op == nullptr) continue;
    if (op->is_invoke() && !hint.host_signature.empty()) {
      for (const auto& operand : line.operands) {
        auto arrow = operand.find("->");
        if (arrow != std::string::npos &&
            operand.substr(arrow + 2) == hint.host_signature)
          recursion = true;
      }
    }
    if (op->is_switch()) {
      forward.emplace_back(i, snippet.size());
      continue;
    }
    if (auto target = line.branch_target()) {
      auto pos = label_pos(*target);
      if (pos && *pos <= i) {
        ++back_edges;
      } else {
        forward.emplace_back(i, pos.value_or(snippet.size()));
      }
    }
  }

  if (recursion || back_edges >= 2) return ComplexityClass::RecursionOrComplex;
  if (back_edges == 1) return ComplexityClass::LoopOrNestedCondition;
  for (std::size_t a = 0; a < forward.size(); ++a) {
    for (std::size_t b = 0; b < forward.size(); ++b) {
      if (a != b && forward[b].first > forward[a].first &&
          forward[b].first < forward[a].second)
        return ComplexityClass::LoopOrNestedCondition;
    }
  }
  if (!forward.empty()) return ComplexityClass::FunctionOrConditional;
  return ComplexityClass::StraightLine;
}

ConnectionClass classify_connection(std::span<const SmaliLine> snippet,
                                    const SmaliMethod& host) {
  std::set<int> original;
  for (int p : host.parameter_frame_indices()) original.insert(p);
  for (const auto& line : host.lines) {
    if (!line.is_instruction()) continue;
    for (const auto* regs : {&line.registers_read, &line.registers_written}) {
      for (const auto& r : *regs) {
        if (auto idx = host.frame_index(r)) original.insert(*idx);
      }
    }
  }
  std::set<int> used;
  for (const auto& line : snippet) {
    if (!line.is_instruction()) continue;
    for (const auto* regs : {&line.registers_read, &line.registers_written}) {
      for (const auto& r : *regs) {
        auto idx = host.frame_index(r);
        if (idx && original.count(*idx)) used.insert(*idx);
      }
    }
  }
  if (used.empty()) return ConnectionClass::NoAttachment;
  if (used.size() == 1) return ConnectionClass::OneOriginalVariable;
  return ConnectionClass::MultipleOriginalVariables;
}

InjectedSnippet diff_injection(const SmaliMethod& original,
                               const SmaliMethod& modified) {
  const auto& a = original.lines;
  const auto& b = modified.lines;
  auto same = [](const SmaliLine& x, const SmaliLine& y) {
    return x.kind == y.kind && strip_indent(x.raw) == strip_indent(y.raw);
  };
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<std::vector<std::uint32_t>> dp(
      n + 1, std::vector<std::uint32_t>(m + 1, 0));
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = m; j-- > 0;) {
      dp[i][j] = same(a[i], b[j]) ? dp[i + 1][j + 1] + 1
                                  : std::max(dp[i + 1][j], dp[i][j + 1]);
    }
  }
  InjectedSnippet out;
  std::size_t i = 0;
  std::size_t j = 0;
  while (j < m) {
    if (i < n && same(a[i], b[j]) && dp[i][j] == dp[i + 1][j + 1] + 1) {
      ++i;
      ++j;
    } else if (i < n && dp[i + 1][j] >= dp[i][j + 1]) {
      ++i;
    } else {
      out.lines.push_back(b[j]);
      out.positions.push_back(j);
      ++j;
    }
  }
  return out;
}

InjectionSite describe_injection(std::string host_ref,
                                 const SmaliMethod& original,
                                 const SmaliMethod& modified) {
  auto snippet = diff_injection(original, modified);
  InjectionSite site;
  site.host_method = std::move(host_ref);
  site.original_instruction_count = original.instruction_count();
  for (const auto& l : snippet.lines) {
    if (!l.is_instruction()) continue;
    ++site.injected_instruction_count;
    if (l.opcode == "nop") site.contains_explicit_nop = true;
  }
  site.complexity =
      classify_complexity(snippet.lines, {original.signature()});
  site.connection = classify_connection(snippet.lines, original);
  site.injected_line_spans = std::move(snippet.positions);
  return site;
}

std::string method_ref(const SmaliClass& cls, const SmaliMethod& m) {
  return cls.class_name + "->" + m.signature();
}

InjectionManifest manifest_from_diff(std::string app_id,
                                     std::span<const SmaliClass> original,
                                     std::span<const SmaliClass> modified) {
  InjectionManifest manifest;
  manifest.app_id = std::move(app_id);
  for (std::size_t ci = 0; ci < modified.size(); ++ci) {
    const auto& mod_cls = modified[ci];
    const SmaliClass* orig_cls = nullptr;
    if (!mod_cls.class_name.empty()) {
      for (const auto& c : original) {
        if (c.class_name == mod_cls.class_name) orig_cls = &c;
      }
    } else if (ci < original.size()) {
      orig_cls = &original[ci];
    }
    if (orig_cls == nullptr) continue;
    for (const auto& mod_m : mod_cls.methods) {
      auto it = std::find_if(
          orig_cls->methods.begin(), orig_cls->methods.end(),
          [&](const SmaliMethod& m) { return m.signature() == mod_m.signature(); });
      if (it == orig_cls->methods.end()) continue;
      auto site = describe_injection(method_ref(mod_cls, mod_m), *it, mod_m);
      if (site.injected_instruction_count > 0)
        manifest.sites.push_back(std::move(site));
    }
  }
  return manifest;
}

nlohmann::json to_json(const InjectionManifest& manifest) {
  nlohmann::json sites = nlohmann::json::array();
  for (const auto& s : manifest.sites) {
    sites.push_back({
        {"method", s.host_method},
        {"l_count", s.injected_instruction_count},
        {"s_count", s.original_instruction_count},
        {"explicit_nop", s.contains_explicit_nop},
        {"complexity_class", to_string(s.complexity)},
        {"connection_class", to_string(s.connection)},
        {"spans", s.injected_line_spans},
        {"registers_added", s.registers_added},
    });
  }
  nlohmann::json j = {{"app_id", manifest.app_id}, {"sites", sites}};
  if (!manifest.assignment.empty()) j["assignment"] = manifest.assignment;
  return j;
}

InjectionManifest manifest_from_json(const nlohmann::json& j) {
  InjectionManifest m;
  m.app_id = j.at("app_id").get<std::string>();
  for (const auto& s : j.at("sites")) {
    InjectionSite site;
    site.host_method = s.at("method").get<std::string>();
    site.injected_instruction_count = s.at("l_count").get<std::size_t>();
    site.original_instruction_count = s.at("s_count").get<std::size_t>();
    site.contains_explicit_nop = s.at("explicit_nop").get<bool>();
    site.complexity =
        complexity_from_string(s.at("complexity_class").get<std::string>());
    site.connection =
        connection_from_string(s.at("connection_class").get<std::string>());
    if (s.contains("spans"))
      site.injected_line_spans = s["spans"].get<std::vector<std::size_t>>();
    if (s.contains("registers_added"))
      site.registers_added = s["registers_added"].get<int>();
    if (site.injected_instruction_count == 0)
      throw std::invalid_argument("site " + site.host_method +
                                  ": l_count must be >= 1");
    m.sites.push_back(std::move(site));
  }
  if (j.contains("assignment"))
    m.assignment = j["assignment"].get<std::vector<std::string>>();
  return m;
}

nlohmann::json to_json(const CccReport& report) {
  return {
      {"c1", report.c1},
      {"c2", report.c2},
      {"c3", report.c3},
      {"ccc", report.ccc},
      {"weights",
       {{"w1", report.weights.w1},
        {"w2", report.weights.w2},
        {"w3", report.weights.w3}}},
  };
}

}  // namespace nopvis
