#include "nopvis/attack.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace nopvis {
namespace {

std::vector<OpcodeId> method_ids(const SmaliMethod& m, const OpcodeTable& table) {
  std::vector<OpcodeId> ids;
  for (const auto& line : m.lines) {
    if (line.is_instruction()) ids.push_back(table.id_of(line.opcode));
  }
  return ids;
}

// Splice the patterns for `chosen` sites into the original sequence.
// Returns the untruncated sequence and the pattern offsets.
std::vector<OpcodeId> splice(std::span<const SmaliClass> app,
                             const OpcodeTable& table,
                             const std::vector<OpcodeId>& prefix,
                             std::size_t payload_length,
                             const std::set<std::pair<std::size_t, std::size_t>>& chosen,
                             std::vector<std::size_t>* offsets) {
  std::vector<OpcodeId> out;
  bool first = true;
  for (const auto& span : method_layout(app)) {
    if (!first) out.push_back(kPaddingOpcodeId);
    first = false;
    if (chosen.count({span.class_index, span.method_index})) {
      if (offsets) offsets->push_back(out.size());
      out.insert(out.end(), prefix.begin(), prefix.end());
      out.insert(out.end(), payload_length, kPlaceholderSentinel);
    }
    auto ids = method_ids(app[span.class_index].methods[span.method_index], table);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

std::vector<OpcodeId> pattern_prefix(AttackKind kind, const OpcodeTable& table) {
  if (kind == AttackKind::Sio) return {table.id_of("const"), table.id_of("const")};
  return {table.id_of("const"), table.id_of("if-eqz")};
}

}  // namespace

AttackTemplate build_attack_template(std::span<const SmaliClass> app,
                                     AttackKind pattern,
                                     const OpcodeTable& table,
                                     std::size_t max_len,
                                     std::size_t payload_length,
                                     std::string app_id) {
  if (pattern == AttackKind::SimpleNop)
    throw std::invalid_argument("templates exist only for sio and imi");
  if (max_len == 0) throw std::invalid_argument("max_len must be >= 1");
  if (payload_length == 0) throw std::invalid_argument("payload_length must be >= 1");

  AttackTemplate t;
  t.pattern = pattern;
  t.payload_length = payload_length;
  t.base.app_id = std::move(app_id);
  t.base.max_len = max_len;

  const auto prefix = pattern_prefix(pattern, table);
  const std::size_t pattern_len = prefix.size() + payload_length;
  std::set<std::pair<std::size_t, std::size_t>> chosen;
  std::size_t shift = 0;
  for (const auto& span : method_layout(app)) {
    const auto& cls = app[span.class_index];
    const auto& m = cls.methods[span.method_index];
    auto ref = method_ref(cls, m);
    std::size_t start = span.offset + shift;
    if (start + pattern_len > max_len) {
      t.skipped.push_back({ref, "beyond the opcode horizon"});
      continue;
    }
    if (auto why = injection_blocker(m, pattern)) {
      t.skipped.push_back({ref, *why});
      continue;
    }
    chosen.insert({span.class_index, span.method_index});
    t.sites.push_back({span.class_index, span.method_index, ref, start, {}});
    shift += pattern_len;
  }
  if (t.sites.empty()) throw EmptyTemplateError();

  std::vector<std::size_t> offsets;
  t.base.ids = splice(app, table, prefix, payload_length, chosen, &offsets);
  if (t.base.ids.size() > max_len) t.base.ids.resize(max_len);
  for (std::size_t s = 0; s < t.sites.size(); ++s) {
    t.sites[s].offset = offsets[s];
    for (std::size_t i = 0; i < payload_length; ++i) {
      t.sites[s].placeholders.push_back(t.placeholder_positions.size());
      t.placeholder_positions.push_back(offsets[s] + prefix.size() + i);
    }
  }
  return t;
}

std::vector<OpcodeId> substitute(const AttackTemplate& tmpl,
                                 std::span<const OpcodeId> assignment) {
  if (assignment.size() != tmpl.placeholder_positions.size())
    throw std::invalid_argument("assignment does not cover every placeholder");
  auto ids = tmpl.base.ids;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    ids[tmpl.placeholder_positions[i]] = assignment[i];
  return ids;
}

OptimizationResult optimize_placeholders(const DetectorModel& model,
                                         const AttackTemplate& tmpl,
                                         std::span<const OpcodeId> candidates,
                                         double threshold, std::size_t budget) {
  if (candidates.empty()) throw std::invalid_argument("no candidate opcodes");
  if (budget == 0) throw std::invalid_argument("budget must be at least one sweep");
  auto allowed = injectable_ids(OpcodeTable::dalvik());
  for (auto id : candidates) {
    if (std::find(allowed.begin(), allowed.end(), id) == allowed.end())
      throw std::invalid_argument("candidate id " + std::to_string(id) +
                                  " is not an injectable opcode");
  }
  std::vector<OpcodeId> order(candidates.begin(), candidates.end());
  std::sort(order.begin(), order.end());
  order.erase(std::unique(order.begin(), order.end()), order.end());

  OptimizationResult r;
  r.assignment.assign(tmpl.placeholder_positions.size(), candidates[0]);
  SubstitutionScorer scorer(model, substitute(tmpl, r.assignment));
  r.trace.initial_score = scorer.score();
  const std::size_t visible = std::min(scorer.ids().size(), model.config.max_len);

  auto done = [&] { return scorer.score() < threshold; };
  for (std::size_t sweep = 0; sweep < budget && !done(); ++sweep) {
    ++r.trace.sweeps;
    bool changed = false;
    for (std::size_t p = 0; p < r.assignment.size() && !done(); ++p) {
      auto pos = tmpl.placeholder_positions[p];
      if (pos >= visible) continue;  // truncated by the model
      double best = scorer.margin();
      OpcodeId best_id = r.assignment[p];
      for (auto id : order) {
        if (id == r.assignment[p]) continue;
        double s = scorer.margin_with(pos, id);
        if (s < best) {
          best = s;
          best_id = id;
        }
      }
      if (best_id != r.assignment[p]) {
        scorer.set(pos, best_id);
        r.assignment[p] = best_id;
        r.trace.steps.push_back({p, pos, best_id, scorer.score(), scorer.margin()});
        changed = true;
      }
    }
    if (!changed) break;
  }
  r.trace.final_score = scorer.score();
  r.trace.evaded = r.trace.final_score < threshold;
  return r;
}

Realization realize(std::span<const SmaliClass> app, const AttackTemplate& tmpl,
                    std::span<const OpcodeId> assignment,
                    const OpcodeTable& table, SioConstants constants,
                    std::string app_id) {
  if (assignment.size() != tmpl.placeholder_positions.size())
    throw std::invalid_argument("assignment does not cover every placeholder");
  Realization out;
  out.app.assign(app.begin(), app.end());
  out.manifest.app_id = std::move(app_id);
  for (auto id : assignment) {
    auto name = table.mnemonic_of(id);
    if (!name || !is_injectable(*name))
      throw std::invalid_argument("assignment id " + std::to_string(id) +
                                  " is not an injectable opcode");
    out.manifest.assignment.emplace_back(*name);
  }
  for (std::size_t s = 0; s < tmpl.sites.size(); ++s) {
    const auto& site = tmpl.sites[s];
    if (site.class_index >= app.size() ||
        site.method_index >= app[site.class_index].methods.size())
      throw std::invalid_argument("template does not match the app");
    const auto& method = app[site.class_index].methods[site.method_index];
    std::vector<std::string> payload;
    for (auto p : site.placeholders) payload.push_back(out.manifest.assignment[p]);
    InjectOutcome o = tmpl.pattern == AttackKind::Sio
                          ? inject_sio(method, payload, constants, site.method)
                          : inject_imi(method, payload, site.method);
    if (auto* skip = std::get_if<InjectionSkip>(&o)) {
      out.unrealized.push_back(s);
      out.skips.push_back({site.method, skip->reason});
      continue;
    }
    auto& inj = std::get<Injection>(o);
    out.app[site.class_index].methods[site.method_index] = std::move(inj.method);
    out.manifest.sites.push_back(std::move(inj.site));
  }
  return out;
}

ConsistencyReport check_consistency(std::span<const SmaliClass> original,
                                    const AttackTemplate& tmpl,
                                    std::span<const OpcodeId> assignment,
                                    const Realization& realized,
                                    const OpcodeTable& table) {
  std::set<std::pair<std::size_t, std::size_t>> chosen;
  std::vector<std::size_t> kept;
  for (std::size_t s = 0; s < tmpl.sites.size(); ++s) {
    if (std::find(realized.unrealized.begin(), realized.unrealized.end(), s) !=
        realized.unrealized.end())
      continue;
    chosen.insert({tmpl.sites[s].class_index, tmpl.sites[s].method_index});
    kept.push_back(s);
  }
  std::vector<std::size_t> offsets;
  const auto prefix = pattern_prefix(tmpl.pattern, table);
  auto expected = splice(original, table, prefix, tmpl.payload_length, chosen, &offsets);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const auto& site = tmpl.sites[kept[i]];
    for (std::size_t j = 0; j < site.placeholders.size(); ++j)
      expected[offsets[i] + prefix.size() + j] = assignment[site.placeholders[j]];
  }
  if (expected.size() > tmpl.base.max_len) expected.resize(tmpl.base.max_len);

  auto actual = extract_opcode_sequence(realized.app, table, tmpl.base.max_len).ids;
  ConsistencyReport r;
  r.compared = std::max(expected.size(), actual.size());
  for (std::size_t i = 0; i < r.compared; ++i) {
    if (i >= expected.size() || i >= actual.size() || expected[i] != actual[i]) {
      r.first_mismatch = i;
      return r;
    }
  }
  r.consistent = true;
  return r;
}

nlohmann::json to_json(const OptimizationTrace& trace) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : trace.steps)
    steps.push_back({{"placeholder", s.placeholder},
                     {"position", s.position},
                     {"id", s.id},
                     {"score", s.score},
                     {"margin", s.margin}});
  return {{"initial_score", trace.initial_score},
          {"final_score", trace.final_score},
          {"sweeps", trace.sweeps},
          {"evaded", trace.evaded},
          {"steps", steps}};
}

std::string trace_jsonl(const OptimizationTrace& trace) {
  std::ostringstream out;
  for (const auto& s : trace.steps) {
    out << nlohmann::json{{"placeholder", s.placeholder},
                          {"position", s.position},
                          {"id", s.id},
                          {"score", s.score},
                          {"margin", s.margin}}
               .dump()
        << '\n';
  }
  return out.str();
}

}  // namespace nopvis
