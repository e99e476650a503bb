#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "nopvis/attack.hpp"
#include "nopvis/interpreter.hpp"

using namespace nopvis;

namespace {

const OpcodeTable& T() { return OpcodeTable::dalvik(); }

std::vector<SmaliClass> demo_app() {
  auto c = fixtures::load("arith_original.smali");
  c.class_name = "LDemo;";
  return {c};
}

DetectorModel model(std::uint64_t seed) {
  DetectorConfig c;
  c.embedding_dim = 4;
  c.conv = {ConvLayerSpec{6, 3}};
  c.hidden_dim = 5;
  c.max_len = 64;
  c.seed = seed;
  auto m = init_model(c);
  std::mt19937_64 rng(seed);
  for (auto& t : m.params)
    for (auto& x : t.data) x += 0.3 * std::uniform_real_distribution<double>(-1, 1)(rng);
  return m;
}

}  // namespace

TEST(Template, SioLayout) {
  auto app = demo_app();
  auto t = build_attack_template(app, AttackKind::Sio, T());
  EXPECT_EQ(t.sites.size(), 2u);
  EXPECT_EQ(t.placeholder_positions, (std::vector<std::size_t>{2, 3, 9, 10}));
  auto c = T().id_of("const");
  auto s = kPlaceholderSentinel;
  EXPECT_EQ(t.base.ids, (std::vector<OpcodeId>{c, c, s, s, 146, 17, 1, c, c, s, s, 147, 17}));
}

TEST(Template, ImiUsesConditional) {
  auto t = build_attack_template(demo_app(), AttackKind::Imi, T(), kDefaultMaxLen, 3);
  EXPECT_EQ(t.base.ids[1], T().id_of("if-eqz"));
  EXPECT_EQ(t.placeholder_positions.size(), 6u);
  EXPECT_THROW(build_attack_template(demo_app(), AttackKind::SimpleNop, T()), std::invalid_argument);
}

TEST(Template, HorizonTruncation) {
  std::string text = ".class LA;\n";
  for (int m = 0; m < 3; ++m) {
    text += ".method public static f" + std::to_string(m) + "(II)I\n    .registers 3\n";
    for (int i = 0; i < 5000; ++i) text += "    add-int v0, v1, v2\n";
    text += "    return v0\n.end method\n";
  }
  std::vector<SmaliClass> app = {parse_class(text)};
  auto t = build_attack_template(app, AttackKind::Sio, T());
  EXPECT_EQ(t.base.ids.size(), 8192u);
  // Third method would start past the horizon once two patterns are spliced in.
  EXPECT_EQ(t.sites.size(), 2u);
  EXPECT_EQ(t.skipped.size(), 1u);
  for (auto p : t.placeholder_positions) EXPECT_LT(p, 8192u);
}

TEST(Template, NothingInjectable) {
  auto c = parse_class(".class LA;\n.method public abstract g()V\n.end method\n");
  EXPECT_THROW(build_attack_template(std::vector{c}, AttackKind::Sio, T()), EmptyTemplateError);
}

TEST(Optimizer, ZeroModelNeverMoves) {
  auto t = build_attack_template(demo_app(), AttackKind::Sio, T());
  auto m = zero_model(model(1).config);
  auto cands = injectable_ids(T());
  auto r = optimize_placeholders(m, t, cands);
  EXPECT_TRUE(r.trace.steps.empty());
  EXPECT_EQ(r.assignment, std::vector<OpcodeId>(4, cands[0]));
  EXPECT_DOUBLE_EQ(r.trace.final_score, 0.5);
  EXPECT_FALSE(r.trace.evaded);
}

TEST(Optimizer, TraceMonotoneAndConsistent) {
  auto t = build_attack_template(demo_app(), AttackKind::Sio, T());
  auto cands = injectable_ids(T());
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto m = model(seed);
    auto r = optimize_placeholders(m, t, cands, 0.0, 5);
    double prev = logit_margin(m, substitute(t, std::vector<OpcodeId>(4, cands[0])));
    for (const auto& s : r.trace.steps) {
      EXPECT_LT(s.margin, prev);
      prev = s.margin;
    }
    auto final_ids = substitute(t, r.assignment);
    EXPECT_NEAR(r.trace.final_score, forward(m, final_ids).p_malware, 1e-12);
    EXPECT_LE(r.trace.final_score, r.trace.initial_score);
  }
}

TEST(Optimizer, ConvergesToCoordinateMinimum) {
  auto t = build_attack_template(demo_app(), AttackKind::Imi, T());
  auto cands = injectable_ids(T());
  auto m = model(4);
  auto r = optimize_placeholders(m, t, cands, 0.0, 50);
  ASSERT_LT(r.trace.sweeps, 50u);
  double here = logit_margin(m, substitute(t, r.assignment));
  for (std::size_t p = 0; p < r.assignment.size(); ++p)
    for (auto id : cands) {
      auto a = r.assignment;
      a[p] = id;
      EXPECT_GE(logit_margin(m, substitute(t, a)), here - 1e-12);
    }
}

TEST(Optimizer, BruteForceSinglePlaceholderPair) {
  // One site, two slots: greedy's first coordinate pass can be checked
  // against exhaustive search of that coordinate.
  auto one = parse_class(".class LA;\n.method public static f(II)I\n    .registers 3\n"
                         "    add-int v0, v1, v2\n    return v0\n.end method\n");
  std::vector<SmaliClass> app = {one};
  auto t = build_attack_template(app, AttackKind::Sio, T());
  ASSERT_EQ(t.placeholder_positions.size(), 2u);
  auto cands = injectable_ids(T());
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto m = model(seed + 100);
    double best = 1e300;
    for (auto a : cands)
      for (auto b : cands) best = std::min(best, logit_margin(m, substitute(t, std::vector{a, b})));
    auto r = optimize_placeholders(m, t, cands, 0.0, 10);
    double got = logit_margin(m, substitute(t, r.assignment));
    EXPECT_GE(got, best - 1e-12);
    // Slot 0 alone, with slot 1 fixed at the start value, is exhaustively optimal.
    if (!r.trace.steps.empty() && r.trace.steps[0].placeholder == 0) {
      double first = 1e300;
      for (auto a : cands)
        first = std::min(first, logit_margin(m, substitute(t, std::vector{a, cands[0]})));
      EXPECT_NEAR(r.trace.steps[0].margin, first, 1e-12);
    }
  }
}

TEST(Optimizer, RejectsBadCandidates) {
  auto t = build_attack_template(demo_app(), AttackKind::Sio, T());
  auto m = model(1);
  std::vector<OpcodeId> bad = {T().id_of("div-int")};
  EXPECT_THROW(optimize_placeholders(m, t, bad), std::invalid_argument);
  EXPECT_THROW(optimize_placeholders(m, t, std::vector<OpcodeId>{}), std::invalid_argument);
  EXPECT_THROW(optimize_placeholders(m, t, injectable_ids(T()), 0.5, 0), std::invalid_argument);
}

TEST(Realize, ManualSioBytes) {
  auto app = demo_app();
  auto t = build_attack_template(app, AttackKind::Sio, T());
  std::vector<OpcodeId> a = {T().id_of("sub-int"), T().id_of("xor-int"), T().id_of("sub-int"),
                             T().id_of("xor-int")};
  auto r = realize(app, t, a, T());
  EXPECT_TRUE(r.unrealized.empty());
  EXPECT_EQ(r.manifest.sites.size(), 2u);
  EXPECT_EQ(r.manifest.assignment,
            (std::vector<std::string>{"sub-int", "xor-int", "sub-int", "xor-int"}));
  // Same opcode stream as the hand-written SIO fixture.
  auto lit = fixtures::load("arith_sio_manual.smali");
  auto lit_ids = extract_opcode_sequence(std::vector{lit}, T()).ids;
  auto got = extract_opcode_sequence(std::vector{r.app[0]}, T()).ids;
  got.resize(lit_ids.size());
  EXPECT_EQ(got, lit_ids);
  auto ok = check_consistency(app, t, a, r, T());
  EXPECT_TRUE(ok.consistent);
  EXPECT_EQ(ok.compared, t.base.ids.size());
}

TEST(Realize, ConsistencyDetectsTampering) {
  auto app = demo_app();
  auto t = build_attack_template(app, AttackKind::Imi, T());
  auto a = std::vector<OpcodeId>(4, T().id_of("mul-int"));
  auto r = realize(app, t, a, T());
  auto tampered = r;
  tampered.app[0].methods[0].lines.insert(tampered.app[0].methods[0].lines.begin() + 2,
                                          make_instruction("nop", {}));
  auto rep = check_consistency(app, t, a, tampered, T());
  EXPECT_FALSE(rep.consistent);
  EXPECT_EQ(rep.first_mismatch, 0u);
}

TEST(Realize, MethodsStayEquivalent) {
  auto app = demo_app();
  auto cands = injectable_ids(T());
  std::mt19937_64 rng(12);
  for (auto kind : {AttackKind::Sio, AttackKind::Imi}) {
    auto t = build_attack_template(app, kind, T(), kDefaultMaxLen, 3);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<OpcodeId> a(t.placeholder_positions.size());
      for (auto& x : a) x = cands[rng() % cands.size()];
      auto r = realize(app, t, a, T());
      EXPECT_TRUE(check_consistency(app, t, a, r, T()).consistent);
      for (std::size_t i = 0; i < 2; ++i)
        EXPECT_EQ(check_equivalence(app[0].methods[i], r.app[0].methods[i], 200).verdict,
                  Verdict::Equal);
    }
  }
}

TEST(Trace, JsonLines) {
  OptimizationTrace tr;
  tr.steps = {{0, 2, 148, 0.9, 2.0}, {1, 3, 150, 0.4, -0.3}};
  auto text = trace_jsonl(tr);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  auto first = nlohmann::json::parse(text.substr(0, text.find('\n')));
  EXPECT_EQ(first["id"], 148);
  EXPECT_EQ(to_json(tr)["steps"].size(), 2u);
}
