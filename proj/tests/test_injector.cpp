#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "nopvis/injector.hpp"
#include "nopvis/interpreter.hpp"

using namespace nopvis;

namespace {

const std::vector<std::string> kPayload = {"sub-int", "xor-int"};

Injection expect_injection(InjectOutcome o) {
  if (auto* skip = std::get_if<InjectionSkip>(&o)) {
    ADD_FAILURE() << "skipped: " << skip->reason;
    return {};
  }
  return std::get<Injection>(std::move(o));
}

std::vector<std::string> instruction_text(const SmaliMethod& m) {
  std::vector<std::string> out;
  for (const auto& l : m.lines) {
    if (!l.is_instruction()) continue;
    std::string s = l.opcode;
    for (std::size_t i = 0; i < l.operands.size(); ++i) s += (i ? ", " : " ") + l.operands[i];
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST(SimpleNop, MatchesNopFixture) {
  auto orig = fixtures::load("arith_original.smali");
  auto want = fixtures::load("arith_nop.smali");
  for (std::size_t i = 0; i < 2; ++i) {
    auto inj = expect_injection(inject_simple_nop(orig.methods[i], 3));
    EXPECT_EQ(instruction_text(inj.method), instruction_text(want.methods[i]));
    EXPECT_TRUE(inj.site.contains_explicit_nop);
    EXPECT_EQ(inj.site.injected_instruction_count, 3u);
    EXPECT_EQ(inj.site.original_instruction_count, 2u);
    EXPECT_EQ(check_equivalence(orig.methods[i], inj.method).verdict, Verdict::Equal);
  }
}

TEST(SimpleNop, NeedsPositiveCount) {
  auto m = fixtures::load("arith_original.smali").methods[0];
  EXPECT_THROW(inject_simple_nop(m, 0), std::invalid_argument);
}

TEST(Sio, DemoShape) {
  auto orig = fixtures::load("arith_original.smali").methods[0];
  auto inj = expect_injection(inject_sio(orig, kPayload));
  EXPECT_EQ(inj.method.registers_declared(), 4);
  EXPECT_EQ(instruction_text(inj.method),
            (std::vector<std::string>{"const v0, 0x8", "const v1, 0xA", "sub-int v0, v0, v1",
                                      "xor-int v0, v0, v1", "add-int v0, v2, v3", "return v0"}));
  EXPECT_EQ(inj.site.injected_instruction_count, 4u);
  EXPECT_EQ(inj.site.original_instruction_count, 2u);
  EXPECT_EQ(inj.site.complexity, ComplexityClass::StraightLine);
  EXPECT_EQ(inj.site.connection, ConnectionClass::OneOriginalVariable);
  EXPECT_EQ(inj.site.registers_added, 1);
  EXPECT_FALSE(inj.site.contains_explicit_nop);
  EXPECT_EQ(check_equivalence(orig, inj.method).verdict, Verdict::Equal);
}

TEST(Sio, ManualVersionClobbersParameter) {
  // The hand-written version keeps p1 at v3 while also using v3 as scratch.
  auto orig = fixtures::load("arith_original.smali").methods[0];
  auto lit = fixtures::load("arith_sio_manual.smali").methods[0];
  auto r = check_equivalence(orig, lit);
  EXPECT_EQ(r.verdict, Verdict::NotEqual);
  EXPECT_FALSE(r.witness.empty());
}

TEST(Sio, RegisterCap) {
  auto m = parse_class(".class LA;\n.method static f(I)I\n    .registers 256\n"
                       "    return p0\n.end method\n").methods[0];
  auto o = inject_sio(m, kPayload);
  ASSERT_TRUE(std::holds_alternative<InjectionSkip>(o));
  EXPECT_NE(std::get<InjectionSkip>(o).reason.find("register"), std::string::npos);
}

TEST(Sio, ReusesDeadLocal) {
  auto m = parse_class(".class LA;\n.method static f(I)I\n    .registers 3\n"
                       "    const/4 v0, 0x1\n    add-int v0, v0, p0\n    return v0\n.end method\n")
               .methods[0];
  EXPECT_FALSE(dead_locals_at_entry(m).empty());
  auto inj = expect_injection(inject_sio(m, kPayload));
  EXPECT_EQ(check_equivalence(m, inj.method).verdict, Verdict::Equal);
}

TEST(Sio, RejectsNonWhitelisted) {
  auto m = fixtures::load("arith_original.smali").methods[0];
  std::vector<std::string> bad = {"div-int"};
  EXPECT_THROW(inject_sio(m, bad), std::invalid_argument);
  EXPECT_THROW(inject_imi(m, bad), std::invalid_argument);
}

TEST(Imi, MatchesFixture) {
  auto orig = fixtures::load("arith_original.smali").methods[0];
  auto want = fixtures::load("arith_imi.smali").methods[0];
  auto inj = expect_injection(inject_imi(orig, kPayload));
  auto got = instruction_text(inj.method);
  auto exp = instruction_text(want);
  ASSERT_EQ(got.size(), exp.size());
  EXPECT_EQ(got[0], exp[0]);
  EXPECT_EQ(got[1].substr(0, 11), "if-eqz v0, ");
  for (std::size_t i = 2; i < got.size(); ++i) EXPECT_EQ(got[i], exp[i]);
  EXPECT_EQ(inj.site.complexity, ComplexityClass::FunctionOrConditional);
  EXPECT_EQ(inj.site.connection, ConnectionClass::MultipleOriginalVariables);
  EXPECT_EQ(inj.site.registers_added, 0);
  EXPECT_EQ(check_equivalence(orig, inj.method).verdict, Verdict::Equal);
  EXPECT_EQ(check_equivalence(orig, want).verdict, Verdict::Equal);
}

TEST(Imi, FreshLabelAvoidsCollision) {
  auto m = parse_class(".class LA;\n.method static f(I)I\n    .registers 2\n    :impossible\n"
                       "    return p0\n.end method\n").methods[0];
  auto inj = expect_injection(inject_imi(m, kPayload));
  std::size_t labels = 0;
  for (const auto& l : inj.method.lines) labels += l.kind == LineKind::Label;
  EXPECT_EQ(labels, 2u);
  EXPECT_EQ(check_equivalence(m, inj.method).verdict, Verdict::Equal);
}

TEST(Strip, RestoresOriginal) {
  auto orig = fixtures::load("arith_original.smali");
  for (const auto& m : orig.methods) {
    for (auto o : {inject_simple_nop(m, 3), inject_sio(m, kPayload), inject_imi(m, kPayload)}) {
      auto inj = expect_injection(std::move(o));
      EXPECT_EQ(strip_injection(inj.method, inj.site), m);
    }
  }
}

TEST(Blocker, Reasons) {
  auto abstract_m = parse_class(".class LA;\n.method public abstract g()V\n.end method\n").methods[0];
  EXPECT_TRUE(injection_blocker(abstract_m, AttackKind::SimpleNop).has_value());
  auto ok = fixtures::load("arith_original.smali").methods[0];
  EXPECT_FALSE(injection_blocker(ok, AttackKind::Sio).has_value());
}

TEST(ApplyAttack, ManifestCoversEveryMethod) {
  auto orig = fixtures::load("arith_original.smali");
  orig.class_name = "LDemo;";
  InjectionPlan plan;
  plan.variant.kind = AttackKind::Imi;
  auto r = apply_attack(std::vector{orig}, plan, "demo");
  EXPECT_EQ(r.manifest.app_id, "demo");
  EXPECT_EQ(r.manifest.sites.size(), 2u);
  EXPECT_TRUE(r.skips.empty());
  // Diff alignment is ambiguous when a payload line repeats an original
  // line, so spans may differ; everything else must agree.
  auto diffed = manifest_from_diff("demo", std::vector{orig}, r.app);
  ASSERT_EQ(diffed.sites.size(), r.manifest.sites.size());
  for (std::size_t i = 0; i < diffed.sites.size(); ++i) {
    auto a = diffed.sites[i];
    auto b = r.manifest.sites[i];
    EXPECT_EQ(a.injected_line_spans.size(), b.injected_line_spans.size());
    a.injected_line_spans = b.injected_line_spans;
    EXPECT_EQ(a, b);
  }
}

TEST(ApplyAttack, EmptyManifest) {
  auto c = parse_class(".class LA;\n.method public abstract g()V\n.end method\n");
  InjectionPlan plan;
  EXPECT_THROW(apply_attack(std::vector{c}, plan), EmptyManifestError);
}

TEST(ApplyAttack, HorizonSkipsLateMethods) {
  auto orig = fixtures::load("arith_original.smali");
  InjectionPlan plan;
  plan.variant.kind = AttackKind::Sio;
  plan.selector.horizon = 3;  // the second method starts at offset 3
  auto r = apply_attack(std::vector{orig}, plan);
  EXPECT_EQ(r.manifest.sites.size(), 1u);
  ASSERT_EQ(r.skips.size(), 1u);
  EXPECT_EQ(r.app[0].methods[1], orig.methods[1]);
}

TEST(ApplyAttack, MaxRegisterSelector) {
  auto orig = fixtures::load("arith_original.smali");
  InjectionPlan plan;
  plan.variant.kind = AttackKind::SimpleNop;
  plan.selector.max_registers = 2;
  EXPECT_THROW(apply_attack(std::vector{orig}, plan), EmptyManifestError);
}

TEST(ShiftRegisters, RenamesAboveThreshold) {
  auto m = fixtures::load("arith_original.smali").methods[0];
  auto s = shift_registers(m, 1, 1);
  EXPECT_EQ(instruction_text(s), (std::vector<std::string>{"add-int v0, v2, v3", "return v0"}));
}

TEST(Variant, Validate) {
  AttackVariant v;
  v.kind = AttackKind::Sio;
  v.payload = {};
  EXPECT_THROW(v.validate(), std::invalid_argument);
  v.payload = {"mul-int"};
  EXPECT_NO_THROW(v.validate());
  EXPECT_EQ(attack_kind_from_string("imi"), AttackKind::Imi);
  EXPECT_EQ(to_string(AttackKind::SimpleNop), "nop");
  EXPECT_THROW(attack_kind_from_string("zzz"), std::invalid_argument);
}
