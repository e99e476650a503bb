#include <gtest/gtest.h>

#include <climits>

#include "fixtures.hpp"
#include "nopvis/interpreter.hpp"

using namespace nopvis;

namespace {

SmaliMethod method(const std::string& descriptor, const std::string& body,
                   const std::string& flags = "public static") {
  auto text = ".class LA;\n.method " + flags + " f" + descriptor + "\n" + body + ".end method\n";
  return parse_class(text).methods[0];
}

std::int32_t run(const SmaliMethod& m, std::vector<std::int32_t> args,
                 std::size_t budget = kDefaultStepBudget) {
  return eval_method(m, args, budget);
}

}  // namespace

TEST(Eval, FixtureArithmetic) {
  auto orig = fixtures::load("arith_original.smali");
  EXPECT_EQ(run(orig.methods[0], {2, 3}), 5);
  EXPECT_EQ(run(orig.methods[1], {2, 3}), -1);
  EXPECT_EQ(run(fixtures::load("arith_nop.smali").methods[0], {2, 3}), 5);
  EXPECT_EQ(run(fixtures::load("arith_imi.smali").methods[0], {2, 3}), 5);
  EXPECT_EQ(run(fixtures::load("arith_loop.smali").methods[0], {2, 3}), 5);
}

TEST(Eval, LoopBudget) {
  auto loop = fixtures::load("arith_loop.smali").methods[0];
  EXPECT_THROW(run(loop, {INT32_MAX, 0}, 1000), NonTermination);
  EXPECT_EQ(run(loop, {-4, 1}), -3);  // loop body never entered
}

TEST(Eval, WrapAround) {
  auto add = fixtures::load("arith_original.smali").methods[0];
  EXPECT_EQ(run(add, {INT32_MAX, 1}), INT32_MIN);
  auto mul = method("(II)I", "    .registers 2\n    mul-int p0, p0, p1\n    return p0\n");
  EXPECT_EQ(run(mul, {65536, 65536}), 0);
  auto neg = method("(I)I", "    .registers 1\n    neg-int p0, p0\n    return p0\n");
  EXPECT_EQ(run(neg, {INT32_MIN}), INT32_MIN);
}

TEST(Eval, DivisionSemantics) {
  auto div = method("(II)I", "    .registers 2\n    div-int p0, p0, p1\n    return p0\n");
  EXPECT_THROW(run(div, {1, 0}), ExecFault);
  EXPECT_EQ(run(div, {INT32_MIN, -1}), INT32_MIN);
  EXPECT_EQ(run(div, {-7, 2}), -3);
  auto rem = method("(II)I", "    .registers 2\n    rem-int p0, p0, p1\n    return p0\n");
  EXPECT_EQ(run(rem, {-7, 2}), -1);
  EXPECT_EQ(run(rem, {INT32_MIN, -1}), 0);
}

TEST(Eval, ShiftsMaskCount) {
  auto shl = method("(II)I", "    .registers 2\n    shl-int p0, p0, p1\n    return p0\n");
  EXPECT_EQ(run(shl, {1, 33}), 2);
  auto ushr = method("(I)I", "    .registers 1\n    ushr-int/lit8 p0, p0, 0x1c\n    return p0\n");
  EXPECT_EQ(run(ushr, {-1}), 15);
  auto shr = method("(I)I", "    .registers 1\n    shr-int/lit8 p0, p0, 0x1c\n    return p0\n");
  EXPECT_EQ(run(shr, {-1}), -1);
}

TEST(Eval, NarrowingAndLiterals) {
  auto b = method("(I)I", "    .registers 1\n    int-to-byte p0, p0\n    return p0\n");
  EXPECT_EQ(run(b, {0x1ff}), -1);
  auto c = method("(I)C", "    .registers 1\n    int-to-char p0, p0\n    return p0\n");
  EXPECT_EQ(run(c, {-1}), 0xffff);
  auto k = method("()I", "    .registers 1\n    const/high16 v0, 0x7f000000\n    return v0\n");
  EXPECT_EQ(run(k, {}), 0x7f000000);
  auto r = method("(I)I", "    .registers 1\n    rsub-int/lit8 p0, p0, -0x3\n    return p0\n");
  EXPECT_EQ(run(r, {4}), -7);
}

TEST(Eval, ForwardBranch) {
  auto m = method("(I)I",
                  "    .registers 2\n    if-gez p0, :pos\n    neg-int p0, p0\n    :pos\n"
                  "    move v0, p0\n    return v0\n");
  EXPECT_EQ(run(m, {-9}), 9);
  EXPECT_EQ(run(m, {9}), 9);
}

TEST(Eval, Faults) {
  auto uninit = method("()I", "    .registers 1\n    return v0\n");
  EXPECT_THROW(run(uninit, {}), ExecFault);
  auto off = method("(I)I", "    .registers 1\n    add-int/lit8 p0, p0, 1\n");
  EXPECT_THROW(run(off, {1}), ExecFault);
  auto add = fixtures::load("arith_original.smali").methods[0];
  EXPECT_THROW(run(add, {1}), std::invalid_argument);
}

TEST(Eval, Unsupported) {
  EXPECT_THROW(run(fixtures::load("arith_condition.smali").methods[0], {1, 2}),
               UnsupportedMethod);
  auto inst = method("(I)I", "    .registers 2\n    return p1\n", "public");
  EXPECT_FALSE(unsupported_reason(inst).empty());
  auto obj = method("(Ljava/lang/String;)I", "    .registers 1\n    const/4 v0, 0\n    return v0\n");
  EXPECT_THROW(run(obj, {0}), UnsupportedMethod);
  auto call = method("()I", "    .registers 1\n    invoke-static {}, LA;->g()I\n"
                            "    move-result v0\n    return v0\n");
  EXPECT_FALSE(unsupported_reason(call).empty());
  EXPECT_TRUE(unsupported_reason(fixtures::load("arith_original.smali").methods[0]).empty());
}

TEST(Equivalence, Verdicts) {
  auto orig = fixtures::load("arith_original.smali");
  auto nop = fixtures::load("arith_nop.smali");
  auto r = check_equivalence(orig.methods[0], nop.methods[0]);
  EXPECT_EQ(r.verdict, Verdict::Equal);
  EXPECT_GE(r.cases, 1000u);

  auto ne = check_equivalence(orig.methods[0], orig.methods[1]);
  EXPECT_EQ(ne.verdict, Verdict::NotEqual);
  ASSERT_EQ(ne.witness.size(), 2u);
  EXPECT_NE(ne.original_outcome, ne.modified_outcome);
  EXPECT_NE(eval_method(orig.methods[0], ne.witness), eval_method(orig.methods[1], ne.witness));

  auto ab = check_equivalence(orig.methods[0], fixtures::load("arith_condition.smali").methods[0]);
  EXPECT_EQ(ab.verdict, Verdict::Abstain);
  EXPECT_FALSE(ab.reason.empty());
}

TEST(Equivalence, MatchingFaultsAreEqual) {
  auto div = method("(II)I", "    .registers 2\n    div-int p0, p0, p1\n    return p0\n");
  auto padded = method("(II)I", "    .registers 2\n    nop\n    div-int p0, p0, p1\n    return p0\n");
  EXPECT_EQ(check_equivalence(div, padded).verdict, Verdict::Equal);
}

TEST(Equivalence, EdgeCasesFindCornerBug) {
  // Differs only at INT32_MIN, which random sampling alone would rarely hit.
  auto a = method("(I)I", "    .registers 1\n    neg-int p0, p0\n    return p0\n");
  auto b = method("(I)I",
                  "    .registers 2\n    const v0, 0x80000000\n    if-ne p0, v0, :ok\n"
                  "    const/4 p0, 0\n    return p0\n    :ok\n    neg-int p0, p0\n    return p0\n");
  auto r = check_equivalence(a, b, 10);
  EXPECT_EQ(r.verdict, Verdict::NotEqual);
  EXPECT_EQ(r.witness, std::vector<std::int32_t>{INT32_MIN});
}

TEST(Equivalence, Deterministic) {
  auto orig = fixtures::load("arith_original.smali");
  auto a = check_equivalence(orig.methods[0], orig.methods[1], 50, 9);
  auto b = check_equivalence(orig.methods[0], orig.methods[1], 50, 9);
  EXPECT_EQ(a.witness, b.witness);
  EXPECT_EQ(to_string(Verdict::NotEqual), "not-equal");
}
