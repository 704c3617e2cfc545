#include <random>

#include <gtest/gtest.h>

#include "statelens/model.hpp"
#include "statelens/protocols.hpp"
#include "support.hpp"

using namespace statelens;
using namespace statelens::model;

namespace {

MealyMachine without_bypass(int n) {
  auto m = protocols::backdoor_reference(n);
  auto last = *m.find_state("U" + std::to_string(n - 1));
  m.set_transition(last, "init", "INIT_OK", last);
  return m;
}

MealyMachine two_state(const std::string& a, const std::string& b) {
  MealyMachine m({"x", "y"});
  auto s0 = m.add_state(a);
  auto s1 = m.add_state(b);
  m.set_transition(s0, "x", "X", s1);
  m.set_transition(s0, "y", "EMPTY", s0);
  m.set_transition(s1, "x", "X2", s1);
  m.set_transition(s1, "y", "Y", s0);
  m.set_initial(s0);
  return m;
}

// Random complete machine over a fixed alphabet.
MealyMachine random_machine(std::mt19937_64& rng, std::size_t states) {
  MealyMachine m({"a", "b", "c"});
  for (std::size_t s = 0; s < states; ++s) m.add_state("q" + std::to_string(s));
  std::uniform_int_distribution<std::size_t> pick(0, states - 1);
  std::uniform_int_distribution<int> out(0, 2);
  for (std::size_t s = 0; s < states; ++s)
    for (const auto& i : m.inputs()) m.set_transition(s, i, "o" + std::to_string(out(rng)), pick(rng));
  m.set_initial(0);
  return m;
}

}  // namespace

TEST(Model, SelfEquivalent) {
  auto m = protocols::backdoor_reference(12);
  EXPECT_TRUE(equivalent(m, m).equal);
}

TEST(Model, MissingBypassCounterexample) {
  auto eq = equivalent(protocols::backdoor_reference(12), without_bypass(12));
  ASSERT_FALSE(eq.equal);
  // Twelve inits reach the diverging state; one more input exposes it.
  ASSERT_EQ(eq.counterexample.size(), 13u);
  EXPECT_EQ(Word(eq.counterexample.begin(), eq.counterexample.begin() + 12), Word(12, "init"));
}

TEST(Model, RenamedStatesAreEqual) {
  EXPECT_TRUE(equivalent(two_state("a", "b"), two_state("left", "right")).equal);
}

TEST(Model, JsonRoundTripOfCorpusReferences) {
  for (const auto& spec : protocols::corpus()) {
    if (!spec.reference) continue;
    auto back = import_json(export_json(*spec.reference));
    EXPECT_TRUE(equivalent(back, *spec.reference).equal) << spec.name;
  }
}

TEST(Model, DotDeclaresEveryNode) {
  auto dot = export_dot(two_state("a", "b"));
  std::size_t nodes = 0;
  for (auto p = dot.find("shape="); p != std::string::npos; p = dot.find("shape=", p + 1)) ++nodes;
  EXPECT_EQ(nodes, 2u);
  EXPECT_NE(dot.find("label=\"a\""), std::string::npos);
  EXPECT_NE(dot.find("x/X"), std::string::npos);
}

TEST(Model, ImportRejectsUnknownState) {
  auto text = R"({"inputs":["x"],"states":[{"id":"a","terminal":false}],"initial":"a",
    "transitions":[{"from":"a","input":"x","output":"X","to":"zz"}]})";
  EXPECT_THROW(import_json(text), SchemaError);
  EXPECT_THROW(import_json("not json"), SchemaError);
}

TEST(Model, TerminalStatesLoopClosed) {
  MealyMachine m({"x"});
  auto s = m.add_state("t", true);
  auto step = m.step(s, "x");
  ASSERT_TRUE(step);
  EXPECT_EQ(step->output, kClosed);
  EXPECT_EQ(step->to, s);
  EXPECT_TRUE(m.is_complete());
}

TEST(Model, DiameterAndMinimalSize) {
  auto m = protocols::backdoor_reference(5);
  EXPECT_EQ(m.diameter(), 4u);
  EXPECT_EQ(m.minimal_size(), 6u);
}

TEST(ModelProperty, EquivalenceSymmetricWithValidCounterexample) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    auto a = random_machine(rng, 1 + seed % 5);
    auto b = random_machine(rng, 1 + (seed / 5) % 5);
    auto ab = equivalent(a, b);
    auto ba = equivalent(b, a);
    ASSERT_EQ(ab.equal, ba.equal) << seed;
    ASSERT_TRUE(equivalent(a, a).equal);
    if (!ab.equal) {
      EXPECT_NE(a.run(ab.counterexample), b.run(ab.counterexample)) << seed;
      EXPECT_EQ(ab.counterexample.size(), ba.counterexample.size()) << seed;
    }
  }
}
