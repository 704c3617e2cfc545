#include <gtest/gtest.h>

#include "statelens/learner.hpp"

using namespace statelens;
using namespace statelens::learner;

namespace {

std::string state_after(const LearnReport& r, const model::Word& w) {
  return r.model.states()[r.model.state_after(w)].id;
}

LearnReport learn_named(const std::string& name, vm::ParamMap params = {}, LearnConfig cfg = {}) {
  return learn(protocols::load_spec(name, params), cfg);
}

}  // namespace

TEST(StateKey, HappyFlowIndependentOfSeed) {
  auto spec = protocols::load_spec("backdoor");
  GreyBoxLearner gb(spec, {});
  gb.learn();
  const auto& cands = gb.candidates();
  monitor::MonitorOptions a, b;
  a.seed = 11;
  b.seed = 12345;
  auto ra = monitor::run_monitored(spec, spec.happy_flow, a);
  auto rb = monitor::run_monitored(spec, spec.happy_flow, b);
  for (std::size_t k = 0; k < spec.happy_flow.size(); ++k) {
    auto ka = state_key(*ra.post_state(k)->payload, cands,
                        memdiff::align_allocations(ra.alloc_log, cands.base_log));
    auto kb = state_key(*rb.post_state(k)->payload, cands,
                        memdiff::align_allocations(rb.alloc_log, cands.base_log));
    EXPECT_EQ(ka, kb) << k;
  }
}

TEST(StateKey, AuthChangesKey) {
  auto spec = protocols::load_spec("backdoor");
  GreyBoxLearner gb(spec, {});
  gb.learn();
  const auto& cands = gb.candidates();
  auto run = monitor::run_monitored(spec, {"auth"});
  auto map = memdiff::align_allocations(run.alloc_log, cands.base_log);
  EXPECT_NE(state_key(*run.initial_state()->payload, cands, map),
            state_key(*run.post_state(0)->payload, cands, map));
}

TEST(StateKey, TerminalRunResolvesToTerminalState) {
  auto spec = protocols::load_spec("partial-shutdown");
  GreyBoxLearner gb(spec, {});
  auto r = gb.learn();
  auto id = gb.resolve({"data"});
  ASSERT_TRUE(id);
  EXPECT_TRUE(r.model.states()[*r.model.find_state(*id)].terminal);
  auto live = gb.resolve({"hello"});
  ASSERT_TRUE(live);
  EXPECT_FALSE(r.model.states()[*r.model.find_state(*live)].terminal);
}

TEST(Learn, BackdoorFindsBypass) {
  auto r = learn_named("backdoor", {{"N", 12}});
  EXPECT_EQ(r.exit, ExitKind::kConverged);
  EXPECT_TRUE(model::equivalent(r.model, protocols::backdoor_reference(12)).equal);
  model::Word w(12, "init");
  w.push_back("data");
  EXPECT_EQ(r.model.run(w).back(), "DATA");
  EXPECT_LT(r.stats.total_queries, 1000u);
}

TEST(Learn, CounterLoopMerges) {
  auto r = learn_named("counter-loop");
  EXPECT_EQ(r.model.size(), 2u);
  EXPECT_GE(r.stats.merges, 1u);
  EXPECT_TRUE(model::equivalent(r.model, *protocols::load_spec("counter-loop").reference).equal);
  // One and two messages after the greeting land in the same state.
  EXPECT_EQ(state_after(r, {"hello", "msg"}), state_after(r, {"hello", "msg", "msg"}));
  for (const auto& m : r.merges)
    for (const auto& v : m.verdicts)
      EXPECT_EQ(v.verdict.kind, dataflow::VerdictKind::kNotStateDefining);
}

TEST(Learn, ReplayCounterHitsTimeBound) {
  LearnConfig cfg;
  cfg.time_bound = 3;
  auto r = learn_named("replay-counter", {}, cfg);
  EXPECT_EQ(r.exit, ExitKind::kTimeBound);
  EXPECT_EQ(r.exit_code(), 2);
  std::size_t kept = 0;
  for (const auto& m : r.merges) {
    EXPECT_FALSE(m.merged);
    ASSERT_FALSE(m.verdicts.empty());
    const auto& v = m.verdicts.back();
    if (v.verdict.kind != dataflow::VerdictKind::kStateDefining) continue;
    ++kept;
    EXPECT_TRUE(v.verdict.branch_pc && v.verdict.write_pc);
  }
  EXPECT_GT(kept, 0u);
}

TEST(Learn, IoInequivalentPairsSkipDataflow) {
  auto r = learn_named("backdoor", {{"N", 3}});
  // Authenticated states answer data differently, so they are never analysed
  // against unauthenticated ones.
  for (const auto& m : r.merges) {
    auto authed = [&](const model::Word& w) {
      auto x = w;
      x.push_back("data");
      return r.model.run(x).back() == "DATA";
    };
    EXPECT_EQ(authed(m.base_access), authed(m.merge_access));
  }
}

TEST(Learn, QueryCapExit) {
  LearnConfig cfg;
  cfg.query_cap = 40;
  auto r = learn_named("handshake-bypass", {{"READ_SEQ_LIMIT", 5}}, cfg);
  EXPECT_EQ(r.exit, ExitKind::kQueryCap);
  EXPECT_EQ(r.exit_code(), 2);
}

TEST(Learn, RejectsZeroDepth) {
  LearnConfig cfg;
  cfg.D = 0;
  EXPECT_THROW(learn_named("counter-loop", {}, cfg), std::invalid_argument);
}

TEST(Learn, StableUnderDepth) {
  for (auto name : {"counter-loop", "early-keys", "partial-shutdown"}) {
    LearnConfig d3, d4;
    d4.D = 4;
    auto a = learn_named(name, {}, d3);
    auto b = learn_named(name, {}, d4);
    EXPECT_EQ(model::export_json(a.model), model::export_json(b.model)) << name;
  }
}

TEST(Learn, DeterministicModelJson) {
  auto a = learn_named("early-keys");
  auto b = learn_named("early-keys");
  EXPECT_EQ(model::export_json(a.model), model::export_json(b.model));
}

TEST(Report, JsonRoundTrip) {
  auto r = learn_named("counter-loop");
  auto back = report_from_json(report_to_json(r));
  EXPECT_EQ(report_to_json(back), report_to_json(r));
  EXPECT_THROW(report_from_json("{}"), model::SchemaError);
}

TEST(Explain, EarlyKeysStatesShareStateDefiningMemory) {
  auto spec = protocols::load_spec("early-keys");
  auto r = learn(spec);
  auto happy = state_after(r, {"hello", "kex", "activate"});
  auto early = state_after(r, {"activate"});
  ASSERT_NE(happy, early);
  auto ex = explain(spec, r, happy, early);
  EXPECT_FALSE(ex.differing.empty());
  ASSERT_FALSE(ex.verdicts.empty());
  for (const auto& v : ex.verdicts)
    EXPECT_EQ(v.verdict.kind, dataflow::VerdictKind::kNotStateDefining) << v.verdict.note;
}

TEST(Explain, UnknownStateThrows) {
  auto spec = protocols::load_spec("counter-loop");
  auto r = learn(spec);
  EXPECT_THROW(explain(spec, r, "s0", "nope"), std::invalid_argument);
}

TEST(Learn, BootstrapQueriesNotRepeated) {
  for (auto name : {"backdoor", "counter-loop", "early-keys", "partial-shutdown", "handshake-bypass"}) {
    auto r = learn_named(name);
    EXPECT_EQ(r.stats.repeated_queries, 0u) << name;
    EXPECT_GT(r.stats.bootstrap_queries, 0u) << name;
  }
}
