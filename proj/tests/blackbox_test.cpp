#include <gtest/gtest.h>

#include "statelens/blackbox.hpp"
#include "statelens/learner.hpp"

using namespace statelens;

TEST(QueryCache, AnswersPrefixesAndClosedExtensions) {
  int calls = 0;
  blackbox::QueryCache cache([&](const model::Word& w) {
    ++calls;
    model::Word out;
    for (const auto& i : w) out.push_back(out.empty() || out.back() != "CLOSED"
                                              ? (i == "q" ? "CLOSED" : "OK")
                                              : "CLOSED");
    return out;
  });
  cache.query({"a", "b", "c"});
  EXPECT_EQ(cache.query({"a", "b"}), (model::Word{"OK", "OK"}));
  EXPECT_EQ(calls, 1);
  cache.query({"q"});
  EXPECT_EQ(cache.query({"q", "a", "b"}), (model::Word{"CLOSED", "CLOSED", "CLOSED"}));
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(cache.executed(), 2u);
}

TEST(BlackBox, BackdoorBypassMissedAtDepthTwo) {
  auto spec = protocols::load_spec("backdoor", {{"N", 12}});
  blackbox::BlackBoxConfig cfg;
  cfg.depth_bound = 2;
  cfg.query_cap = 50000;
  auto r = blackbox::learn_bb(spec, cfg);
  for (std::size_t k = 1; k <= 14; ++k) {
    model::Word w(k, "init");
    w.push_back("data");
    EXPECT_NE(r.model.run(w).back(), "DATA") << k;
  }
}

TEST(BlackBox, CounterLoopMatchesGreyBox) {
  auto spec = protocols::load_spec("counter-loop");
  auto bb = blackbox::learn_bb(spec);
  auto gb = learner::learn(spec);
  EXPECT_EQ(bb.exit, ExitKind::kConverged);
  EXPECT_EQ(bb.model.size(), 2u);
  EXPECT_TRUE(model::equivalent(bb.model, gb.model).equal);
}

TEST(BlackBox, ConvergesToReferenceWithSufficientDepth) {
  for (auto name : {"backdoor", "counter-loop", "early-keys", "partial-shutdown"}) {
    auto spec = protocols::load_spec(name, name == std::string("backdoor")
                                               ? vm::ParamMap{{"N", 3}}
                                               : vm::ParamMap{});
    blackbox::BlackBoxConfig cfg;
    cfg.depth_bound = std::max<unsigned>(2, static_cast<unsigned>(spec.reference->diameter()));
    auto r = blackbox::learn_bb(spec, cfg);
    EXPECT_TRUE(model::equivalent(r.model, *spec.reference).equal) << spec.name;
  }
}

TEST(BlackBox, HypothesisRowsMatchReplay) {
  auto spec = protocols::load_spec("early-keys");
  auto r = blackbox::learn_bb(spec);
  for (const auto& [id, access] : r.access) {
    for (const auto& i : spec.input_names()) {
      auto w = access;
      w.push_back(i);
      EXPECT_EQ(r.model.run(w), harness::execute_query(spec, w, 3).outputs) << id << " " << i;
    }
  }
}

TEST(BlackBox, QueryCapStopsLearning) {
  auto spec = protocols::load_spec("partial-shutdown");
  blackbox::BlackBoxConfig cfg;
  cfg.query_cap = 20;
  auto r = blackbox::learn_bb(spec, cfg);
  EXPECT_EQ(r.exit, ExitKind::kQueryCap);
  EXPECT_EQ(r.exit_code(), 2);
  EXPECT_LE(r.stats.total_queries, 20u);
}
