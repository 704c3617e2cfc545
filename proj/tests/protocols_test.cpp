#include <random>

#include <gtest/gtest.h>

#include "statelens/harness.hpp"
#include "statelens/protocols.hpp"
#include "support.hpp"

using namespace statelens;

using support::random_word;

TEST(Protocols, CorpusLoads) {
  auto specs = protocols::corpus();
  ASSERT_EQ(specs.size(), 6u);
  for (auto& s : specs) {
    EXPECT_NO_THROW(s.program()) << s.name;
    EXPECT_EQ(s.reference.has_value(), !s.infinite) << s.name;
  }
}

TEST(Protocols, HappyFlowHasNoErrors) {
  for (auto& spec : protocols::corpus()) {
    auto r = harness::execute_query(spec, spec.happy_flow, 1);
    for (auto& o : r.outputs) {
      EXPECT_EQ(std::count(spec.error_outputs.begin(), spec.error_outputs.end(), o), 0)
          << spec.name << " " << o;
      EXPECT_NE(o, model::kClosed) << spec.name;
    }
  }
}

TEST(Protocols, ImplementationMatchesReference) {
  for (auto& spec : protocols::corpus()) {
    if (!spec.reference) continue;
    std::mt19937_64 rng(7);
    for (int i = 0; i < 300; ++i) {
      auto w = random_word(rng, spec.input_names(), 16);
      auto got = harness::execute_query(spec, w, rng()).outputs;
      auto want = spec.reference->run(w);
      ASSERT_EQ(got, want) << spec.name << " on word " << i;
    }
  }
}

TEST(Protocols, ExhaustiveAgreementUpToLengthSix) {
  for (auto& spec : protocols::corpus()) {
    if (!spec.reference) continue;
    for (const auto& w : support::all_words(spec.input_names(), 6))
      ASSERT_EQ(harness::execute_query(spec, w, 3).outputs, spec.reference->run(w)) << spec.name;
  }
}

TEST(Protocols, BackdoorDepthTwelveReference) {
  auto ref = protocols::backdoor_reference(12);
  model::Word w(12, "init");
  w.push_back("data");
  EXPECT_EQ(ref.run(w).back(), "DATA");
  model::Word w11(11, "init");
  w11.push_back("data");
  EXPECT_EQ(ref.run(w11).back(), "ERR");
}

// Over {init, auth} a client is authenticated once it has sent auth or N inits.
TEST(Protocols, BackdoorBypassMatchesBruteForce) {
  for (int n : {3, 5, 12}) {
    auto spec = protocols::load_spec("backdoor", {{"N", n}});
    auto ref = protocols::backdoor_reference(n);
    std::mt19937_64 rng(n);
    std::vector<model::Word> words;
    if (n <= 5) {
      words = support::all_words({"init", "auth"}, static_cast<std::size_t>(n) + 2);
    } else {
      for (int i = 0; i < 400; ++i)
        words.push_back(support::random_word(rng, {"init", "auth"}, n + 2));
      words.push_back(model::Word(static_cast<std::size_t>(n), "init"));
      words.push_back(model::Word(static_cast<std::size_t>(n) - 1, "init"));
    }
    for (auto w : words) {
      bool authed = std::count(w.begin(), w.end(), "auth") > 0 ||
                    w.size() >= static_cast<std::size_t>(n);
      w.push_back("data");
      auto expected = authed ? "DATA" : "ERR";
      EXPECT_EQ(harness::execute_query(spec, w, rng()).outputs.back(), expected);
      EXPECT_EQ(ref.run(w).back(), expected);
    }
  }
}

TEST(Protocols, CounterLoopReferenceHasTwoStates) {
  auto spec = protocols::load_spec("counter-loop");
  ASSERT_TRUE(spec.reference);
  EXPECT_EQ(spec.reference->minimal_size(), 2u);
}

TEST(Protocols, HandshakeBypassReferencesMatchProgram) {
  for (int n : {0, 2, 5}) {
    auto spec = protocols::load_spec("handshake-bypass", {{"READ_SEQ_LIMIT", n}});
    auto ref = protocols::handshake_bypass_reference(n);
    std::mt19937_64 rng(11 + n);
    for (int i = 0; i < 200; ++i) {
      auto w = random_word(rng, spec.input_names(), 12);
      ASSERT_EQ(harness::execute_query(spec, w, rng()).outputs, ref.run(w));
    }
  }
}

TEST(Protocols, UnknownProtocolThrows) {
  EXPECT_THROW(protocols::load_spec("nope"), protocols::UnknownProtocol);
}

TEST(Harness, BackdoorAuth) {
  auto spec = protocols::load_spec("backdoor");
  EXPECT_EQ(harness::execute_query(spec, {"auth"}, 1).outputs, model::Word{"AUTH_OK"});
}

TEST(Harness, EarlyActivationGivesDecryptError) {
  auto spec = protocols::load_spec("early-keys");
  EXPECT_EQ(harness::execute_query(spec, {"activate", "finish"}, 1).outputs,
            (model::Word{"EMPTY", "DECRYPT_ERROR"}));
}

TEST(Harness, ClosedAbsorbs) {
  auto spec = protocols::load_spec("early-keys");
  auto out = harness::execute_query(spec, {"data", "hello", "hello"}, 1).outputs;
  EXPECT_EQ(out, (model::Word{"ALERT", "CLOSED", "CLOSED"}));
}

TEST(Harness, OutputsIndependentOfSeedAndPrefixConsistent) {
  for (auto& spec : protocols::corpus()) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 50; ++i) {
      auto w = random_word(rng, spec.input_names(), 8);
      auto a = harness::execute_query(spec, w, rng()).outputs;
      auto b = harness::execute_query(spec, w, rng()).outputs;
      ASSERT_EQ(a, b) << spec.name;
      ASSERT_EQ(a.size(), w.size());
      auto longer = w;
      longer.push_back(spec.input_names().front());
      auto c = harness::execute_query(spec, longer, rng()).outputs;
      ASSERT_TRUE(std::equal(a.begin(), a.end(), c.begin())) << spec.name;
    }
  }
}
