#include <gtest/gtest.h>

#include "statelens/memdiff.hpp"
#include "statelens/monitor.hpp"
#include "properties.hpp"

using namespace statelens;
using namespace statelens::memdiff;

namespace {

AllocationRecord alloc(std::uint64_t size, std::uint64_t ctx, std::uint64_t addr) {
  return {0, AllocKind::kAlloc, size, ctx, addr, 0};
}

using props::bootstrap;

bool has(const CandidateSet& c, MemoryLocation want) {
  for (const auto& l : c.locations)
    if (l.alloc_id == want.alloc_id && l.offset == want.offset && l.size == want.size) return true;
  return false;
}

void expect_disjoint(const CandidateSet& c) {
  for (std::size_t i = 0; i < c.locations.size(); ++i)
    for (std::size_t j = i + 1; j < c.locations.size(); ++j)
      EXPECT_FALSE(c.locations[i].overlaps(c.locations[j]));
}

}  // namespace

TEST(Bootstrap, PlanSizeFormula) {
  auto plan = gen_bootstrap({"a", "b", "c", "d"}, {"a", "b", "c", "d"}, 3);
  EXPECT_EQ(plan.queries.size(), 17u);
  EXPECT_EQ(plan.max_length(), 7u);
  EXPECT_EQ(plan.queries[0], (model::Word{"a", "b", "c", "d"}));
}

TEST(Bootstrap, SingleRepetition) {
  auto plan = gen_bootstrap({"x", "y"}, {"x", "y", "z"}, 1);
  for (std::size_t q = 1; q < plan.queries.size(); ++q) {
    const auto& w = plan.queries[q];
    ASSERT_GE(w.size(), 2u);
    model::Word prefix(w.begin(), w.end() - 1);
    EXPECT_TRUE((prefix == model::Word{"x"} || prefix == model::Word{"x", "y"}));
  }
  EXPECT_THROW(gen_bootstrap({"x"}, {"x"}, 0), std::invalid_argument);
}

TEST(Bootstrap, BackdoorContainsRepeatedInit) {
  auto plan = gen_bootstrap({"auth"}, {"init", "auth", "data", "reset"}, 3);
  EXPECT_NE(std::find(plan.queries.begin(), plan.queries.end(),
                      model::Word{"auth", "init", "init", "init"}),
            plan.queries.end());
}

TEST(Align, IdenticalLogsMapIdentically) {
  AllocationLog log{alloc(24, 1, 0x100), alloc(64, 2, 0x120), alloc(16, 3, 0x160)};
  auto map = align_allocations(log, log);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(map.to_base[i], i);
}

TEST(Align, MissingTrailingAllocation) {
  AllocationLog base{alloc(24, 1, 0x100), alloc(64, 2, 0x120), alloc(16, 3, 0x160)};
  AllocationLog run{alloc(24, 1, 0x900), alloc(64, 2, 0x920)};
  auto map = align_allocations(run, base);
  EXPECT_EQ(map.to_base.size(), 2u);
  EXPECT_EQ(map.run_of(0), 0u);
  EXPECT_EQ(map.run_of(1), 1u);
  EXPECT_FALSE(map.run_of(2));
}

TEST(Align, SwappedContextsMatchByContext) {
  AllocationLog base{alloc(16, 0xa, 0x100), alloc(16, 0xb, 0x110)};
  AllocationLog run{alloc(16, 0xb, 0x500), alloc(16, 0xa, 0x510)};
  auto map = align_allocations(run, base);
  auto ba = allocations_of(base);
  auto ra = allocations_of(run);
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ASSERT_TRUE(map.to_base[i]);
    EXPECT_EQ(ba[*map.to_base[i]].context, ra[i].context);
  }
}

TEST(Diff, DefaultAndVaryingBytesExcluded) {
  AllocationLog base{alloc(4, 1, 0x100)};
  std::map<std::string, std::vector<MemoryImage>> groups{
      {"g1", {{{0, 1, 7, 0}}, {{0, 1, 8, 0}}}},
      {"g2", {{{0, 2, 9, 0}}, {{0, 2, 3, 0}}}},
  };
  auto c = diff_snapshots(groups, base);
  EXPECT_FALSE(c.contains({0, 0}));
  EXPECT_TRUE(c.contains({0, 1}));
  EXPECT_FALSE(c.contains({0, 2}));
  EXPECT_TRUE(c.rejected.count({0, 2}));
  EXPECT_FALSE(c.contains({0, 3}));
  EXPECT_THROW(diff_snapshots({}, base), InsufficientRuns);
  EXPECT_THROW(diff_snapshots({{"g", {{{1, 2, 3, 4}}}}}, base), InsufficientRuns);
}

TEST(Diff, NonceByteRejected) {
  auto p = bootstrap(protocols::load_spec("counter-loop"));
  EXPECT_TRUE(p.diffed.rejected.count({0, 16}));
  EXPECT_FALSE(p.diffed.contains({0, 16}));
}

TEST(Diff, BackdoorStateAndCounterEnterM) {
  auto p = bootstrap(protocols::load_spec("backdoor", {{"N", 12}}));
  EXPECT_TRUE(p.diffed.contains({0, 0}));
  EXPECT_TRUE(p.diffed.contains({0, 8}));
  EXPECT_TRUE(has(p.typed, {0, 0, 1, 1}));
  // The counter stays below 256, yet the load.4 widens it to four bytes.
  EXPECT_TRUE(has(p.typed, {0, 8, 4, 4}));
}

TEST(Minimize, DropsPointersAndConstantBuffers) {
  auto p = bootstrap(protocols::load_spec("handshake-bypass", {{"READ_SEQ_LIMIT", 5}}));
  // Certificate pointer at offset 16 and the 64-byte certificate allocation.
  for (std::uint64_t o = 16; o < 24; ++o) EXPECT_FALSE(p.minimized.contains({0, o}));
  EXPECT_FALSE(p.minimized.allocations().count(1));
  EXPECT_TRUE(has(p.typed, {0, 8, 4, 4}));
  EXPECT_TRUE(has(p.typed, {0, 0, 1, 1}));
}

TEST(Minimize, PointerWordRemoved) {
  AllocationLog base{alloc(16, 1, 0x5000)};
  CandidateSet c;
  c.base_log = base;
  c.locations = {{0, 0, 8, 0}, {0, 8, 4, 0}};
  std::vector<std::uint8_t> bytes(16, 0);
  bytes[0] = 0x08;
  bytes[1] = 0x50;
  bytes[8] = 3;
  ProjectedSnapshot a{{bytes}, {{0x5000, 16}}};
  auto b = a;
  b.image[0][8] = 4;
  auto m = minimize(c, {a, a, b});
  EXPECT_FALSE(m.contains({0, 0}));
  EXPECT_TRUE(m.contains({0, 8}));
}

TEST(Minimize, LongStaticRunRemoved) {
  AllocationLog base{alloc(80, 1, 0x5000)};
  CandidateSet c;
  c.base_log = base;
  c.locations = {{0, 0, 64, 0}, {0, 70, 4, 0}};
  std::vector<std::uint8_t> bytes(80, 0x41);
  ProjectedSnapshot a{{bytes}, {}};
  auto b = a;
  b.image[0][70] = 0x42;
  auto m = minimize(c, {a, b, a});
  EXPECT_FALSE(m.contains({0, 0}));
  EXPECT_TRUE(m.contains({0, 70}));
}

TEST(Types, OverlappedAccessProgram) {
  auto program = std::make_shared<const vm::Program>(
      vm::load_program(protocols::corpus_file("typeinfer.toyasm"), {}, "typeinfer"));
  auto s = vm::create_session(program, 1);
  std::vector<MemAccess> accesses;
  vm::TraceHooks hooks;
  auto record = [&](bool write) {
    return [&, write](std::size_t pc, std::uint64_t addr, unsigned w, std::uint64_t,
                      vm::AccessKind k) {
      if (k == vm::AccessKind::kProgram) accesses.push_back({pc, addr, w, write, 0});
    };
  };
  hooks.on_read = record(false);
  hooks.on_write = record(true);
  AllocationLog log;
  while (s.status() == vm::SessionStatus::kRunning) {
    auto r = s.step_traced(hooks);
    if (r.event && r.event->kind == vm::EventKind::kAllocated)
      log.push_back({0, AllocKind::kAlloc, r.event->size, r.event->context, r.event->addr, 0});
  }
  CandidateSet c;
  c.base_log = log;
  c.locations = {{0, 0, 6, 0}};
  auto typed = infer_types(to_typed_accesses(accesses, s.state(), align_allocations(log, log)), c);
  ASSERT_EQ(typed.locations.size(), 2u);
  EXPECT_EQ(typed.locations[0], (MemoryLocation{0, 0, 2, 2}));
  EXPECT_EQ(typed.locations[1], (MemoryLocation{0, 2, 4, 4}));
}

TEST(Types, ByteAccessIsTypeOne) {
  CandidateSet c;
  c.base_log = {alloc(8, 1, 0x100)};
  c.locations = {{0, 3, 1, 0}};
  auto typed = infer_types({{0, 3, 1}}, c);
  ASSERT_EQ(typed.locations.size(), 1u);
  EXPECT_EQ(typed.locations[0].type, 1u);
}

TEST(Types, RejectedBytesBlockWidening) {
  CandidateSet c;
  c.base_log = {alloc(8, 1, 0x100)};
  c.locations = {{0, 0, 1, 0}};
  c.rejected = {{0, 1}};
  auto typed = infer_types({{0, 0, 4}}, c);
  EXPECT_TRUE(typed.locations.empty());
}

TEST(MemdiffProperty, CorpusPipelineIsMonotoneAndDisjoint) {
  for (const auto& spec : protocols::corpus()) {
    auto p = bootstrap(spec);
    for (const auto& l : p.minimized.locations)
      for (auto o = l.offset; o < l.end(); ++o)
        EXPECT_TRUE(p.diffed.contains({l.alloc_id, o})) << spec.name;
    expect_disjoint(p.diffed);
    expect_disjoint(p.minimized);
    expect_disjoint(p.typed);
  }
}

TEST(MemdiffProperty, DistinctReferenceStatesProjectDifferently) {
  for (const auto& spec : protocols::corpus()) {
    if (!spec.reference) continue;
    auto p = bootstrap(spec);
    auto plan = gen_bootstrap(spec);
    // Reference state -> candidate valuation, over every bootstrap prefix.
    std::map<std::size_t, std::vector<std::uint8_t>> seen;
    for (const auto& q : plan.queries) {
      auto run = monitor::run_monitored(spec, q);
      auto map = align_allocations(run.alloc_log, p.typed.base_log);
      for (std::size_t k = 0; k < q.size(); ++k) {
        if (run.alignment.terminal != TerminalKind::kNone) break;
        const auto* s = run.post_state(k);
        if (!s) continue;
        auto ref_state = spec.reference->state_after(model::Word(q.begin(), q.begin() + k + 1));
        auto val = p.typed.project(project(*s->payload, map, p.typed.base_log));
        for (const auto& [other, v] : seen)
          if (other != ref_state) EXPECT_NE(v, val) << spec.name;
        seen[ref_state] = val;
      }
    }
  }
}
