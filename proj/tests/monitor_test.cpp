#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "statelens/monitor.hpp"
#include "support.hpp"

using namespace statelens;
using namespace statelens::monitor;

namespace {

vm::ExecutionEvent event(vm::EventKind kind, std::uint64_t addr, std::vector<std::uint8_t> bytes,
                         std::uint32_t channel = 0) {
  vm::ExecutionEvent e;
  e.kind = kind;
  e.addr = addr;
  e.channel = channel;
  e.size = bytes.size();
  e.payload = std::move(bytes);
  return e;
}

harness::QueryResult io(std::vector<std::vector<std::uint8_t>> in,
                        std::vector<std::vector<std::uint8_t>> out) {
  harness::QueryResult r;
  std::uint64_t ts = 0;
  for (auto& b : in) r.io_log.push_back({harness::IoEvent::Kind::kInputSent, ++ts, 0, "", b});
  for (auto& b : out)
    r.io_log.push_back({harness::IoEvent::Kind::kOutputReceived, ++ts, 0, "", b});
  return r;
}

Snapshot snap(vm::EventKind kind, int index, std::uint64_t ts) {
  Snapshot s;
  s.payload = std::make_shared<vm::MachineState>();
  s.event = kind;
  s.query_index = index;
  s.timestamp = ts;
  return s;
}

}  // namespace

TEST(Patterns, BackdoorHappyFlow) {
  auto spec = protocols::load_spec("backdoor");
  auto run = run_monitored(spec, spec.happy_flow);
  auto p = infer_io_patterns(run.events, run.result);
  ASSERT_TRUE(p.input && p.output);
  EXPECT_EQ(p.input->kind, vm::EventKind::kReadReturned);
  EXPECT_EQ(p.output->kind, vm::EventKind::kWriteAboutToExecute);
  EXPECT_NE(std::find(p.close.begin(), p.close.end(), vm::EventKind::kClosed), p.close.end());
}

TEST(Patterns, SilentTraceHasNoOutputPattern) {
  std::vector<vm::ExecutionEvent> events{event(vm::EventKind::kReadReturned, 0x100, {1, 2})};
  auto p = infer_io_patterns(events, io({{1, 2}}, {}));
  EXPECT_TRUE(p.input);
  EXPECT_FALSE(p.output);
}

TEST(Patterns, SharedReadParametersAreAmbiguous) {
  std::vector<vm::ExecutionEvent> events{
      event(vm::EventKind::kReadReturned, 0x100, {1, 2}),
      event(vm::EventKind::kReadReturned, 0x100, {9}, 0),
      event(vm::EventKind::kReadReturned, 0x100, {3, 4}),
  };
  EXPECT_THROW(infer_io_patterns(events, io({{1, 2}, {3, 4}}, {})), PatternAmbiguous);
}

TEST(Patterns, MissingStreamNotFound) {
  std::vector<vm::ExecutionEvent> events{event(vm::EventKind::kReadReturned, 0x100, {7})};
  EXPECT_THROW(infer_io_patterns(events, io({{1}}, {})), PatternNotFound);
}

TEST(Alignment, ShutdownAfterBadFirstMessage) {
  auto spec = protocols::load_spec("partial-shutdown");
  auto run = run_monitored(spec, {"data"});
  EXPECT_EQ(run.alignment.terminal, TerminalKind::kShutdownRead);
  EXPECT_EQ(run.alignment.terminal_index, 0);
}

TEST(Alignment, HappyFlowIsTotal) {
  auto spec = protocols::load_spec("backdoor");
  auto run = run_monitored(spec, spec.happy_flow);
  EXPECT_TRUE(run.alignment.total());
  EXPECT_EQ(run.alignment.terminal, TerminalKind::kNone);
  ASSERT_TRUE(run.initial_state());
  for (std::size_t k = 0; k < spec.happy_flow.size(); ++k) EXPECT_TRUE(run.post_state(k));
}

TEST(Alignment, LatestBeforeNextReadWins) {
  using vm::EventKind;
  std::vector<Snapshot> snaps{
      snap(EventKind::kReadAboutToExecute, -1, 1), snap(EventKind::kReadReturned, 0, 2),
      snap(EventKind::kWriteAboutToExecute, 0, 3), snap(EventKind::kWriteAboutToExecute, 0, 4),
      snap(EventKind::kReadAboutToExecute, 0, 5),  snap(EventKind::kReadReturned, 1, 6),
      snap(EventKind::kReadAboutToExecute, 1, 7),
  };
  auto a = align_events(snaps, TerminalKind::kNone, -1, {"OUT", "OUT"});
  EXPECT_EQ(a.initial, 0u);
  EXPECT_EQ(a.mapping[0], 4u);
  EXPECT_EQ(a.mapping[1], 6u);
  EXPECT_TRUE(a.total());
  // A silent last input has no later read to confirm its post-state.
  auto silent = align_events(snaps, TerminalKind::kNone, -1, {"OUT", "EMPTY"});
  EXPECT_EQ(silent.mapping[0], 4u);
  EXPECT_FALSE(silent.mapping[1]);
  EXPECT_TRUE(silent.silent_tail);
}

TEST(SilentTail, CounterLoopSilentInputResolvesByNextRead) {
  auto spec = protocols::load_spec("counter-loop");
  auto run = run_monitored(spec, {"msg"});
  EXPECT_TRUE(run.alignment.silent_tail);
  auto probe = probe_silent_tail(spec, {"msg"});
  ASSERT_TRUE(probe.post_state);
  EXPECT_FALSE(probe.exploration_closed);
  EXPECT_EQ(probe.post_state->event, vm::EventKind::kReadAboutToExecute);
}

TEST(SilentTail, ShutdownStateClosesExploration) {
  auto spec = protocols::load_spec("partial-shutdown");
  auto probe = probe_silent_tail(spec, {"data", "hello"});
  EXPECT_TRUE(probe.exploration_closed);
  EXPECT_FALSE(probe.post_state);
  EXPECT_EQ(probe.runs.size(), spec.input_names().size());
}

TEST(Watch, ReadSequenceCounterHitAtCompare) {
  auto spec = protocols::load_spec("handshake-bypass", {{"READ_SEQ_LIMIT", 5}});
  model::Word prefix{"hello", "cert"};
  auto base = run_monitored(spec, prefix).alloc_log;
  MemoryLocation seq{0, 8, 4, 4};
  for (auto probe : {"data", "badverify"}) {
    auto w = watch_reads(spec, prefix, seq, base, probe);
    ASSERT_GE(w.hits.size(), 1u) << probe;
    const auto& ins = spec.program()->instructions[w.hits[0].pc];
    EXPECT_EQ(ins.op, vm::Opcode::kLoad);
    EXPECT_EQ(spec.program()->instructions[w.hits[0].pc + 1].op, vm::Opcode::kCmp);
  }
}

TEST(Watch, CounterIncrementRead) {
  auto spec = protocols::load_spec("counter-loop");
  model::Word prefix{"hello"};
  auto base = run_monitored(spec, prefix).alloc_log;
  auto w = watch_reads(spec, prefix, {0, 8, 8, 8}, base, "msg");
  ASSERT_FALSE(w.hits.empty());
  EXPECT_EQ(spec.program()->instructions[w.hits[0].pc + 1].op, vm::Opcode::kAdd);
}

TEST(Watch, UnreadLocationHasNoHits) {
  auto spec = protocols::load_spec("counter-loop");
  auto base = run_monitored(spec, {"hello"}).alloc_log;
  auto w = watch_reads(spec, {"hello"}, {0, 16, 1, 1}, base, "msg");
  EXPECT_TRUE(w.hits.empty());
}

TEST(Watch, UnmappedLocationThrows) {
  auto spec = protocols::load_spec("early-keys");
  auto base = run_monitored(spec, {"hello", "kex"}).alloc_log;
  EXPECT_THROW(watch_reads(spec, {"activate"}, {1, 0, 1, 1}, base, "finish"), LocationUnmapped);
}

TEST(Monitor, DoesNotInterfere) {
  std::mt19937_64 rng(17);
  for (const auto& spec : protocols::corpus()) {
    for (int i = 0; i < 30; ++i) {
      auto w = support::random_word(rng, spec.input_names(), 6);
      MonitorOptions opts;
      opts.seed = rng();
      opts.trace = i % 2;
      EXPECT_EQ(run_monitored(spec, w, opts).result.outputs,
                harness::execute_query(spec, w, opts.seed).outputs)
          << spec.name;
    }
  }
}

TEST(Storage, SnapshotStoreDeduplicates) {
  SnapshotStore store;
  vm::MachineState a;
  auto b = a;
  b.regs[3] = 7;
  auto ha = store.insert(a);
  EXPECT_EQ(store.insert(a), ha);
  EXPECT_NE(store.insert(b), ha);
  EXPECT_EQ(store.size(), 2u);
  EXPECT_EQ(*store.get(ha), vm::serialize(a));
}

TEST(Storage, DumpRoundTrip) {
  auto spec = protocols::load_spec("counter-loop");
  auto run = run_monitored(spec, {"hello", "msg", "msg"});
  auto path = std::filesystem::temp_directory_path() / "statelens_monitor_test.snap";
  write_snapshot_dump(path, run.snapshots);
  auto back = read_snapshot_dump(path);
  std::filesystem::remove(path);
  ASSERT_EQ(back.size(), run.snapshots.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(*back[i].payload, *run.snapshots[i].payload);
    EXPECT_EQ(back[i].event, run.snapshots[i].event);
    EXPECT_EQ(back[i].timestamp, run.snapshots[i].timestamp);
    EXPECT_EQ(back[i].query_index, run.snapshots[i].query_index);
  }
}

TEST(Storage, AllocationLogRoundTrip) {
  auto spec = protocols::load_spec("early-keys");
  auto run = run_monitored(spec, spec.happy_flow);
  ASSERT_EQ(allocations_of(run.alloc_log).size(), 2u);
  EXPECT_EQ(parse_allocation_log(format_allocation_log(run.alloc_log)), run.alloc_log);
}

TEST(Monitor, DoesNotInterfereExhaustively) {
  for (const auto& spec : protocols::corpus())
    for (const auto& w : support::all_words(spec.input_names(), 6))
      ASSERT_EQ(run_monitored(spec, w).result.outputs, harness::execute_query(spec, w, 0).outputs)
          << spec.name;
}
