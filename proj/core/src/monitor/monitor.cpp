#include "statelens/monitor.hpp"

#include <algorithm>
#include <atomic>

#include "statelens/memdiff.hpp"

namespace statelens::monitor {

namespace {

std::atomic<std::uint64_t> next_session_id{1};

bool is_heap(const vm::MachineState& s, std::uint64_t addr) {
  return addr >= s.heap_base && addr < s.heap_base + vm::kHeapCapacity;
}

TerminalKind terminal_of(vm::EventKind k) {
  switch (k) {
    case vm::EventKind::kClosed: return TerminalKind::kClosed;
    case vm::EventKind::kShutdownRead: return TerminalKind::kShutdownRead;
    case vm::EventKind::kHalted: return TerminalKind::kHalted;
    case vm::EventKind::kFaulted: return TerminalKind::kFaulted;
    default: return TerminalKind::kNone;
  }
}

IoPatternSet default_patterns(const protocols::ProtocolSpec& spec) {
  IoPatternSet p;
  std::uint32_t channel = spec.inputs.empty() ? 0 : spec.inputs.front().channel;
  // Buffer 0 matches any buffer; the channel alone identifies bundled I/O.
  p.input = IoPattern{vm::EventKind::kReadReturned, channel, 0};
  p.output = IoPattern{vm::EventKind::kWriteAboutToExecute, 0, 0};
  return p;
}

bool pattern_matches(const std::optional<IoPattern>& p, const vm::ExecutionEvent& e) {
  return p && p->kind == e.kind && p->channel == e.channel &&
         (p->buffer == 0 || p->buffer == e.addr);
}

class Recorder : public harness::SessionObserver {
 public:
  Recorder(MonitoredRun& run, IoPatternSet patterns, std::uint64_t session_id)
      : run_(run), patterns_(std::move(patterns)), session_id_(session_id) {}

  void on_event(const vm::ExecutionEvent& e, const vm::Session& session,
                int position) override {
    run_.events.push_back(e);
    switch (e.kind) {
      case vm::EventKind::kReadAboutToExecute:
        if (e.channel == (patterns_.input ? patterns_.input->channel : 0))
          take(e, session, position);
        break;
      case vm::EventKind::kReadReturned:
        if (patterns_.matches_input(e)) take(e, session, position);
        break;
      case vm::EventKind::kWriteAboutToExecute:
        if (patterns_.matches_output(e)) take(e, session, position);
        break;
      case vm::EventKind::kAllocated:
      case vm::EventKind::kFreed:
        run_.alloc_log.push_back({run_.alloc_log.size(),
                                  e.kind == vm::EventKind::kAllocated ? AllocKind::kAlloc
                                                                      : AllocKind::kFree,
                                  e.size, e.context, e.addr, e.timestamp});
        break;
      default: {
        auto t = terminal_of(e.kind);
        bool closes = t == TerminalKind::kHalted || t == TerminalKind::kFaulted ||
                      std::find(patterns_.close.begin(), patterns_.close.end(), e.kind) !=
                          patterns_.close.end();
        if (t != TerminalKind::kNone && closes && terminal == TerminalKind::kNone) {
          terminal = t;
          terminal_index = position;
        }
        break;
      }
    }
  }

  TerminalKind terminal = TerminalKind::kNone;
  int terminal_index = -1;

 private:
  void take(const vm::ExecutionEvent& e, const vm::Session& session, int position) {
    run_.snapshots.push_back({std::make_shared<const vm::MachineState>(session.snapshot()),
                              e.kind, e.timestamp, session_id_, position});
  }

  MonitoredRun& run_;
  IoPatternSet patterns_;
  std::uint64_t session_id_;
};

vm::TraceHooks heap_tracer(const vm::Session& session, std::vector<MemAccess>& out,
                           const harness::Connection& conn) {
  vm::TraceHooks hooks;
  auto record = [&session, &out, &conn](bool write) {
    return [&session, &out, &conn, write](std::size_t pc, std::uint64_t addr, unsigned width,
                                          std::uint64_t, vm::AccessKind kind) {
      if (kind != vm::AccessKind::kProgram || !is_heap(session.state(), addr)) return;
      out.push_back({pc, addr, width, write, static_cast<int>(conn.position()) - 1});
    };
  };
  hooks.on_read = record(false);
  hooks.on_write = record(true);
  return hooks;
}

}  // namespace

bool IoPatternSet::matches_input(const vm::ExecutionEvent& e) const {
  return pattern_matches(input, e);
}

bool IoPatternSet::matches_output(const vm::ExecutionEvent& e) const {
  return pattern_matches(output, e);
}

IoPatternSet infer_io_patterns(const std::vector<vm::ExecutionEvent>& events,
                               const harness::QueryResult& io) {
  std::vector<std::vector<std::uint8_t>> sent, received;
  for (const auto& e : io.io_log)
    (e.kind == harness::IoEvent::Kind::kInputSent ? sent : received).push_back(e.bytes);

  auto infer = [&](vm::EventKind kind, const std::vector<std::vector<std::uint8_t>>& want,
                   const char* what) -> std::optional<IoPattern> {
    std::map<std::pair<std::uint32_t, std::uint64_t>, std::vector<std::vector<std::uint8_t>>>
        streams;
    for (const auto& e : events)
      if (e.kind == kind) streams[{e.channel, e.addr}].push_back(e.payload);
    std::vector<IoPattern> exact;
    bool multiplexed = false;
    for (auto& [key, payloads] : streams) {
      if (payloads == want) {
        exact.push_back({kind, key.first, key.second});
        continue;
      }
      // The wanted sequence embedded among unrelated traffic on one pattern.
      std::size_t j = 0;
      for (std::size_t i = 0; i < payloads.size() && j < want.size(); ++i)
        if (payloads[i] == want[j]) ++j;
      if (!want.empty() && j == want.size()) multiplexed = true;
    }
    if (exact.size() > 1)
      throw PatternAmbiguous(std::string("several ") + what + " patterns reproduce the trace");
    if (exact.size() == 1) return exact.front();
    if (multiplexed)
      throw PatternAmbiguous(std::string(what) + " traffic shares a pattern with other I/O");
    if (want.empty()) return std::nullopt;
    throw PatternNotFound(std::string("no ") + what + " pattern reproduces the trace");
  };

  IoPatternSet set;
  set.input = infer(vm::EventKind::kReadReturned, sent, "input");
  set.output = infer(vm::EventKind::kWriteAboutToExecute, received, "output");
  return set;
}

bool EventAlignment::total() const {
  return std::all_of(mapping.begin(), mapping.end(),
                     [](const auto& m) { return m.has_value(); });
}

EventAlignment align_events(const std::vector<Snapshot>& snapshots, TerminalKind terminal,
                            int terminal_index, const model::Word& outputs) {
  EventAlignment a;
  a.terminal = terminal;
  a.terminal_index = terminal_index;
  const std::size_t n = outputs.size();
  a.mapping.assign(n, std::nullopt);

  auto latest = [&](int window, vm::EventKind kind) -> std::optional<std::size_t> {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < snapshots.size(); ++i)
      if (snapshots[i].query_index == window && snapshots[i].event == kind) best = i;
    return best;
  };

  a.initial = latest(-1, vm::EventKind::kReadAboutToExecute);
  for (std::size_t k = 0; k < n; ++k) {
    int w = static_cast<int>(k);
    if (terminal != TerminalKind::kNone && w > terminal_index) break;
    if (w == terminal_index) {
      auto s = latest(w, vm::EventKind::kWriteAboutToExecute);
      if (!s) s = latest(w, vm::EventKind::kReadReturned);
      a.mapping[k] = s;
      break;
    }
    auto pre_read = latest(w, vm::EventKind::kReadAboutToExecute);
    bool output = outputs[k] != model::kEmpty;
    bool read_again = latest(w + 1, vm::EventKind::kReadReturned).has_value();
    if (pre_read && (output || read_again)) {
      a.mapping[k] = pre_read;
    } else if (output) {
      a.mapping[k] = latest(w, vm::EventKind::kWriteAboutToExecute);
    } else if (k + 1 == n) {
      a.silent_tail = true;
    }
  }
  return a;
}

const Snapshot* MonitoredRun::post_state(std::size_t position) const {
  if (position >= alignment.mapping.size() || !alignment.mapping[position]) return nullptr;
  return &snapshots[*alignment.mapping[position]];
}

const Snapshot* MonitoredRun::initial_state() const {
  return alignment.initial ? &snapshots[*alignment.initial] : nullptr;
}

MonitoredRun run_monitored(const protocols::ProtocolSpec& spec, const model::Word& inputs,
                           const MonitorOptions& opts) {
  MonitoredRun run;
  run.seed = opts.seed;
  auto patterns = opts.patterns ? *opts.patterns : default_patterns(spec);
  Recorder recorder(run, patterns, next_session_id++);
  harness::Connection conn(spec, opts.seed, opts.nonce);
  conn.set_observer(&recorder);
  if (patterns.output) conn.set_output_channel(patterns.output->channel);
  vm::TraceHooks hooks;
  if (opts.trace) {
    hooks = heap_tracer(conn.session(), run.accesses, conn);
    conn.set_hooks(&hooks);
  }
  run.result.query = inputs;
  for (const auto& input : inputs) run.result.outputs.push_back(conn.exchange(input));
  run.result.io_log = conn.io_log();
  run.alignment = align_events(run.snapshots, recorder.terminal, recorder.terminal_index,
                               run.result.outputs);
  if (opts.fault_is_error && recorder.terminal == TerminalKind::kFaulted) {
    std::string reason = "session fault";
    for (const auto& e : run.events)
      if (e.kind == vm::EventKind::kFaulted) reason = "session fault: " + e.reason;
    throw SessionFault(reason, std::move(run));
  }
  return run;
}

SilentTailResult probe_silent_tail(const protocols::ProtocolSpec& spec, const model::Word& q,
                                   const MonitorOptions& opts) {
  SilentTailResult out;
  for (const auto& input : spec.input_names()) {
    auto extended = q;
    extended.push_back(input);
    out.runs.push_back(run_monitored(spec, extended, opts));
    const auto& run = out.runs.back();
    if (const auto* s = run.post_state(q.size() - 1)) {
      out.post_state = *s;
      out.run_index = out.runs.size() - 1;
      return out;
    }
  }
  out.exploration_closed = true;
  return out;
}

WatchResult watch_reads(const protocols::ProtocolSpec& spec, const model::Word& prefix,
                        const MemoryLocation& loc, const AllocationLog& base_log,
                        const std::string& probe, const MonitorOptions& opts) {
  WatchResult out;
  MonitoredRun scratch;
  auto patterns = opts.patterns ? *opts.patterns : default_patterns(spec);
  Recorder recorder(scratch, patterns, next_session_id++);
  harness::Connection conn(spec, opts.seed, opts.nonce);
  conn.set_observer(&recorder);
  if (patterns.output) conn.set_output_channel(patterns.output->channel);
  conn.start();
  for (const auto& input : prefix) conn.exchange(input);

  auto map = memdiff::align_allocations(scratch.alloc_log, base_log);
  auto run = map.run_of(loc.alloc_id);
  const auto& state = conn.session().state();
  if (!run || *run >= state.allocations.size())
    throw LocationUnmapped("allocation " + std::to_string(loc.alloc_id) +
                           " has no counterpart after the prefix");
  const auto& alloc = state.allocations[*run];
  if (loc.end() > alloc.size)
    throw LocationUnmapped("location exceeds allocation " + std::to_string(loc.alloc_id));
  out.range = {alloc.address + loc.offset, loc.size};
  out.before = std::make_shared<const vm::MachineState>(conn.session().snapshot());

  // Hits are captured while the probe is processed, up to the next blocking read.
  struct HitRecorder : harness::SessionObserver {
    Recorder* inner = nullptr;
    WatchResult* out = nullptr;
    void on_event(const vm::ExecutionEvent& e, const vm::Session& session,
                  int position) override {
      if (e.kind == vm::EventKind::kWatchpointRead)
        out->hits.push_back({std::make_shared<const vm::MachineState>(session.snapshot()),
                             e.pc, e.addr, e.size});
      inner->on_event(e, session, position);
    }
  } hit_recorder;
  hit_recorder.inner = &recorder;
  hit_recorder.out = &out;
  conn.set_observer(&hit_recorder);
  auto hooks = heap_tracer(conn.session(), out.trace, conn);
  conn.set_hooks(&hooks);
  conn.session().watch(out.range);
  out.output = conn.exchange(probe);
  conn.session().clear_watches();
  out.alloc_log = scratch.alloc_log;
  return out;
}

}  // namespace statelens::monitor
