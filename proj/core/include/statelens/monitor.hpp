// Execution monitor: snapshots at I/O traps, allocation logging, alignment of
// snapshots with harness I/O, and read watchpoints.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "statelens/harness.hpp"
#include "statelens/protocols.hpp"
#include "statelens/types.hpp"
#include "statelens/vm.hpp"

namespace statelens::monitor {

struct Snapshot {
  std::shared_ptr<const vm::MachineState> payload;
  vm::EventKind event = vm::EventKind::kReadAboutToExecute;
  std::uint64_t timestamp = 0;
  std::uint64_t session_id = 0;
  int query_index = -1;  // input whose processing it reflects; -1 before any
};

// Trap kind plus fixed parameters identifying protocol I/O.
struct IoPattern {
  vm::EventKind kind = vm::EventKind::kReadReturned;
  std::uint32_t channel = 0;
  std::uint64_t buffer = 0;
  bool operator==(const IoPattern&) const = default;
};

struct IoPatternSet {
  std::optional<IoPattern> input;
  std::optional<IoPattern> output;
  std::vector<vm::EventKind> close{vm::EventKind::kClosed, vm::EventKind::kShutdownRead};

  bool matches_input(const vm::ExecutionEvent& e) const;
  bool matches_output(const vm::ExecutionEvent& e) const;
};

class PatternAmbiguous : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PatternNotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Finds the trap patterns whose payloads replay exactly the harness I/O.
IoPatternSet infer_io_patterns(const std::vector<vm::ExecutionEvent>& events,
                               const harness::QueryResult& io);

struct EventAlignment {
  std::vector<std::optional<std::size_t>> mapping;  // input position -> snapshot
  std::optional<std::size_t> initial;               // pre-read before any input
  TerminalKind terminal = TerminalKind::kNone;
  int terminal_index = -1;
  bool silent_tail = false;  // last input gave no output and no later read

  bool total() const;
};

struct MonitorOptions {
  std::uint64_t seed = 0;
  std::uint8_t nonce = harness::kDefaultNonce;
  // Record heap loads and stores by single-stepping.
  bool trace = false;
  // Throw SessionFault instead of reporting FAULT as an output.
  bool fault_is_error = false;
  std::optional<IoPatternSet> patterns;
};

struct MonitoredRun {
  harness::QueryResult result;
  std::vector<Snapshot> snapshots;
  AllocationLog alloc_log;
  EventAlignment alignment;
  std::vector<vm::ExecutionEvent> events;
  std::vector<MemAccess> accesses;  // heap only, filled when tracing
  std::uint64_t seed = 0;

  // Post-state snapshot of input `position`, if resolved.
  const Snapshot* post_state(std::size_t position) const;
  const Snapshot* initial_state() const;
};

class SessionFault : public std::runtime_error {
 public:
  SessionFault(const std::string& what, MonitoredRun partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const MonitoredRun& partial() const { return partial_; }

 private:
  MonitoredRun partial_;
};

MonitoredRun run_monitored(const protocols::ProtocolSpec& spec, const model::Word& inputs,
                           const MonitorOptions& opts = {});

// Computes the alignment from snapshot windows; exposed for testing.
EventAlignment align_events(const std::vector<Snapshot>& snapshots, TerminalKind terminal,
                            int terminal_index, const model::Word& outputs);

struct SilentTailResult {
  std::optional<Snapshot> post_state;
  std::optional<std::size_t> run_index;  // which entry of `runs` resolved it
  bool exploration_closed = false;
  std::vector<MonitoredRun> runs;
};

// Resolves the post-state of a silent final input by extending q with each
// input until one run reads again.
SilentTailResult probe_silent_tail(const protocols::ProtocolSpec& spec, const model::Word& q,
                                   const MonitorOptions& opts = {});

class LocationUnmapped : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct WatchpointHit {
  std::shared_ptr<const vm::MachineState> context;
  std::size_t pc = 0;
  std::uint64_t addr = 0;
  std::uint64_t width = 0;
};

struct WatchResult {
  std::vector<WatchpointHit> hits;
  std::vector<MemAccess> trace;  // heap accesses while the probe was processed
  vm::AddrRange range;
  std::string output;
  AllocationLog alloc_log;
  std::shared_ptr<const vm::MachineState> before;  // state after the prefix
};

// Replays `prefix`, arms a read watchpoint on `loc` (resolved through the
// allocation map against `base_log`) and sends `probe`.
WatchResult watch_reads(const protocols::ProtocolSpec& spec, const model::Word& prefix,
                        const MemoryLocation& loc, const AllocationLog& base_log,
                        const std::string& probe, const MonitorOptions& opts = {});

// Deduplicating payload store keyed by content hash.
class SnapshotStore {
 public:
  std::uint64_t insert(const vm::MachineState& state);
  std::size_t size() const;
  std::shared_ptr<const std::vector<std::uint8_t>> get(std::uint64_t hash) const;

 private:
  mutable std::mutex mu_;
  std::map<std::uint64_t, std::shared_ptr<const std::vector<std::uint8_t>>> payloads_;
};

std::uint64_t content_hash(const std::vector<std::uint8_t>& bytes);

// Framed snapshot dump of one query.
void write_snapshot_dump(const std::filesystem::path& path,
                         const std::vector<Snapshot>& snapshots);
std::vector<Snapshot> read_snapshot_dump(const std::filesystem::path& path);

std::string format_allocation_log(const AllocationLog& log);
AllocationLog parse_allocation_log(const std::string& text);

}  // namespace statelens::monitor
