// Taint tracking and branch forking that decide whether a location is
// state-defining.
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "statelens/monitor.hpp"
#include "statelens/types.hpp"
#include "statelens/vm.hpp"

namespace statelens::dataflow {

inline constexpr unsigned kDefaultWindow = 512;

struct TaintConfig {
  unsigned W = kDefaultWindow;
  std::vector<vm::AddrRange> state_memory;  // candidate set M, resolved to addresses
  vm::AddrRange target;                     // location under test
};

enum class VerdictKind : std::uint8_t { kStateDefining, kNotStateDefining, kInconclusive };
std::string_view to_string(VerdictKind kind);

struct Verdict {
  VerdictKind kind = VerdictKind::kNotStateDefining;
  std::optional<std::size_t> branch_pc;
  std::optional<std::size_t> write_pc;
  int branch_line = 0;
  int write_line = 0;
  std::optional<std::uint64_t> alternate_value;  // value that flips the branch
  std::size_t start_pc = 0;
  std::string note;
};

// Restores the hit context and traces forward from the watched read.
Verdict classify(std::shared_ptr<const vm::Program> program, const monitor::WatchpointHit& hit,
                 const TaintConfig& cfg);

// True iff the first access overlapping `loc` is a read (or loc is untouched).
bool read_before_write(const std::vector<MemAccess>& trace, vm::AddrRange loc);

// One JSON object per line, for verdict logs.
std::string verdict_json(const Verdict& v, const MemoryLocation& loc);

}  // namespace statelens::dataflow
