// Bootstrap queries, allocation alignment, snapshot diffing, candidate
// minimization and access-width type inference.
#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "statelens/model.hpp"
#include "statelens/protocols.hpp"
#include "statelens/types.hpp"
#include "statelens/vm.hpp"

namespace statelens::memdiff {

inline constexpr unsigned kDefaultRepetitions = 3;
inline constexpr std::uint64_t kStaticRangeLimit = 32;

struct BootstrapPlan {
  model::Word happy_flow;
  unsigned T = kDefaultRepetitions;
  std::vector<model::Word> queries;  // queries[0] is the happy flow
  unsigned repeats = 2;

  std::size_t max_length() const;
};

BootstrapPlan gen_bootstrap(const protocols::ProtocolSpec& spec,
                            unsigned T = kDefaultRepetitions);
BootstrapPlan gen_bootstrap(const model::Word& happy_flow,
                            const std::vector<std::string>& inputs,
                            unsigned T = kDefaultRepetitions);

// Greedy in-order matching on size and calling context.
AllocationMap align_allocations(const AllocationLog& run, const AllocationLog& base);

// Heap bytes of each base allocation as seen in one run; empty when the
// allocation has no counterpart in the run, zeros once freed.
using MemoryImage = std::vector<std::vector<std::uint8_t>>;

MemoryImage project(const vm::MachineState& state, const AllocationMap& map,
                    const AllocationLog& base_log);

// Byte value in an image; unmapped bytes read as the default 0.
std::uint8_t byte_at(const MemoryImage& image, std::size_t alloc, std::uint64_t offset);

struct ByteRef {
  std::size_t alloc = 0;
  std::uint64_t offset = 0;
  auto operator<=>(const ByteRef&) const = default;
};

struct CandidateSet {
  std::vector<MemoryLocation> locations;  // sorted, pairwise disjoint
  std::set<ByteRef> rejected;
  AllocationLog base_log;

  std::size_t byte_count() const;
  std::set<std::size_t> allocations() const;
  bool contains(const ByteRef& b) const;
  // Valuation of every location in order, unmapped bytes as 0.
  std::vector<std::uint8_t> project(const MemoryImage& image) const;
};

class InsufficientRuns : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Groups are keyed by the full I/O word and each hold at least two images.
CandidateSet diff_snapshots(const std::map<std::string, std::vector<MemoryImage>>& groups,
                            const AllocationLog& base_log);

struct ProjectedSnapshot {
  MemoryImage image;
  std::vector<vm::AddrRange> address_space;
};

// Drops pointers, allocations that never change after the first snapshot and
// long static runs. Snapshots must be in execution order.
CandidateSet minimize(const CandidateSet& cands, const std::vector<ProjectedSnapshot>& snapshots);

// Heap access projected onto a base allocation.
struct TypedAccess {
  std::size_t alloc = 0;
  std::uint64_t offset = 0;
  unsigned width = 0;
  bool operator<(const TypedAccess& o) const {
    return std::tie(alloc, offset, width) < std::tie(o.alloc, o.offset, o.width);
  }
};

// Re-partitions candidate bytes by observed access widths.
CandidateSet infer_types(const std::vector<TypedAccess>& log, const CandidateSet& cands);

// Projects run-level heap accesses onto base allocations.
std::vector<TypedAccess> to_typed_accesses(const std::vector<MemAccess>& accesses,
                                           const vm::MachineState& final_state,
                                           const AllocationMap& map);

std::string candidates_to_json(const CandidateSet& cands);

// Address ranges mapped in a machine state (static, stack and live heap).
std::vector<vm::AddrRange> address_space(const vm::MachineState& state);

}  // namespace statelens::memdiff
