// Value types shared by the monitor, memory diffing and the learner.
#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace statelens {

// A contiguous range of one heap allocation. `alloc_id` is the allocation's
// ordinal in the base run's allocation log.
struct MemoryLocation {
  std::size_t alloc_id = 0;
  std::uint64_t offset = 0;
  std::uint64_t size = 0;
  unsigned type = 0;  // inferred access width, 0 while unknown

  std::uint64_t end() const { return offset + size; }
  bool overlaps(const MemoryLocation& o) const {
    return alloc_id == o.alloc_id && offset < o.end() && o.offset < end();
  }
  auto operator<=>(const MemoryLocation&) const = default;
};

enum class AllocKind : std::uint8_t { kAlloc, kFree };

struct AllocationRecord {
  std::size_t position = 0;
  AllocKind kind = AllocKind::kAlloc;
  std::uint64_t size = 0;
  std::uint64_t context = 0;
  std::uint64_t address = 0;
  std::uint64_t timestamp = 0;
  bool operator==(const AllocationRecord&) const = default;
};

using AllocationLog = std::vector<AllocationRecord>;

// Allocation records only (frees dropped), in allocation order; index = ordinal.
std::vector<AllocationRecord> allocations_of(const AllocationLog& log);

// Run allocation ordinal -> base allocation ordinal.
struct AllocationMap {
  std::vector<std::optional<std::size_t>> to_base;

  std::optional<std::size_t> run_of(std::size_t base) const {
    for (std::size_t i = 0; i < to_base.size(); ++i)
      if (to_base[i] == base) return i;
    return std::nullopt;
  }
};

enum class TerminalKind : std::uint8_t { kNone, kClosed, kShutdownRead, kHalted, kFaulted };
std::string_view to_string(TerminalKind kind);

// One heap access seen while tracing; `position` is the input being processed.
struct MemAccess {
  std::size_t pc = 0;
  std::uint64_t addr = 0;
  unsigned width = 0;
  bool write = false;
  int position = -1;
};

}  // namespace statelens
