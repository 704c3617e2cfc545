#include "statelens/types.hpp"

namespace statelens {

std::vector<AllocationRecord> allocations_of(const AllocationLog& log) {
  std::vector<AllocationRecord> out;
  for (const auto& r : log)
    if (r.kind == AllocKind::kAlloc) out.push_back(r);
  return out;
}

std::string_view to_string(TerminalKind kind) {
  switch (kind) {
    case TerminalKind::kNone: return "None";
    case TerminalKind::kClosed: return "Closed";
    case TerminalKind::kShutdownRead: return "ShutdownRead";
    case TerminalKind::kHalted: return "Halted";
    case TerminalKind::kFaulted: return "Faulted";
  }
  return "?";
}

}  // namespace statelens
