#include "statelens/memdiff.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

namespace statelens::memdiff {

std::size_t BootstrapPlan::max_length() const {
  std::size_t n = 0;
  for (const auto& q : queries) n = std::max(n, q.size());
  return n;
}

BootstrapPlan gen_bootstrap(const protocols::ProtocolSpec& spec, unsigned T) {
  return gen_bootstrap(spec.happy_flow, spec.input_names(), T);
}

BootstrapPlan gen_bootstrap(const model::Word& happy_flow,
                            const std::vector<std::string>& inputs, unsigned T) {
  if (T < 1) throw std::invalid_argument("bootstrap repetition count must be at least 1");
  BootstrapPlan plan;
  plan.happy_flow = happy_flow;
  plan.T = T;
  plan.queries.push_back(happy_flow);
  for (std::size_t len = 1; len <= happy_flow.size(); ++len) {
    for (const auto& i : inputs) {
      model::Word q(happy_flow.begin(), happy_flow.begin() + static_cast<std::ptrdiff_t>(len));
      q.insert(q.end(), T, i);
      plan.queries.push_back(std::move(q));
    }
  }
  return plan;
}

AllocationMap align_allocations(const AllocationLog& run, const AllocationLog& base) {
  auto r = allocations_of(run);
  auto b = allocations_of(base);
  AllocationMap map;
  map.to_base.assign(r.size(), std::nullopt);
  std::vector<bool> used(b.size(), false);
  for (std::size_t i = 0; i < r.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (!used[j] && b[j].size == r[i].size && b[j].context == r[i].context) {
        used[j] = true;
        map.to_base[i] = j;
        break;
      }
    }
  }
  return map;
}

MemoryImage project(const vm::MachineState& state, const AllocationMap& map,
                    const AllocationLog& base_log) {
  auto base = allocations_of(base_log);
  MemoryImage image(base.size());
  for (std::size_t run = 0; run < map.to_base.size() && run < state.allocations.size(); ++run) {
    if (!map.to_base[run]) continue;
    const auto& a = state.allocations[run];
    auto& bytes = image[*map.to_base[run]];
    if (!a.live) {
      bytes.assign(a.size, 0);
    } else if (auto b = state.read_bytes(a.address, a.size)) {
      bytes = std::move(*b);
    }
  }
  return image;
}

std::uint8_t byte_at(const MemoryImage& image, std::size_t alloc, std::uint64_t offset) {
  if (alloc >= image.size() || offset >= image[alloc].size()) return 0;
  return image[alloc][offset];
}

std::size_t CandidateSet::byte_count() const {
  std::size_t n = 0;
  for (const auto& l : locations) n += l.size;
  return n;
}

std::set<std::size_t> CandidateSet::allocations() const {
  std::set<std::size_t> out;
  for (const auto& l : locations) out.insert(l.alloc_id);
  return out;
}

bool CandidateSet::contains(const ByteRef& b) const {
  return std::any_of(locations.begin(), locations.end(), [&](const MemoryLocation& l) {
    return l.alloc_id == b.alloc && b.offset >= l.offset && b.offset < l.end();
  });
}

std::vector<std::uint8_t> CandidateSet::project(const MemoryImage& image) const {
  std::vector<std::uint8_t> out;
  out.reserve(byte_count());
  for (const auto& l : locations)
    for (auto o = l.offset; o < l.end(); ++o) out.push_back(byte_at(image, l.alloc_id, o));
  return out;
}

namespace {

// Coalesces a sorted byte set into maximal contiguous untyped locations.
std::vector<MemoryLocation> coalesce(const std::set<ByteRef>& bytes) {
  std::vector<MemoryLocation> out;
  for (const auto& b : bytes) {
    if (!out.empty() && out.back().alloc_id == b.alloc && out.back().end() == b.offset)
      ++out.back().size;
    else
      out.push_back({b.alloc, b.offset, 1, 0});
  }
  return out;
}

std::set<ByteRef> bytes_of(const std::vector<MemoryLocation>& locs) {
  std::set<ByteRef> out;
  for (const auto& l : locs)
    for (auto o = l.offset; o < l.end(); ++o) out.insert({l.alloc_id, o});
  return out;
}

}  // namespace

CandidateSet diff_snapshots(const std::map<std::string, std::vector<MemoryImage>>& groups,
                            const AllocationLog& base_log) {
  auto base = allocations_of(base_log);
  if (groups.empty()) throw InsufficientRuns("no snapshot groups to diff");
  for (const auto& [key, images] : groups)
    if (images.size() < 2)
      throw InsufficientRuns("group '" + key + "' has fewer than two snapshots");

  CandidateSet out;
  out.base_log = base_log;
  std::set<ByteRef> kept;
  for (std::size_t a = 0; a < base.size(); ++a) {
    for (std::uint64_t o = 0; o < base[a].size; ++o) {
      bool constant = true, non_default = false;
      for (const auto& [key, images] : groups) {
        auto v = byte_at(images.front(), a, o);
        for (const auto& img : images) {
          if (byte_at(img, a, o) != v) {
            constant = false;
            break;
          }
        }
        if (!constant) break;
        non_default = non_default || v != 0;
      }
      if (!constant) out.rejected.insert({a, o});
      else if (non_default) kept.insert({a, o});
    }
  }
  out.locations = coalesce(kept);
  return out;
}

CandidateSet minimize(const CandidateSet& cands, const std::vector<ProjectedSnapshot>& snapshots) {
  auto bytes = bytes_of(cands.locations);

  // Word-sized pointer values.
  std::set<std::pair<std::size_t, std::uint64_t>> words;
  for (const auto& b : bytes) words.insert({b.alloc, b.offset / 8 * 8});
  for (const auto& [alloc, off] : words) {
    bool pointer = false;
    for (const auto& s : snapshots) {
      std::uint64_t v = 0;
      for (unsigned i = 0; i < 8; ++i)
        v |= std::uint64_t{byte_at(s.image, alloc, off + i)} << (8 * i);
      if (v == 0) continue;
      for (const auto& r : s.address_space) pointer = pointer || r.contains(v);
      if (pointer) break;
    }
    if (pointer)
      for (unsigned i = 0; i < 8; ++i) bytes.erase({alloc, off + i});
  }

  // Allocations whose whole content never changes after the first snapshot.
  if (snapshots.size() > 1) {
    for (auto alloc : cands.allocations()) {
      bool constant = true;
      const auto& ref = snapshots[1].image;
      for (std::size_t k = 2; k < snapshots.size() && constant; ++k) {
        const auto& img = snapshots[k].image;
        std::uint64_t len = std::max(alloc < ref.size() ? ref[alloc].size() : 0,
                                     alloc < img.size() ? img[alloc].size() : 0);
        for (std::uint64_t o = 0; o < len && constant; ++o)
          constant = byte_at(ref, alloc, o) == byte_at(img, alloc, o);
      }
      if (constant)
        std::erase_if(bytes, [alloc](const ByteRef& b) { return b.alloc == alloc; });
    }
  }

  // Long ranges that hold one value wherever they are mapped.
  CandidateSet out;
  out.base_log = cands.base_log;
  out.rejected = cands.rejected;
  for (const auto& loc : coalesce(bytes)) {
    if (loc.size > kStaticRangeLimit) {
      bool is_static = true;
      const std::vector<std::uint8_t>* first = nullptr;
      for (const auto& s : snapshots) {
        if (loc.alloc_id >= s.image.size() || s.image[loc.alloc_id].size() < loc.end()) continue;
        const auto& img = s.image[loc.alloc_id];
        if (!first) {
          first = &img;
          continue;
        }
        if (!std::equal(img.begin() + static_cast<std::ptrdiff_t>(loc.offset),
                        img.begin() + static_cast<std::ptrdiff_t>(loc.end()),
                        first->begin() + static_cast<std::ptrdiff_t>(loc.offset))) {
          is_static = false;
          break;
        }
      }
      if (is_static) continue;
    }
    out.locations.push_back(loc);
  }
  // Keep the widths already inferred for surviving locations.
  for (auto& loc : out.locations)
    for (const auto& old : cands.locations)
      if (old == MemoryLocation{loc.alloc_id, loc.offset, loc.size, old.type}) loc.type = old.type;
  return out;
}

CandidateSet infer_types(const std::vector<TypedAccess>& log, const CandidateSet& cands) {
  auto base = allocations_of(cands.base_log);
  std::map<std::size_t, std::map<std::uint64_t, unsigned>> widths;
  for (const auto& a : log) {
    auto& w = widths[a.alloc][a.offset];
    w = std::max(w, a.width);
  }
  auto remaining = bytes_of(cands.locations);
  CandidateSet out;
  out.base_log = cands.base_log;
  out.rejected = cands.rejected;
  std::set<ByteRef> covered;
  for (const auto& [alloc, starts] : widths) {
    std::uint64_t limit = alloc < base.size() ? base[alloc].size : 0;
    for (auto it = starts.begin(); it != starts.end(); ++it) {
      auto next = std::next(it);
      std::uint64_t end = std::min<std::uint64_t>(it->first + it->second, limit);
      if (next != starts.end()) end = std::min(end, next->first);
      if (end <= it->first) continue;
      MemoryLocation loc{alloc, it->first, end - it->first,
                         static_cast<unsigned>(end - it->first)};
      bool touches = false, rejected = false;
      for (auto o = loc.offset; o < loc.end(); ++o) {
        touches = touches || remaining.count({alloc, o});
        rejected = rejected || cands.rejected.count({alloc, o});
      }
      if (!touches) continue;
      for (auto o = loc.offset; o < loc.end(); ++o) covered.insert({alloc, o});
      if (!rejected) out.locations.push_back(loc);
    }
  }
  std::set<ByteRef> rest;
  for (const auto& b : remaining)
    if (!covered.count(b)) rest.insert(b);
  // Bytes never accessed keep their coalesced ranges and stay untyped.
  for (const auto& loc : coalesce(rest)) {
    auto typed = std::find_if(cands.locations.begin(), cands.locations.end(),
                              [&](const MemoryLocation& l) {
                                return l.alloc_id == loc.alloc_id && l.offset == loc.offset &&
                                       l.size == loc.size;
                              });
    auto copy = loc;
    if (typed != cands.locations.end()) copy.type = typed->type;
    out.locations.push_back(copy);
  }
  std::sort(out.locations.begin(), out.locations.end());
  return out;
}

std::vector<TypedAccess> to_typed_accesses(const std::vector<MemAccess>& accesses,
                                           const vm::MachineState& final_state,
                                           const AllocationMap& map) {
  std::vector<TypedAccess> out;
  const auto& allocs = final_state.allocations;
  for (const auto& a : accesses) {
    for (std::size_t i = 0; i < allocs.size(); ++i) {
      if (a.addr < allocs[i].address || a.addr >= allocs[i].address + allocs[i].size) continue;
      if (i < map.to_base.size() && map.to_base[i])
        out.push_back({*map.to_base[i], a.addr - allocs[i].address, a.width});
      break;
    }
  }
  return out;
}

std::string candidates_to_json(const CandidateSet& cands) {
  auto arr = nlohmann::json::array();
  for (const auto& l : cands.locations)
    arr.push_back({{"allocId", l.alloc_id}, {"offset", l.offset}, {"size", l.size},
                   {"type", l.type}});
  return arr.dump(2);
}

std::vector<vm::AddrRange> address_space(const vm::MachineState& state) {
  std::vector<vm::AddrRange> out;
  out.push_back({vm::kStaticBase, state.static_mem.size()});
  out.push_back({state.stack_base(), state.stack_mem.size()});
  for (const auto& a : state.allocations)
    if (a.live) out.push_back({a.address, a.size});
  return out;
}

}  // namespace statelens::memdiff
