#include "statelens/dataflow.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace statelens::dataflow {

namespace {

using vm::Opcode;

// Taint of a register; a linear value equals target + c.
struct RegTaint {
  bool tainted = false;
  bool linear = false;
  std::uint64_t c = 0;
};

struct Flags {
  RegTaint lhs, rhs;
  std::uint64_t lhs_value = 0, rhs_value = 0;
  bool tainted() const { return lhs.tainted || rhs.tainted; }
};

std::uint64_t width_mask(std::uint64_t bytes) {
  return bytes >= 8 ? ~0ull : (1ull << (8 * bytes)) - 1;
}

class Shadow {
 public:
  explicit Shadow(vm::AddrRange target) {
    for (auto a = target.addr; a < target.end(); ++a) bytes_.insert(a);
    if (target.size <= 8) linear_[target.addr] = {static_cast<unsigned>(target.size), 0};
  }

  // Propagates taint for `ins` using the session's state before it executes.
  void transfer(const vm::Instruction& ins, const vm::Session& s) {
    const auto& a = ins.operands[0];
    const auto& b = ins.operands[1];
    auto src = [&](const vm::Operand& op) {
      return op.kind == vm::OperandKind::kReg ? regs_[op.reg] : RegTaint{};
    };
    switch (ins.op) {
      case Opcode::kMov: regs_[a.reg] = src(b); break;
      case Opcode::kAdd: {
        auto ta = regs_[a.reg], tb = src(b);
        if (ta.tainted && !tb.tainted) {
          regs_[a.reg].c = ta.c + s.operand_value(b);
        } else if (!ta.tainted && tb.tainted) {
          regs_[a.reg] = tb;
          regs_[a.reg].c = tb.c + s.state().regs[a.reg];
        } else if (ta.tainted) {
          regs_[a.reg] = {true, false, 0};
        }
        break;
      }
      case Opcode::kSub: {
        auto ta = regs_[a.reg], tb = src(b);
        if (ta.tainted && !tb.tainted) regs_[a.reg].c = ta.c - s.operand_value(b);
        else if (tb.tainted) regs_[a.reg] = {true, false, 0};
        break;
      }
      case Opcode::kXor:
        if (b.kind == vm::OperandKind::kReg && b.reg == a.reg) {
          regs_[a.reg] = {};
          break;
        }
        [[fallthrough]];
      case Opcode::kMul: case Opcode::kDiv: case Opcode::kMod: case Opcode::kAnd:
      case Opcode::kOr: case Opcode::kShl: case Opcode::kShr:
        if (regs_[a.reg].tainted || src(b).tainted) regs_[a.reg] = {true, false, 0};
        break;
      case Opcode::kCmp:
        flags_ = {regs_[a.reg], src(b), s.state().regs[a.reg], s.operand_value(b)};
        break;
      case Opcode::kLoad:
        regs_[a.reg] = load(s.effective_address(b), ins.width);
        break;
      case Opcode::kStore:
        store(s.effective_address(a), ins.width, src(b));
        break;
      case Opcode::kPush:
        store(s.state().regs[vm::kStackPointer] - 8, 8, src(a));
        break;
      case Opcode::kPop:
        regs_[a.reg] = load(s.state().regs[vm::kStackPointer], 8);
        break;
      case Opcode::kCall:
        store(s.state().regs[vm::kStackPointer] - 8, 8, {});
        break;
      case Opcode::kAlloc: regs_[a.reg] = {}; break;
      case Opcode::kRecv: {
        auto buf = s.state().regs[b.reg];
        store_range(buf, s.operand_value(ins.operands[2]));
        regs_[a.reg] = {};
        break;
      }
      default: break;
    }
  }

  const Flags& flags() const { return flags_; }

 private:
  RegTaint load(std::uint64_t addr, unsigned width) {
    bool any = false;
    for (unsigned i = 0; i < width; ++i) any = any || bytes_.count(addr + i);
    if (!any) return {};
    auto it = linear_.find(addr);
    if (it != linear_.end() && it->second.first == width) return {true, true, it->second.second};
    return {true, false, 0};
  }

  void store(std::uint64_t addr, unsigned width, const RegTaint& t) {
    store_range(addr, width);
    if (!t.tainted) return;
    for (unsigned i = 0; i < width; ++i) bytes_.insert(addr + i);
    if (t.linear) linear_[addr] = {width, t.c};
  }

  void store_range(std::uint64_t addr, std::uint64_t len) {
    for (std::uint64_t i = 0; i < len; ++i) bytes_.erase(addr + i);
    std::erase_if(linear_, [&](const auto& kv) {
      return kv.first < addr + len && addr < kv.first + kv.second.first;
    });
  }

  std::array<RegTaint, vm::kNumRegisters> regs_{};
  std::unordered_set<std::uint64_t> bytes_;
  std::unordered_map<std::uint64_t, std::pair<unsigned, std::uint64_t>> linear_;
  Flags flags_;
};

bool ends_processing(const vm::Instruction& ins) {
  return ins.op == Opcode::kRecv || ins.op == Opcode::kClose || ins.op == Opcode::kHalt ||
         ins.op == Opcode::kShutdownRd;
}

bool stops(const std::optional<vm::ExecutionEvent>& e) {
  return e && (e->kind == vm::EventKind::kFaulted || e->kind == vm::EventKind::kClosed ||
               e->kind == vm::EventKind::kHalted || e->kind == vm::EventKind::kAwaitingInput);
}

struct ForkResult {
  std::optional<std::size_t> write_pc;
  bool taken = false;
};

// Executes from the branch for at most W instructions and reports the first
// write into state memory. The first step is the branch itself.
ForkResult explore(vm::Session& s, const TaintConfig& cfg) {
  ForkResult r;
  vm::TraceHooks hooks;
  hooks.on_write = [&](std::size_t pc, std::uint64_t addr, unsigned width, std::uint64_t,
                       vm::AccessKind kind) {
    if (kind != vm::AccessKind::kProgram || r.write_pc) return;
    for (const auto& m : cfg.state_memory)
      if (m.overlaps(addr, width)) r.write_pc = pc;
  };
  bool first = true;
  hooks.on_branch = [&](std::size_t, bool taken) {
    if (first) r.taken = taken;
    first = false;
  };
  const auto& prog = s.program();
  for (unsigned n = 0; n < cfg.W && !r.write_pc; ++n) {
    if (s.pc() >= prog.instructions.size()) break;
    if (n > 0 && ends_processing(prog.instructions[s.pc()])) break;
    auto rec = s.step_traced(hooks);
    if (stops(rec.event)) break;
  }
  return r;
}

void overwrite_target(vm::Session& s, vm::AddrRange target, std::uint64_t value) {
  std::vector<std::uint8_t> bytes(target.size, 0);
  for (std::uint64_t i = 0; i < target.size && i < 8; ++i)
    bytes[i] = static_cast<std::uint8_t>(value >> (8 * i));
  s.write_bytes(target.addr, bytes);
}

std::vector<std::uint64_t> alternate_candidates(const Flags& f, std::uint64_t original,
                                                std::uint64_t size) {
  auto mask = width_mask(size);
  std::vector<std::uint64_t> out;
  auto add = [&](std::uint64_t v) {
    v &= mask;
    if (v != original && std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  };
  // Invert the compare against its untainted side.
  if (f.lhs.tainted && f.lhs.linear && !f.rhs.tainted)
    for (std::uint64_t d : {0ull, 1ull, ~0ull}) add(f.rhs_value + d - f.lhs.c);
  if (f.rhs.tainted && f.rhs.linear && !f.lhs.tainted)
    for (std::uint64_t d : {0ull, 1ull, ~0ull}) add(f.lhs_value + d - f.rhs.c);
  for (std::uint64_t v : std::initializer_list<std::uint64_t>{original + 1, original - 1, 0, 1, ~original, mask})
    add(v);
  return out;
}

}  // namespace

std::string_view to_string(VerdictKind kind) {
  switch (kind) {
    case VerdictKind::kStateDefining: return "StateDefining";
    case VerdictKind::kNotStateDefining: return "NotStateDefining";
    case VerdictKind::kInconclusive: return "Inconclusive";
  }
  return "?";
}

Verdict classify(std::shared_ptr<const vm::Program> program, const monitor::WatchpointHit& hit,
                 const TaintConfig& cfg) {
  if (cfg.W < 1) throw std::invalid_argument("analysis window must be at least 1");
  Verdict v;
  v.start_pc = hit.pc;
  const auto& prog = *program;
  auto session = vm::restore_session(program, *hit.context);
  auto original = session.read(cfg.target.addr, static_cast<unsigned>(std::min<std::uint64_t>(
                                                     cfg.target.size, 8)));
  if (!original) throw vm::RestoreFailure("target not mapped in the hit context");

  Shadow shadow(cfg.target);
  std::optional<std::size_t> branch_pc;
  std::size_t occurrence = 0;  // dynamic instances of branch_pc before the fork
  std::map<std::size_t, std::size_t> seen;
  vm::TraceHooks none;
  for (unsigned n = 0; n < cfg.W; ++n) {
    if (session.pc() >= prog.instructions.size()) break;
    const auto& ins = prog.instructions[session.pc()];
    if (ins.is_conditional_jump() && shadow.flags().tainted()) {
      branch_pc = session.pc();
      occurrence = seen[session.pc()];
      break;
    }
    if (ends_processing(ins)) break;
    if (ins.is_conditional_jump()) ++seen[session.pc()];
    shadow.transfer(ins, session);
    if (stops(session.step_traced(none).event)) break;
  }
  if (!branch_pc) {
    v.note = "no tainted branch within the window";
    return v;
  }
  v.branch_pc = branch_pc;
  v.branch_line = prog.line_of(*branch_pc);
  auto flags = shadow.flags();

  auto path_a = explore(session, cfg);
  if (path_a.write_pc) {
    v.kind = VerdictKind::kStateDefining;
    v.write_pc = path_a.write_pc;
    v.write_line = prog.line_of(*path_a.write_pc);
    v.note = "taken path writes state memory";
    return v;
  }

  for (auto candidate : alternate_candidates(flags, *original, cfg.target.size)) {
    auto alt = vm::restore_session(program, *hit.context);
    overwrite_target(alt, cfg.target, candidate);
    std::size_t count = 0;
    bool reached = false;
    for (unsigned n = 0; n < cfg.W; ++n) {
      if (alt.pc() >= prog.instructions.size()) break;
      if (alt.pc() == *branch_pc && count++ == occurrence) {
        reached = true;
        break;
      }
      if (ends_processing(prog.instructions[alt.pc()])) break;
      if (stops(alt.step_traced(none).event)) break;
    }
    if (!reached) continue;
    auto path_b = explore(alt, cfg);
    if (path_b.taken == path_a.taken) continue;
    v.alternate_value = candidate;
    if (path_b.write_pc) {
      v.kind = VerdictKind::kStateDefining;
      v.write_pc = path_b.write_pc;
      v.write_line = prog.line_of(*path_b.write_pc);
      v.note = "alternate path writes state memory";
    } else {
      v.note = "neither path writes state memory";
    }
    return v;
  }
  v.kind = VerdictKind::kInconclusive;
  v.note = "no value flips the tainted branch";
  return v;
}

bool read_before_write(const std::vector<MemAccess>& trace, vm::AddrRange loc) {
  for (const auto& a : trace)
    if (loc.overlaps(a.addr, a.width)) return !a.write;
  return true;
}

std::string verdict_json(const Verdict& v, const MemoryLocation& loc) {
  nlohmann::json j = {{"allocId", loc.alloc_id},
                      {"offset", loc.offset},
                      {"size", loc.size},
                      {"verdict", std::string(to_string(v.kind))},
                      {"startPc", v.start_pc}};
  if (v.branch_pc) {
    j["branchPc"] = *v.branch_pc;
    j["branchLine"] = v.branch_line;
  }
  if (v.write_pc) {
    j["writePc"] = *v.write_pc;
    j["writeLine"] = v.write_line;
  }
  if (v.alternate_value) j["alternateValue"] = *v.alternate_value;
  if (!v.note.empty()) j["note"] = v.note;
  return j.dump();
}

}  // namespace statelens::dataflow
