#include <cstring>

#include "statelens/vm.hpp"

namespace statelens::vm {

namespace {

constexpr std::uint8_t kNoBase = 0xff;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t load_le(const std::uint8_t* p, unsigned width) {
  std::uint64_t v = 0;
  for (unsigned i = 0; i < width; ++i) v |= std::uint64_t{p[i]} << (8 * i);
  return v;
}

void store_le(std::uint8_t* p, unsigned width, std::uint64_t v) {
  for (unsigned i = 0; i < width; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint64_t truncate(std::uint64_t v, unsigned width) {
  return width >= 8 ? v : v & ((std::uint64_t{1} << (8 * width)) - 1);
}

const std::uint8_t* locate_in(const MachineState& s, std::uint64_t addr,
                              std::uint64_t width) {
  auto in = [&](std::uint64_t base, const std::vector<std::uint8_t>& seg)
      -> const std::uint8_t* {
    if (addr >= base && addr - base <= seg.size() && width <= seg.size() - (addr - base))
      return seg.data() + (addr - base);
    return nullptr;
  };
  if (auto p = in(s.heap_base, s.heap_mem)) return p;
  if (auto p = in(s.stack_base(), s.stack_mem)) return p;
  if (auto p = in(kStaticBase, s.static_mem)) return p;
  return nullptr;
}

bool condition_holds(Opcode op, std::uint64_t l, std::uint64_t r) {
  switch (op) {
    case Opcode::kJeq: return l == r;
    case Opcode::kJne: return l != r;
    case Opcode::kJlt: return l < r;
    case Opcode::kJle: return l <= r;
    case Opcode::kJgt: return l > r;
    case Opcode::kJge: return l >= r;
    default: return true;
  }
}

class Writer {
 public:
  void u8(std::uint8_t v) { out.push_back(v); }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(const std::vector<std::uint8_t>& b) {
    u64(b.size());
    out.insert(out.end(), b.begin(), b.end());
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint64_t u64() {
    need(8);
    auto v = load_le(in_.data() + pos_, 8);
    pos_ += 8;
    return v;
  }
  std::vector<std::uint8_t> bytes() {
    auto n = u64();
    need(n);
    std::vector<std::uint8_t> b(in_.begin() + pos_, in_.begin() + pos_ + n);
    pos_ += n;
    return b;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::uint64_t n) {
    if (n > in_.size() - pos_) throw RestoreFailure("truncated machine state");
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::kReadAboutToExecute: return "ReadAboutToExecute";
    case EventKind::kReadReturned: return "ReadReturned";
    case EventKind::kWriteAboutToExecute: return "WriteAboutToExecute";
    case EventKind::kAllocated: return "Allocated";
    case EventKind::kFreed: return "Freed";
    case EventKind::kClosed: return "Closed";
    case EventKind::kShutdownRead: return "ShutdownRead";
    case EventKind::kWatchpointRead: return "WatchpointRead";
    case EventKind::kAwaitingInput: return "AwaitingInput";
    case EventKind::kHalted: return "Halted";
    case EventKind::kFaulted: return "Faulted";
  }
  return "?";
}

std::string_view to_string(SessionStatus status) {
  switch (status) {
    case SessionStatus::kRunning: return "Running";
    case SessionStatus::kAwaitingInput: return "AwaitingInput";
    case SessionStatus::kClosed: return "Closed";
    case SessionStatus::kHalted: return "Halted";
    case SessionStatus::kFaulted: return "Faulted";
  }
  return "?";
}

std::uint64_t heap_base_for_seed(std::uint64_t seed) {
  return kHeapRegionBase + ((splitmix64(seed) & 0xffffff) << 12);
}

std::optional<std::uint64_t> MachineState::read(std::uint64_t addr,
                                                unsigned width) const {
  auto p = locate_in(*this, addr, width);
  if (!p) return std::nullopt;
  return load_le(p, width);
}

std::optional<std::vector<std::uint8_t>> MachineState::read_bytes(
    std::uint64_t addr, std::uint64_t len) const {
  auto p = locate_in(*this, addr, len);
  if (!p) return std::nullopt;
  return std::vector<std::uint8_t>(p, p + len);
}

std::optional<std::size_t> MachineState::allocation_at(std::uint64_t addr) const {
  for (std::size_t i = 0; i < allocations.size(); ++i) {
    const auto& a = allocations[i];
    if (a.live && addr >= a.address && addr < a.address + a.size) return i;
  }
  return std::nullopt;
}

std::vector<std::uint8_t> serialize(const MachineState& s) {
  Writer w;
  w.out.insert(w.out.end(), {'T', 'V', 'M', '1'});
  for (auto r : s.regs) w.u64(r);
  w.u64(s.pc);
  w.u64(s.cmp_lhs);
  w.u64(s.cmp_rhs);
  w.u64(s.heap_base);
  w.bytes(s.static_mem);
  w.bytes(s.stack_mem);
  w.bytes(s.heap_mem);
  w.u64(s.allocations.size());
  for (auto& a : s.allocations) {
    w.u64(a.address);
    w.u64(a.size);
    w.u64(a.context);
    w.u8(a.live);
  }
  w.u64(s.call_stack.size());
  for (auto c : s.call_stack) w.u64(c);
  w.u64(s.instruction_count);
  w.u8(static_cast<std::uint8_t>(s.status));
  w.u8(static_cast<std::uint8_t>(s.phase));
  w.u8(s.read_shutdown);
  w.u8(s.skip_watch);
  return std::move(w.out);
}

MachineState deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "TVM1", 4) != 0)
    throw RestoreFailure("bad machine state magic");
  Reader r(bytes.subspan(4));
  MachineState s;
  for (auto& reg : s.regs) reg = r.u64();
  s.pc = r.u64();
  s.cmp_lhs = r.u64();
  s.cmp_rhs = r.u64();
  s.heap_base = r.u64();
  s.static_mem = r.bytes();
  s.stack_mem = r.bytes();
  s.heap_mem = r.bytes();
  auto n = r.u64();
  if (n > bytes.size()) throw RestoreFailure("bad allocation count");
  for (std::uint64_t i = 0; i < n; ++i) {
    Allocation a;
    a.address = r.u64();
    a.size = r.u64();
    a.context = r.u64();
    a.live = r.u8() != 0;
    s.allocations.push_back(a);
  }
  n = r.u64();
  if (n > bytes.size()) throw RestoreFailure("bad call stack depth");
  for (std::uint64_t i = 0; i < n; ++i) s.call_stack.push_back(r.u64());
  s.instruction_count = r.u64();
  auto status = r.u8();
  auto phase = r.u8();
  if (status > static_cast<std::uint8_t>(SessionStatus::kFaulted) ||
      phase > static_cast<std::uint8_t>(TrapPhase::kPreWrite))
    throw RestoreFailure("bad status byte");
  s.status = static_cast<SessionStatus>(status);
  s.phase = static_cast<TrapPhase>(phase);
  s.read_shutdown = r.u8() != 0;
  s.skip_watch = r.u8() != 0;
  if (!r.done()) throw RestoreFailure("trailing bytes in machine state");
  return s;
}

Session::Session(std::shared_ptr<const Program> program, std::uint64_t seed,
                 std::shared_ptr<MonotonicClock> clock)
    : program_(std::move(program)),
      clock_(clock ? std::move(clock) : std::make_shared<MonotonicClock>()) {
  state_.pc = program_->entry;
  state_.heap_base = heap_base_for_seed(seed);
  state_.static_mem = program_->data;
  state_.stack_mem.assign(kStackSize, 0);
  state_.regs[kStackPointer] = kStackTop;
}

Session::Session(std::shared_ptr<const Program> program, MachineState state,
                 std::shared_ptr<MonotonicClock> clock)
    : program_(std::move(program)),
      clock_(clock ? std::move(clock) : std::make_shared<MonotonicClock>()),
      state_(std::move(state)) {}

Session create_session(std::shared_ptr<const Program> program,
                       std::uint64_t seed,
                       std::shared_ptr<MonotonicClock> clock) {
  return Session(std::move(program), seed, std::move(clock));
}

Session restore_session(std::shared_ptr<const Program> program,
                        const MachineState& state,
                        std::shared_ptr<MonotonicClock> clock) {
  if (!program) throw RestoreFailure("no program");
  if (state.pc > program->instructions.size())
    throw RestoreFailure("pc outside program");
  if (state.static_mem.size() != program->data.size())
    throw RestoreFailure("static segment size mismatch");
  if (state.stack_mem.size() != kStackSize)
    throw RestoreFailure("stack segment size mismatch");
  if (state.heap_base < kHeapRegionBase || state.heap_mem.size() > kHeapCapacity)
    throw RestoreFailure("heap segment out of range");
  for (auto& a : state.allocations) {
    if (a.address < state.heap_base ||
        a.address + a.size > state.heap_base + state.heap_mem.size())
      throw RestoreFailure("allocation outside heap");
  }
  for (auto ret : state.call_stack)
    if (ret > program->instructions.size())
      throw RestoreFailure("return address outside program");
  return Session(std::move(program), state, std::move(clock));
}

void Session::deliver(std::vector<std::uint8_t> message, std::uint32_t channel) {
  if (state_.read_shutdown) return;
  inbox_[channel].push_back(std::move(message));
}

std::vector<std::vector<std::uint8_t>> Session::take_output(std::uint32_t channel) {
  auto it = outbox_.find(channel);
  if (it == outbox_.end()) return {};
  auto out = std::move(it->second);
  outbox_.erase(it);
  return out;
}

bool Session::has_pending_input(std::uint32_t channel) const {
  auto it = inbox_.find(channel);
  return it != inbox_.end() && !it->second.empty();
}

std::uint8_t* Session::locate(std::uint64_t addr, unsigned width) {
  return const_cast<std::uint8_t*>(locate_in(state_, addr, width));
}

bool Session::write(std::uint64_t addr, unsigned width, std::uint64_t value) {
  auto p = locate(addr, width);
  if (!p) return false;
  store_le(p, width, value);
  return true;
}

bool Session::write_bytes(std::uint64_t addr, std::span<const std::uint8_t> bytes) {
  auto p = locate(addr, static_cast<unsigned>(bytes.size()));
  if (!p) return false;
  std::memcpy(p, bytes.data(), bytes.size());
  return true;
}

std::uint64_t Session::effective_address(const Operand& op) const {
  std::uint64_t base = op.reg == kNoBase ? 0 : state_.regs[op.reg];
  return base + static_cast<std::uint64_t>(op.imm);
}

std::uint64_t Session::operand_value(const Operand& op) const {
  switch (op.kind) {
    case OperandKind::kReg: return state_.regs[op.reg];
    case OperandKind::kImm:
    case OperandKind::kLabel: return static_cast<std::uint64_t>(op.imm);
    case OperandKind::kMem: return effective_address(op);
    case OperandKind::kNone: return 0;
  }
  return 0;
}

ExecutionEvent Session::make_event(EventKind kind) {
  ExecutionEvent e;
  e.kind = kind;
  e.timestamp = clock_->tick();
  e.pc = state_.pc;
  return e;
}

ExecutionEvent Session::fault(std::string reason) {
  state_.status = SessionStatus::kFaulted;
  auto e = make_event(EventKind::kFaulted);
  e.reason = std::move(reason);
  return e;
}

ExecutionEvent Session::run_until_trap(std::uint64_t budget) {
  for (std::uint64_t executed = 0;;) {
    switch (state_.status) {
      case SessionStatus::kClosed: return make_event(EventKind::kClosed);
      case SessionStatus::kHalted: return make_event(EventKind::kHalted);
      case SessionStatus::kFaulted: return fault("session already faulted");
      default: break;
    }
    bool completed = false;
    if (auto e = step(nullptr, completed)) return std::move(*e);
    if (completed && ++executed >= budget) return fault("step budget exhausted");
  }
}

StepRecord Session::step_traced(const TraceHooks& hooks) {
  StepRecord rec;
  rec.pc = state_.pc;
  switch (state_.status) {
    case SessionStatus::kClosed:
      rec.event = make_event(EventKind::kClosed);
      return rec;
    case SessionStatus::kHalted:
      rec.event = make_event(EventKind::kHalted);
      return rec;
    case SessionStatus::kFaulted:
      rec.event = fault("session already faulted");
      return rec;
    default: break;
  }
  rec.event = step(&hooks, rec.completed);
  return rec;
}

std::optional<ExecutionEvent> Session::step(const TraceHooks* hooks,
                                            bool& completed) {
  completed = false;
  if (state_.pc >= program_->instructions.size())
    return fault("pc outside program");
  const Instruction& ins = program_->instructions[state_.pc];
  if (ins.is_trap()) return exec_trap(ins, hooks, completed);

  auto& regs = state_.regs;
  const auto& a = ins.operands[0];
  const auto& b = ins.operands[1];
  std::size_t next = state_.pc + 1;

  auto read_mem = [&](std::uint64_t addr, unsigned width, AccessKind kind,
                      std::uint64_t& out) -> bool {
    auto p = locate(addr, width);
    if (!p) return false;
    out = load_le(p, width);
    if (hooks && hooks->on_read) hooks->on_read(state_.pc, addr, width, out, kind);
    return true;
  };
  auto write_mem = [&](std::uint64_t addr, unsigned width, std::uint64_t v,
                       AccessKind kind) -> bool {
    auto p = locate(addr, width);
    if (!p) return false;
    if (hooks && hooks->on_write) hooks->on_write(state_.pc, addr, width, v, kind);
    store_le(p, width, v);
    return true;
  };

  if (ins.op == Opcode::kLoad && !watches_.empty()) {
    auto addr = effective_address(b);
    if (state_.skip_watch) {
      state_.skip_watch = false;
    } else {
      for (auto& w : watches_) {
        if (w.overlaps(addr, ins.width)) {
          state_.skip_watch = true;
          auto e = make_event(EventKind::kWatchpointRead);
          e.addr = addr;
          e.size = ins.width;
          return e;
        }
      }
    }
  }

  switch (ins.op) {
    case Opcode::kMov: regs[a.reg] = operand_value(b); break;
    case Opcode::kAdd: regs[a.reg] += operand_value(b); break;
    case Opcode::kSub: regs[a.reg] -= operand_value(b); break;
    case Opcode::kMul: regs[a.reg] *= operand_value(b); break;
    case Opcode::kDiv:
    case Opcode::kMod: {
      auto d = operand_value(b);
      if (d == 0) return fault("division by zero");
      regs[a.reg] = ins.op == Opcode::kDiv ? regs[a.reg] / d : regs[a.reg] % d;
      break;
    }
    case Opcode::kAnd: regs[a.reg] &= operand_value(b); break;
    case Opcode::kOr: regs[a.reg] |= operand_value(b); break;
    case Opcode::kXor: regs[a.reg] ^= operand_value(b); break;
    case Opcode::kShl: regs[a.reg] <<= (operand_value(b) & 63); break;
    case Opcode::kShr: regs[a.reg] >>= (operand_value(b) & 63); break;
    case Opcode::kCmp:
      state_.cmp_lhs = regs[a.reg];
      state_.cmp_rhs = operand_value(b);
      break;
    case Opcode::kJmp: next = static_cast<std::size_t>(a.imm); break;
    case Opcode::kJeq: case Opcode::kJne: case Opcode::kJlt:
    case Opcode::kJle: case Opcode::kJgt: case Opcode::kJge: {
      bool taken = condition_holds(ins.op, state_.cmp_lhs, state_.cmp_rhs);
      if (hooks && hooks->on_branch) hooks->on_branch(state_.pc, taken);
      if (taken) next = static_cast<std::size_t>(a.imm);
      break;
    }
    case Opcode::kLoad: {
      std::uint64_t v = 0;
      auto addr = effective_address(b);
      if (!read_mem(addr, ins.width, AccessKind::kProgram, v))
        return fault("invalid read at 0x" + std::to_string(addr));
      regs[a.reg] = v;
      break;
    }
    case Opcode::kStore: {
      auto addr = effective_address(a);
      if (!write_mem(addr, ins.width, truncate(operand_value(b), ins.width),
                     AccessKind::kProgram))
        return fault("invalid write at 0x" + std::to_string(addr));
      break;
    }
    case Opcode::kPush: {
      auto sp = regs[kStackPointer] - 8;
      if (!write_mem(sp, 8, operand_value(a), AccessKind::kStack))
        return fault("stack overflow");
      regs[kStackPointer] = sp;
      break;
    }
    case Opcode::kPop: {
      std::uint64_t v = 0;
      if (!read_mem(regs[kStackPointer], 8, AccessKind::kStack, v))
        return fault("stack underflow");
      regs[kStackPointer] += 8;
      regs[a.reg] = v;
      break;
    }
    case Opcode::kCall: {
      auto sp = regs[kStackPointer] - 8;
      if (!write_mem(sp, 8, next, AccessKind::kStack)) return fault("stack overflow");
      regs[kStackPointer] = sp;
      state_.call_stack.push_back(next);
      next = static_cast<std::size_t>(a.imm);
      break;
    }
    case Opcode::kRet: {
      std::uint64_t v = 0;
      if (state_.call_stack.empty() ||
          !read_mem(regs[kStackPointer], 8, AccessKind::kStack, v))
        return fault("return without call");
      regs[kStackPointer] += 8;
      state_.call_stack.pop_back();
      next = static_cast<std::size_t>(v);
      break;
    }
    case Opcode::kNop: break;
    default: return fault("unhandled opcode");
  }
  state_.pc = next;
  ++state_.instruction_count;
  completed = true;
  return std::nullopt;
}

std::optional<ExecutionEvent> Session::exec_trap(const Instruction& ins,
                                                 const TraceHooks* hooks,
                                                 bool& completed) {
  auto& regs = state_.regs;
  auto retire = [&] {
    ++state_.pc;
    ++state_.instruction_count;
    completed = true;
  };
  switch (ins.op) {
    case Opcode::kAlloc: {
      auto size = operand_value(ins.operands[1]);
      auto rounded = (size + kHeapAlignment - 1) / kHeapAlignment * kHeapAlignment;
      if (size == 0 || state_.heap_mem.size() + rounded > kHeapCapacity)
        return fault("allocation failed");
      std::uint64_t addr = state_.heap_base + state_.heap_mem.size();
      state_.heap_mem.resize(state_.heap_mem.size() + rounded, 0);
      std::uint64_t caller = state_.call_stack.empty() ? 0 : state_.call_stack.back() + 1;
      std::uint64_t context = (caller << 32) | state_.pc;
      state_.allocations.push_back({addr, size, context, true});
      regs[ins.operands[0].reg] = addr;
      auto e = make_event(EventKind::kAllocated);
      e.addr = addr;
      e.size = size;
      e.context = context;
      retire();
      return e;
    }
    case Opcode::kFree: {
      auto addr = regs[ins.operands[0].reg];
      auto idx = state_.allocation_at(addr);
      if (!idx || state_.allocations[*idx].address != addr)
        return fault("invalid free");
      auto& a = state_.allocations[*idx];
      a.live = false;
      auto e = make_event(EventKind::kFreed);
      e.addr = addr;
      e.size = a.size;
      e.context = a.context;
      retire();
      return e;
    }
    case Opcode::kRecv: {
      auto buf = regs[ins.operands[1].reg];
      auto len = operand_value(ins.operands[2]);
      auto channel = static_cast<std::uint32_t>(ins.operands[3].imm);
      if (state_.phase != TrapPhase::kPreRead) {
        if (!locate(buf, static_cast<unsigned>(len)))
          return fault("recv buffer not writable");
        state_.phase = TrapPhase::kPreRead;
        auto e = make_event(EventKind::kReadAboutToExecute);
        e.addr = buf;
        e.size = len;
        e.channel = channel;
        return e;
      }
      auto& q = inbox_[channel];
      if (state_.read_shutdown || q.empty()) {
        state_.status = SessionStatus::kAwaitingInput;
        auto e = make_event(EventKind::kAwaitingInput);
        e.channel = channel;
        return e;
      }
      state_.status = SessionStatus::kRunning;
      auto msg = std::move(q.front());
      q.pop_front();
      auto n = std::min<std::uint64_t>(len, msg.size());
      msg.resize(n);
      for (std::uint64_t i = 0; i < n; ++i) {
        if (hooks && hooks->on_write)
          hooks->on_write(state_.pc, buf + i, 1, msg[i], AccessKind::kTrap);
        *locate(buf + i, 1) = msg[i];
      }
      regs[ins.operands[0].reg] = n;
      state_.phase = TrapPhase::kNone;
      auto e = make_event(EventKind::kReadReturned);
      e.addr = buf;
      e.size = n;
      e.channel = channel;
      e.payload = std::move(msg);
      retire();
      return e;
    }
    case Opcode::kSend: {
      auto buf = regs[ins.operands[0].reg];
      auto len = operand_value(ins.operands[1]);
      auto channel = static_cast<std::uint32_t>(ins.operands[2].imm);
      auto bytes = state_.read_bytes(buf, len);
      if (!bytes) return fault("send buffer not readable");
      if (state_.phase != TrapPhase::kPreWrite) {
        state_.phase = TrapPhase::kPreWrite;
        auto e = make_event(EventKind::kWriteAboutToExecute);
        e.addr = buf;
        e.size = len;
        e.channel = channel;
        e.payload = std::move(*bytes);
        return e;
      }
      if (hooks && hooks->on_read)
        for (std::uint64_t i = 0; i < len; ++i)
          hooks->on_read(state_.pc, buf + i, 1, (*bytes)[i], AccessKind::kTrap);
      outbox_[channel].push_back(std::move(*bytes));
      state_.phase = TrapPhase::kNone;
      retire();
      return std::nullopt;
    }
    case Opcode::kClose: {
      retire();
      state_.status = SessionStatus::kClosed;
      return make_event(EventKind::kClosed);
    }
    case Opcode::kShutdownRd: {
      retire();
      state_.read_shutdown = true;
      inbox_.clear();
      return make_event(EventKind::kShutdownRead);
    }
    case Opcode::kHalt: {
      retire();
      state_.status = SessionStatus::kHalted;
      return make_event(EventKind::kHalted);
    }
    default: return fault("unhandled trap");
  }
}

}  // namespace statelens::vm
