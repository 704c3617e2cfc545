// Toy virtual machine: the instrumented target platform.
//
// Programs are written in a small line-oriented assembly (see docs/toyasm.ebnf)
// and executed by a Session. A Session exposes the hooks a ptrace-style monitor
// would use: allocation traps, I/O traps, single stepping with memory/branch
// callbacks, read watchpoints and full state capture/restore.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace statelens::vm {

inline constexpr std::size_t kNumRegisters = 16;
inline constexpr std::size_t kStackPointer = 15;
inline constexpr std::uint64_t kStaticBase = 0x0040'0000;
inline constexpr std::uint64_t kStackTop = 0x7ffd'0000'0000;
inline constexpr std::uint64_t kStackSize = 2048;
inline constexpr std::uint64_t kHeapRegionBase = 0x5550'0000'0000;
inline constexpr std::uint64_t kHeapCapacity = 1 << 20;
inline constexpr std::uint64_t kHeapAlignment = 16;
inline constexpr std::uint64_t kDefaultStepBudget = 1'000'000;

enum class Opcode : std::uint8_t {
  kMov, kAdd, kSub, kMul, kDiv, kMod, kAnd, kOr, kXor, kShl, kShr,
  kCmp,
  kJmp, kJeq, kJne, kJlt, kJle, kJgt, kJge,
  kLoad, kStore, kPush, kPop, kCall, kRet, kNop,
  // Traps.
  kAlloc, kFree, kRecv, kSend, kClose, kShutdownRd, kHalt,
};

enum class OperandKind : std::uint8_t { kNone, kReg, kImm, kMem, kLabel };

struct Operand {
  OperandKind kind = OperandKind::kNone;
  std::uint8_t reg = 0;   // register, or base register of a memory operand
  std::int64_t imm = 0;   // immediate, displacement, or label target index
};

struct Instruction {
  Opcode op = Opcode::kNop;
  std::uint8_t width = 0;  // access width of load/store; 8 for push/pop
  std::array<Operand, 4> operands{};
  int line = 0;            // source line, for diagnostics and verdict logs

  bool is_trap() const { return op >= Opcode::kAlloc; }
  bool is_conditional_jump() const {
    return op >= Opcode::kJeq && op <= Opcode::kJge;
  }
};

struct Program {
  std::string name;
  std::vector<Instruction> instructions;
  std::map<std::string, std::size_t> labels;
  std::map<std::string, std::uint64_t> data_symbols;  // name -> static address
  std::vector<std::uint8_t> data;                      // initial static segment
  std::size_t entry = 0;

  std::optional<std::size_t> label(const std::string& name) const;
  // Source line of the instruction at pc, 0 if out of range.
  int line_of(std::size_t pc) const;
};

class AssemblyError : public std::runtime_error {
 public:
  AssemblyError(int line, const std::string& what);
  int line() const { return line_; }

 private:
  int line_;
};

class ParseError : public AssemblyError {
 public:
  using AssemblyError::AssemblyError;
};

class UnresolvedLabel : public AssemblyError {
 public:
  UnresolvedLabel(int line, std::string label);
  const std::string& label() const { return label_; }

 private:
  std::string label_;
};

using ParamMap = std::map<std::string, std::int64_t>;

// Assembles program source. `params` override `.param` defaults.
Program load_program(std::string_view text, const ParamMap& params = {},
                     std::string name = {});

enum class SessionStatus : std::uint8_t {
  kRunning, kAwaitingInput, kClosed, kHalted, kFaulted,
};

enum class EventKind : std::uint8_t {
  kReadAboutToExecute,
  kReadReturned,
  kWriteAboutToExecute,
  kAllocated,
  kFreed,
  kClosed,
  kShutdownRead,
  kWatchpointRead,
  kAwaitingInput,
  kHalted,
  kFaulted,
};

std::string_view to_string(EventKind kind);
std::string_view to_string(SessionStatus status);

struct ExecutionEvent {
  EventKind kind = EventKind::kHalted;
  std::uint64_t timestamp = 0;
  std::size_t pc = 0;
  std::uint64_t addr = 0;
  std::uint64_t size = 0;
  std::uint32_t channel = 0;
  std::uint64_t context = 0;            // allocation call site
  std::vector<std::uint8_t> payload;    // bytes read or about to be written
  std::string reason;                   // fault description
};

// Shared tick source for the monitor, the harness and the VM.
class MonotonicClock {
 public:
  std::uint64_t tick() { return ++now_; }
  std::uint64_t now() const { return now_; }

 private:
  std::uint64_t now_ = 0;
};

struct Allocation {
  std::uint64_t address = 0;
  std::uint64_t size = 0;
  std::uint64_t context = 0;
  bool live = true;
  bool operator==(const Allocation&) const = default;
};

enum class TrapPhase : std::uint8_t { kNone, kPreRead, kPreWrite };

// Everything needed to resume execution; this is the snapshot payload.
struct MachineState {
  std::array<std::uint64_t, kNumRegisters> regs{};
  std::size_t pc = 0;
  std::uint64_t cmp_lhs = 0;
  std::uint64_t cmp_rhs = 0;
  std::uint64_t heap_base = 0;
  std::vector<std::uint8_t> static_mem;
  std::vector<std::uint8_t> stack_mem;
  std::vector<std::uint8_t> heap_mem;   // bump-allocated prefix of the heap
  std::vector<Allocation> allocations;  // in allocation order
  std::vector<std::size_t> call_stack;  // shadow stack of return pcs
  std::uint64_t instruction_count = 0;
  SessionStatus status = SessionStatus::kRunning;
  TrapPhase phase = TrapPhase::kNone;
  bool read_shutdown = false;
  bool skip_watch = false;

  bool operator==(const MachineState&) const = default;

  std::uint64_t stack_base() const { return kStackTop - stack_mem.size(); }
  // Reads `width` bytes little-endian; nullopt if unmapped.
  std::optional<std::uint64_t> read(std::uint64_t addr, unsigned width) const;
  // Copies `len` bytes starting at addr; nullopt if any byte is unmapped.
  std::optional<std::vector<std::uint8_t>> read_bytes(std::uint64_t addr,
                                                      std::uint64_t len) const;
  // Index into `allocations` of the live allocation containing addr.
  std::optional<std::size_t> allocation_at(std::uint64_t addr) const;
};

std::vector<std::uint8_t> serialize(const MachineState& state);
MachineState deserialize(std::span<const std::uint8_t> bytes);

class RestoreFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class AccessKind : std::uint8_t { kProgram, kStack, kTrap };

struct TraceHooks {
  std::function<void(std::size_t pc, std::uint64_t addr, unsigned width,
                     std::uint64_t value, AccessKind kind)>
      on_read;
  std::function<void(std::size_t pc, std::uint64_t addr, unsigned width,
                     std::uint64_t value, AccessKind kind)>
      on_write;
  std::function<void(std::size_t pc, bool taken)> on_branch;
};

struct StepRecord {
  std::size_t pc = 0;
  bool completed = false;  // instruction retired (pc advanced or jumped)
  std::optional<ExecutionEvent> event;
};

struct AddrRange {
  std::uint64_t addr = 0;
  std::uint64_t size = 0;
  std::uint64_t end() const { return addr + size; }
  bool overlaps(std::uint64_t a, std::uint64_t len) const {
    return a < end() && addr < a + len;
  }
  bool contains(std::uint64_t a) const { return a >= addr && a < end(); }
  bool operator==(const AddrRange&) const = default;
};

class Session {
 public:
  Session(std::shared_ptr<const Program> program, std::uint64_t seed,
          std::shared_ptr<MonotonicClock> clock = nullptr);
  Session(std::shared_ptr<const Program> program, MachineState state,
          std::shared_ptr<MonotonicClock> clock = nullptr);

  // Executes until the next trap event, fault or budget exhaustion.
  ExecutionEvent run_until_trap(std::uint64_t budget = kDefaultStepBudget);
  // Executes one instruction (or one phase of a trap) with callbacks.
  StepRecord step_traced(const TraceHooks& hooks);

  MachineState snapshot() const { return state_; }
  const MachineState& state() const { return state_; }
  const Program& program() const { return *program_; }
  std::shared_ptr<const Program> program_ptr() const { return program_; }
  MonotonicClock& clock() { return *clock_; }
  std::shared_ptr<MonotonicClock> clock_ptr() const { return clock_; }

  SessionStatus status() const { return state_.status; }
  std::uint64_t heap_base() const { return state_.heap_base; }
  std::uint64_t instruction_count() const { return state_.instruction_count; }
  std::size_t pc() const { return state_.pc; }

  void deliver(std::vector<std::uint8_t> message, std::uint32_t channel = 0);
  std::vector<std::vector<std::uint8_t>> take_output(std::uint32_t channel = 0);
  bool has_pending_input(std::uint32_t channel = 0) const;

  void watch(AddrRange range) { watches_.push_back(range); }
  void clear_watches() { watches_.clear(); }

  std::optional<std::uint64_t> read(std::uint64_t addr, unsigned width) const {
    return state_.read(addr, width);
  }
  bool write(std::uint64_t addr, unsigned width, std::uint64_t value);
  bool write_bytes(std::uint64_t addr, std::span<const std::uint8_t> bytes);

  // Resolved address of a memory operand under the current registers.
  std::uint64_t effective_address(const Operand& op) const;
  std::uint64_t operand_value(const Operand& op) const;

 private:
  std::optional<ExecutionEvent> step(const TraceHooks* hooks, bool& completed);
  std::optional<ExecutionEvent> exec_trap(const Instruction& ins,
                                          const TraceHooks* hooks,
                                          bool& completed);
  ExecutionEvent make_event(EventKind kind);
  ExecutionEvent fault(std::string reason);
  std::uint8_t* locate(std::uint64_t addr, unsigned width);

  std::shared_ptr<const Program> program_;
  std::shared_ptr<MonotonicClock> clock_;
  MachineState state_;
  std::map<std::uint32_t, std::deque<std::vector<std::uint8_t>>> inbox_;
  std::map<std::uint32_t, std::vector<std::vector<std::uint8_t>>> outbox_;
  std::vector<AddrRange> watches_;
};

Session create_session(std::shared_ptr<const Program> program,
                       std::uint64_t seed,
                       std::shared_ptr<MonotonicClock> clock = nullptr);
// Rebuilds a session from a snapshot; throws RestoreFailure if inconsistent.
Session restore_session(std::shared_ptr<const Program> program,
                        const MachineState& state,
                        std::shared_ptr<MonotonicClock> clock = nullptr);

std::uint64_t heap_base_for_seed(std::uint64_t seed);

}  // namespace statelens::vm
