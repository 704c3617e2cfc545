// Test harness: abstract symbols to wire messages and back.
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "statelens/model.hpp"
#include "statelens/protocols.hpp"
#include "statelens/vm.hpp"

namespace statelens::harness {

inline constexpr std::uint8_t kDefaultNonce = 0x5a;

struct IoEvent {
  enum class Kind : std::uint8_t { kInputSent, kOutputReceived };
  Kind kind = Kind::kInputSent;
  std::uint64_t timestamp = 0;
  std::size_t position = 0;
  std::string symbol;
  std::vector<std::uint8_t> bytes;
};

struct QueryResult {
  model::Word query;
  model::Word outputs;
  std::vector<IoEvent> io_log;
};

// Receives every VM event as the connection drives the session. `position`
// is the index of the most recent input sent, -1 before the first.
class SessionObserver {
 public:
  virtual ~SessionObserver() = default;
  virtual void on_event(const vm::ExecutionEvent& event, const vm::Session& session,
                        int position) = 0;
  virtual void on_input(std::size_t /*position*/, std::uint64_t /*timestamp*/) {}
};

// One protocol session under harness control.
class Connection {
 public:
  Connection(const protocols::ProtocolSpec& spec, std::uint64_t seed,
             std::uint8_t nonce = kDefaultNonce,
             std::shared_ptr<vm::MonotonicClock> clock = nullptr);

  void set_observer(SessionObserver* observer) { observer_ = observer; }
  // Single-steps the session with these hooks instead of running freely.
  void set_hooks(const vm::TraceHooks* hooks) { hooks_ = hooks; }
  void set_output_channel(std::uint32_t channel) { output_channel_ = channel; }

  // Runs the program up to its first blocking read.
  void start();
  // Sends one abstract input and returns the abstract output.
  std::string exchange(const std::string& input);

  std::vector<std::uint8_t> encode(const std::string& input) const;
  std::string decode(const std::vector<std::uint8_t>& reply);

  vm::Session& session() { return session_; }
  const vm::Session& session() const { return session_; }
  bool finished() const { return finished_; }
  std::size_t position() const { return position_; }
  const std::vector<IoEvent>& io_log() const { return io_log_; }
  const protocols::ProtocolSpec& spec() const { return *spec_; }

 private:
  void pump();

  const protocols::ProtocolSpec* spec_;
  vm::Session session_;
  std::uint8_t nonce_;
  bool activated_ = false;
  std::vector<std::uint8_t> sequence_;
  bool started_ = false;
  bool finished_ = false;
  std::string finish_symbol_;
  std::size_t position_ = 0;
  std::uint32_t output_channel_ = 0;
  std::vector<IoEvent> io_log_;
  SessionObserver* observer_ = nullptr;
  const vm::TraceHooks* hooks_ = nullptr;
};

// Executes q on a fresh session (reset semantics).
QueryResult execute_query(const protocols::ProtocolSpec& spec, const model::Word& q,
                          std::uint64_t seed, std::uint8_t nonce = kDefaultNonce,
                          SessionObserver* observer = nullptr,
                          const vm::TraceHooks* hooks = nullptr);

}  // namespace statelens::harness
