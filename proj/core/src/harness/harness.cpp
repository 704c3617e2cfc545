#include "statelens/harness.hpp"

#include <cstdio>

namespace statelens::harness {

namespace {

std::string hex_code(std::uint8_t code) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "0x%02x", code);
  return buf;
}

bool terminal(vm::EventKind k) {
  return k == vm::EventKind::kClosed || k == vm::EventKind::kHalted ||
         k == vm::EventKind::kFaulted;
}

}  // namespace

Connection::Connection(const protocols::ProtocolSpec& spec, std::uint64_t seed,
                       std::uint8_t nonce, std::shared_ptr<vm::MonotonicClock> clock)
    : spec_(&spec),
      session_(vm::create_session(spec.program(), seed, std::move(clock))),
      nonce_(nonce) {}

void Connection::start() {
  if (started_) return;
  started_ = true;
  pump();
}

void Connection::pump() {
  auto limit = session_.instruction_count() + vm::kDefaultStepBudget;
  int position = static_cast<int>(position_) - 1;
  for (;;) {
    vm::ExecutionEvent e;
    if (hooks_) {
      for (;;) {
        auto rec = session_.step_traced(*hooks_);
        if (rec.event) {
          e = std::move(*rec.event);
          break;
        }
        if (session_.instruction_count() >= limit) {
          e = session_.run_until_trap(0);
          break;
        }
      }
    } else {
      auto left = limit > session_.instruction_count()
                      ? limit - session_.instruction_count()
                      : 1;
      e = session_.run_until_trap(left);
    }
    if (observer_) observer_->on_event(e, session_, position);
    if (e.kind == vm::EventKind::kAwaitingInput) return;
    if (terminal(e.kind)) {
      finished_ = true;
      finish_symbol_ = e.kind == vm::EventKind::kFaulted ? model::kFault : model::kClosed;
      return;
    }
  }
}

std::vector<std::uint8_t> Connection::encode(const std::string& input) const {
  const auto& sym = spec_->input(input);
  std::vector<std::uint8_t> msg;
  msg.reserve(sym.message.size());
  for (const auto& b : sym.message) {
    switch (b.kind) {
      case protocols::TemplateByte::Kind::kLiteral: msg.push_back(b.value); break;
      case protocols::TemplateByte::Kind::kNonce: msg.push_back(nonce_); break;
      case protocols::TemplateByte::Kind::kSequence:
        msg.push_back(b.value < sequence_.size() ? sequence_[b.value] : 0);
        break;
    }
  }
  return msg;
}

std::string Connection::decode(const std::vector<std::uint8_t>& reply) {
  if (reply.empty()) return hex_code(0);
  std::uint8_t code = reply[0];
  if (spec_->encryption && code == spec_->encryption->marker) {
    const auto& enc = *spec_->encryption;
    if (!activated_ || reply.size() < 3 ||
        static_cast<std::uint8_t>(reply[2] ^ enc.key) != enc.check)
      return model::kDecryptError;
    code = reply[1] ^ enc.key;
  }
  std::string symbol = hex_code(code);
  for (const auto& o : spec_->outputs)
    if (o.code == code) symbol = o.symbol;
  if (spec_->sequence_echo) {
    const auto& echo = *spec_->sequence_echo;
    for (const auto& c : echo.codes) {
      if (c == symbol && reply.size() >= echo.offset + echo.width) {
        sequence_.assign(reply.begin() + static_cast<std::ptrdiff_t>(echo.offset),
                         reply.begin() + static_cast<std::ptrdiff_t>(echo.offset + echo.width));
      }
    }
  }
  return symbol;
}

std::string Connection::exchange(const std::string& input) {
  start();
  auto msg = encode(input);
  std::size_t pos = position_++;
  auto ts = session_.clock().tick();
  io_log_.push_back({IoEvent::Kind::kInputSent, ts, pos, input, msg});
  if (observer_) observer_->on_input(pos, ts);
  if (finished_) return model::kClosed;
  if (spec_->encryption && input == spec_->encryption->activate) activated_ = true;
  session_.deliver(msg, spec_->input(input).channel);
  pump();
  std::string out;
  for (auto& reply : session_.take_output(output_channel_)) {
    auto sym = decode(reply);
    io_log_.push_back({IoEvent::Kind::kOutputReceived, session_.clock().tick(), pos, sym,
                       std::move(reply)});
    out += out.empty() ? sym : "+" + sym;
  }
  if (!out.empty()) return out;
  return finished_ ? finish_symbol_ : model::kEmpty;
}

QueryResult execute_query(const protocols::ProtocolSpec& spec, const model::Word& q,
                          std::uint64_t seed, std::uint8_t nonce,
                          SessionObserver* observer, const vm::TraceHooks* hooks) {
  Connection conn(spec, seed, nonce);
  conn.set_observer(observer);
  conn.set_hooks(hooks);
  QueryResult result;
  result.query = q;
  for (const auto& input : q) result.outputs.push_back(conn.exchange(input));
  result.io_log = conn.io_log();
  return result;
}

}  // namespace statelens::harness
