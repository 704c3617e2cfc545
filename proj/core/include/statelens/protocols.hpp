// Bundled toy protocol implementations and their reference machines.
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "statelens/model.hpp"
#include "statelens/vm.hpp"

namespace statelens::protocols {

// One byte of an input message template.
struct TemplateByte {
  enum class Kind : std::uint8_t { kLiteral, kNonce, kSequence };
  Kind kind = Kind::kLiteral;
  std::uint8_t value = 0;  // literal byte, or byte index into the echoed sequence
};

struct InputSymbol {
  std::string symbol;
  std::vector<TemplateByte> message;
  std::uint32_t channel = 0;
};

struct OutputCode {
  std::uint8_t code = 0;
  std::string symbol;
};

// Replies starting with `marker` are protected; they decode only once the
// harness has sent `activate`, using `key`, and only if the check byte matches.
struct Encryption {
  std::uint8_t marker = 0xe0;
  std::uint8_t key = 0;
  std::uint8_t check = 0;
  std::string activate;
};

// The harness remembers a sequence number from certain replies and echoes it
// in later messages through `?rN` template bytes.
struct SequenceEcho {
  std::size_t offset = 0;
  std::size_t width = 0;
  std::vector<std::string> codes;
};

struct ProtocolSpec {
  std::string name;
  std::string source;
  vm::ParamMap params;
  std::vector<InputSymbol> inputs;
  std::vector<OutputCode> outputs;
  std::vector<std::string> error_outputs;
  model::Word happy_flow;
  std::vector<std::string> disabled_outputs;
  std::optional<Encryption> encryption;
  std::optional<SequenceEcho> sequence_echo;
  bool infinite = false;
  std::optional<model::MealyMachine> reference;

  std::vector<std::string> input_names() const;
  std::vector<std::string> output_names() const;  // includes reserved symbols
  const InputSymbol& input(const std::string& symbol) const;
  bool has_input(const std::string& symbol) const;
  std::shared_ptr<const vm::Program> program() const;

 private:
  mutable std::shared_ptr<const vm::Program> program_;
};

class UnknownProtocol : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The six bundled specs with default parameters.
std::vector<ProtocolSpec> corpus();
std::vector<std::string> corpus_names();
// Loads one bundled spec; `params` override the program's defaults.
ProtocolSpec load_spec(const std::string& name, const vm::ParamMap& params = {});
// Raw bundled file (program source, descriptor or reference JSON).
std::string corpus_file(const std::string& filename);

model::MealyMachine backdoor_reference(int n);
model::MealyMachine handshake_bypass_reference(int n);

}  // namespace statelens::protocols
