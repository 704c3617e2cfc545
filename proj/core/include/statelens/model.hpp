// Mealy machines: representation, equivalence checking and import/export.
#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace statelens::model {

// Reserved output symbols shared by every protocol alphabet.
inline const std::string kEmpty = "EMPTY";
inline const std::string kClosed = "CLOSED";
inline const std::string kFault = "FAULT";
inline const std::string kDecryptError = "DECRYPT_ERROR";

using Word = std::vector<std::string>;

struct Transition {
  std::string output;
  std::size_t to = 0;
  bool operator==(const Transition&) const = default;
};

struct State {
  std::string id;
  bool terminal = false;
};

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MealyMachine {
 public:
  MealyMachine() = default;
  explicit MealyMachine(std::vector<std::string> inputs)
      : inputs_(std::move(inputs)) {}

  std::size_t add_state(std::string id, bool terminal = false);
  void set_transition(std::size_t from, const std::string& input,
                      std::string output, std::size_t to);
  void set_initial(std::size_t s) { initial_ = s; }
  void set_terminal(std::size_t s, bool terminal) { states_.at(s).terminal = terminal; }

  const std::vector<std::string>& inputs() const { return inputs_; }
  void set_inputs(std::vector<std::string> inputs) { inputs_ = std::move(inputs); }
  const std::vector<State>& states() const { return states_; }
  std::size_t size() const { return states_.size(); }
  std::size_t initial() const { return initial_; }
  std::optional<std::size_t> find_state(const std::string& id) const;

  // Explicitly defined transition, if any.
  const Transition* transition(std::size_t s, const std::string& input) const;
  // Defined transition, or the implicit CLOSED self-loop of a terminal state.
  std::optional<Transition> step(std::size_t s, const std::string& input) const;
  const std::map<std::string, Transition>& transitions(std::size_t s) const {
    return delta_.at(s);
  }

  // Output word; undefined transitions yield "?" and stay in place.
  Word run(const Word& word) const;
  std::size_t state_after(const Word& word) const;

  bool is_deterministic() const { return true; }  // by construction
  // Every non-terminal state defines every input.
  bool is_complete() const;
  std::vector<std::size_t> reachable() const;
  // Length of the longest shortest path from the initial state.
  std::size_t diameter() const;
  // Shortest input word from the initial state to every reachable state.
  std::map<std::size_t, Word> access_words() const;
  // Number of states of the minimal equivalent machine over reachable states.
  std::size_t minimal_size() const;

 private:
  std::vector<std::string> inputs_;
  std::vector<State> states_;
  std::vector<std::map<std::string, Transition>> delta_;
  std::size_t initial_ = 0;
};

struct Equivalence {
  bool equal = true;
  Word counterexample;  // shortest distinguishing word when !equal
};

// Product BFS over `alphabet`; empty alphabet means the union of both inputs.
Equivalence equivalent(const MealyMachine& a, const MealyMachine& b,
                       const std::vector<std::string>& alphabet = {});

std::string export_dot(const MealyMachine& m);
std::string export_json(const MealyMachine& m);
MealyMachine import_json(const std::string& text);

}  // namespace statelens::model
