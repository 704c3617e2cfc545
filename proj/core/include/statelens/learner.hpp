// Grey-box learner: memory-keyed hypothesis states, completion queries by
// increasing length, and dataflow-checked state merging.
#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "statelens/dataflow.hpp"
#include "statelens/memdiff.hpp"
#include "statelens/monitor.hpp"
#include "statelens/protocols.hpp"
#include "statelens/report.hpp"

namespace statelens::learner {

struct LearnConfig {
  unsigned T = memdiff::kDefaultRepetitions;
  unsigned D = 3;
  unsigned W = dataflow::kDefaultWindow;
  double time_bound = 600;  // seconds
  std::uint64_t seed = 1;
  std::size_t query_cap = 0;  // 0 = unlimited
};

// A hypothesis state key: candidate-memory valuation, or a terminal kind.
struct StateKey {
  std::vector<std::uint8_t> valuation;
  TerminalKind terminal = TerminalKind::kNone;
  auto operator<=>(const StateKey&) const = default;
};

StateKey state_key(const vm::MachineState& state, const memdiff::CandidateSet& cands,
                   const AllocationMap& map);

// Differing locations of two images under a candidate set.
std::vector<MemoryLocation> differing_locations(const memdiff::CandidateSet& cands,
                                                const memdiff::MemoryImage& a,
                                                const memdiff::MemoryImage& b);

struct PairAnalysis {
  std::vector<MemoryLocation> differing;
  std::vector<LocationVerdict> verdicts;
  std::size_t watch_queries = 0;
  std::size_t hits = 0;
  std::vector<MemAccess> traces;  // heap accesses seen while probing
  std::vector<memdiff::TypedAccess> typed;
  std::vector<MemoryLocation> unmapped;  // absent after the access word
  std::optional<LocationVerdict> state_defining;  // first decisive evidence
  std::string diagnostic;
};

// Probes `merge_access` with every input (skipping `skip`) for each
// location and classifies every watchpoint hit. With `stop_early`, returns
// at the first state-defining or inconclusive verdict.
PairAnalysis analyse_locations(const protocols::ProtocolSpec& spec,
                               const memdiff::CandidateSet& cands,
                               const model::Word& merge_access,
                               const std::vector<MemoryLocation>& locations,
                               const std::set<std::string>& skip, unsigned W,
                               const monitor::MonitorOptions& opts, bool stop_early);

class GreyBoxLearner {
 public:
  GreyBoxLearner(protocols::ProtocolSpec spec, LearnConfig cfg);
  ~GreyBoxLearner();

  LearnReport learn();

  // Runs `q` monitored and returns the hypothesis state its final snapshot
  // resolves to, if any.
  std::optional<std::string> resolve(const model::Word& q);
  const memdiff::CandidateSet& candidates() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

LearnReport learn(const protocols::ProtocolSpec& spec, const LearnConfig& cfg = {});

// Differing-location report between two learned states (post-mortem).
struct Explanation {
  std::string state_a, state_b;
  std::vector<MemoryLocation> differing;
  std::vector<LocationVerdict> verdicts;
};

Explanation explain(const protocols::ProtocolSpec& spec, const LearnReport& report,
                    const std::string& state_a, const std::string& state_b,
                    unsigned W = dataflow::kDefaultWindow);

}  // namespace statelens::learner
