// Black-box baseline: L* over output queries with a bounded W-method
// equivalence oracle.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "statelens/protocols.hpp"
#include "statelens/report.hpp"

namespace statelens::blackbox {

struct BlackBoxConfig {
  unsigned depth_bound = 2;  // middle length of the W-method test suite
  std::size_t query_cap = 50000;
  double time_bound = 600;  // seconds
  std::uint64_t seed = 1;
};

// Output oracle over input words. Answers from a prefix-closed cache when
// possible; once a word reaches CLOSED or FAULT every extension is CLOSED.
class QueryCache {
 public:
  using Backend = std::function<model::Word(const model::Word&)>;
  explicit QueryCache(Backend backend) : backend_(std::move(backend)) {}

  model::Word query(const model::Word& w);
  std::optional<model::Word> lookup(const model::Word& w) const;
  std::size_t executed() const { return executed_; }
  std::size_t symbols() const { return symbols_; }

 private:
  void insert(const model::Word& w, const model::Word& out);

  Backend backend_;
  std::map<model::Word, model::Word> cache_;  // maximal words only need to be kept
  std::size_t executed_ = 0;
  std::size_t symbols_ = 0;
};

class QueryCapReached : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

LearnReport learn_bb(const protocols::ProtocolSpec& spec, const BlackBoxConfig& cfg = {});

// Learns from an arbitrary output oracle; `query_cap` and `time_bound` as above.
LearnReport learn_bb(const std::vector<std::string>& inputs, QueryCache& cache,
                     const BlackBoxConfig& cfg);

}  // namespace statelens::blackbox
