// Learning results shared by the grey-box and black-box learners.
#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "statelens/dataflow.hpp"
#include "statelens/memdiff.hpp"
#include "statelens/model.hpp"

namespace statelens {

enum class ExitKind : std::uint8_t { kConverged, kTimeBound, kQueryCap };
std::string_view to_string(ExitKind kind);

struct LearnStats {
  std::size_t classifying_locations = 0;
  std::size_t classifying_allocations = 0;
  std::size_t memory_states = 0;
  std::size_t io_states = 0;
  std::size_t total_queries = 0;
  std::size_t io_mem_queries = 0;
  std::size_t watchpoint_queries = 0;
  std::size_t watchpoint_hits = 0;
  double total_time = 0;
  std::size_t bootstrap_queries = 0;
  std::size_t merges = 0;
  std::size_t merge_checks = 0;
  std::size_t rekeys = 0;
  std::size_t symbols = 0;  // input symbols sent across all queries
  std::size_t repeated_queries = 0;  // io/mem queries for an already executed word
};

struct LocationVerdict {
  MemoryLocation location;
  std::string probe;
  dataflow::Verdict verdict;
  bool read_before_write = true;
  std::size_t hits = 0;
};

struct MergeRecord {
  std::string base;  // state ids at the time of the check
  std::string merge;
  model::Word base_access;
  model::Word merge_access;
  bool merged = false;
  std::string reason;
  std::vector<LocationVerdict> verdicts;
};

struct LearnReport {
  std::string mode;  // "greybox" or "blackbox"
  std::string protocol;
  std::map<std::string, std::int64_t> params;
  model::MealyMachine model;
  LearnStats stats;
  ExitKind exit = ExitKind::kConverged;
  std::map<std::string, model::Word> access;  // final state id -> access word
  memdiff::CandidateSet candidates;
  std::vector<MergeRecord> merges;
  std::map<std::string, double> config;

  int exit_code() const { return exit == ExitKind::kConverged ? 0 : 2; }
};

std::string report_to_json(const LearnReport& r);
LearnReport report_from_json(const std::string& text);

}  // namespace statelens
