#include "statelens/report.hpp"

#include <nlohmann/json.hpp>

namespace statelens {

using nlohmann::json;

std::string_view to_string(ExitKind kind) {
  switch (kind) {
    case ExitKind::kConverged: return "converged";
    case ExitKind::kTimeBound: return "time-bound";
    case ExitKind::kQueryCap: return "query-cap";
  }
  return "?";
}

namespace {

ExitKind exit_from(const std::string& s) {
  if (s == "converged") return ExitKind::kConverged;
  if (s == "time-bound") return ExitKind::kTimeBound;
  if (s == "query-cap") return ExitKind::kQueryCap;
  throw model::SchemaError("unknown exit kind " + s);
}

dataflow::VerdictKind verdict_from(const std::string& s) {
  for (auto k : {dataflow::VerdictKind::kStateDefining, dataflow::VerdictKind::kNotStateDefining,
                 dataflow::VerdictKind::kInconclusive})
    if (dataflow::to_string(k) == s) return k;
  throw model::SchemaError("unknown verdict " + s);
}

json location_json(const MemoryLocation& l) {
  return {{"allocId", l.alloc_id}, {"offset", l.offset}, {"size", l.size}, {"type", l.type}};
}

MemoryLocation location_from(const json& j) {
  return {j.at("allocId").get<std::size_t>(), j.at("offset").get<std::uint64_t>(),
          j.at("size").get<std::uint64_t>(), j.at("type").get<unsigned>()};
}

template <typename T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <typename T>
std::optional<T> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

json verdict_json(const LocationVerdict& v) {
  const auto& d = v.verdict;
  return {{"location", location_json(v.location)},
          {"probe", v.probe},
          {"verdict", dataflow::to_string(d.kind)},
          {"branchPc", opt(d.branch_pc)},
          {"branchLine", d.branch_line},
          {"writePc", opt(d.write_pc)},
          {"writeLine", d.write_line},
          {"alternateValue", opt(d.alternate_value)},
          {"startPc", d.start_pc},
          {"note", d.note},
          {"readBeforeWrite", v.read_before_write},
          {"hits", v.hits}};
}

LocationVerdict verdict_from(const json& j) {
  LocationVerdict v;
  v.location = location_from(j.at("location"));
  v.probe = j.at("probe");
  v.verdict.kind = verdict_from(j.at("verdict").get<std::string>());
  v.verdict.branch_pc = opt_from<std::size_t>(j, "branchPc");
  v.verdict.branch_line = j.value("branchLine", 0);
  v.verdict.write_pc = opt_from<std::size_t>(j, "writePc");
  v.verdict.write_line = j.value("writeLine", 0);
  v.verdict.alternate_value = opt_from<std::uint64_t>(j, "alternateValue");
  v.verdict.start_pc = j.value("startPc", std::size_t{0});
  v.verdict.note = j.value("note", "");
  v.read_before_write = j.value("readBeforeWrite", true);
  v.hits = j.value("hits", std::size_t{0});
  return v;
}

}  // namespace

std::string report_to_json(const LearnReport& r) {
  const auto& s = r.stats;
  json stats = {{"classifyingLocations", s.classifying_locations},
                {"classifyingAllocations", s.classifying_allocations},
                {"memoryStates", s.memory_states},
                {"ioStates", s.io_states},
                {"totalQueries", s.total_queries},
                {"ioMemQueries", s.io_mem_queries},
                {"watchpointQueries", s.watchpoint_queries},
                {"watchpointHits", s.watchpoint_hits},
                {"totalTime", s.total_time},
                {"bootstrapQueries", s.bootstrap_queries},
                {"merges", s.merges},
                {"mergeChecks", s.merge_checks},
                {"rekeys", s.rekeys},
                {"symbols", s.symbols},
                {"repeatedQueries", s.repeated_queries}};
  auto locations = json::array();
  for (const auto& l : r.candidates.locations) locations.push_back(location_json(l));
  auto base = json::array();
  for (const auto& a : r.candidates.base_log)
    base.push_back({a.position, a.kind == AllocKind::kAlloc ? "alloc" : "free", a.size,
                    a.context, a.address, a.timestamp});
  auto merges = json::array();
  for (const auto& m : r.merges) {
    auto verdicts = json::array();
    for (const auto& v : m.verdicts) verdicts.push_back(verdict_json(v));
    merges.push_back({{"base", m.base},
                      {"merge", m.merge},
                      {"baseAccess", m.base_access},
                      {"mergeAccess", m.merge_access},
                      {"merged", m.merged},
                      {"reason", m.reason},
                      {"verdicts", verdicts}});
  }
  json j = {{"mode", r.mode},
            {"protocol", r.protocol},
            {"params", r.params},
            {"exit", to_string(r.exit)},
            {"model", json::parse(model::export_json(r.model))},
            {"stats", stats},
            {"access", r.access},
            {"candidates", {{"locations", locations}, {"baseLog", base}}},
            {"merges", merges},
            {"config", r.config}};
  return j.dump(2);
}

LearnReport report_from_json(const std::string& text) {
  LearnReport r;
  try {
    auto j = json::parse(text);
    r.mode = j.at("mode");
    r.protocol = j.at("protocol");
    r.params = j.at("params").get<std::map<std::string, std::int64_t>>();
    r.exit = exit_from(j.at("exit"));
    r.model = model::import_json(j.at("model").dump());
    const auto& s = j.at("stats");
    auto& st = r.stats;
    st.classifying_locations = s.at("classifyingLocations");
    st.classifying_allocations = s.at("classifyingAllocations");
    st.memory_states = s.at("memoryStates");
    st.io_states = s.at("ioStates");
    st.total_queries = s.at("totalQueries");
    st.io_mem_queries = s.at("ioMemQueries");
    st.watchpoint_queries = s.at("watchpointQueries");
    st.watchpoint_hits = s.at("watchpointHits");
    st.total_time = s.at("totalTime");
    st.bootstrap_queries = s.value("bootstrapQueries", std::size_t{0});
    st.merges = s.value("merges", std::size_t{0});
    st.merge_checks = s.value("mergeChecks", std::size_t{0});
    st.rekeys = s.value("rekeys", std::size_t{0});
    st.symbols = s.value("symbols", std::size_t{0});
    st.repeated_queries = s.value("repeatedQueries", std::size_t{0});
    r.access = j.at("access").get<std::map<std::string, model::Word>>();
    const auto& c = j.at("candidates");
    for (const auto& l : c.at("locations")) r.candidates.locations.push_back(location_from(l));
    for (const auto& a : c.at("baseLog"))
      r.candidates.base_log.push_back({a[0].get<std::size_t>(),
                                       a[1] == "alloc" ? AllocKind::kAlloc : AllocKind::kFree,
                                       a[2], a[3], a[4], a[5]});
    for (const auto& m : j.at("merges")) {
      MergeRecord rec{m.at("base"), m.at("merge"), m.at("baseAccess"), m.at("mergeAccess"),
                      m.at("merged"), m.at("reason"), {}};
      for (const auto& v : m.at("verdicts")) rec.verdicts.push_back(verdict_from(v));
      r.merges.push_back(std::move(rec));
    }
    r.config = j.at("config").get<std::map<std::string, double>>();
  } catch (const json::exception& e) {
    throw model::SchemaError(std::string("malformed report: ") + e.what());
  }
  return r;
}

}  // namespace statelens
