#include <algorithm>
#include <deque>
#include <random>

#include "statelens/learner.hpp"

namespace statelens::learner {

namespace {

using Clock = std::chrono::steady_clock;

TerminalKind collapse(TerminalKind k) {
  return k == TerminalKind::kShutdownRead ? TerminalKind::kShutdownRead
                                          : TerminalKind::kClosed;
}

const std::string& terminal_output(TerminalKind k) {
  return k == TerminalKind::kShutdownRead ? model::kEmpty : model::kClosed;
}

// Maps heap accesses to base allocations through a run's allocation log.
std::vector<memdiff::TypedAccess> typed_from_log(const std::vector<MemAccess>& accesses,
                                                 const AllocationLog& run_log,
                                                 const AllocationLog& base_log) {
  auto allocs = allocations_of(run_log);
  auto map = memdiff::align_allocations(run_log, base_log);
  std::vector<memdiff::TypedAccess> out;
  for (const auto& a : accesses) {
    for (std::size_t i = 0; i < allocs.size(); ++i) {
      if (a.addr < allocs[i].address || a.addr >= allocs[i].address + allocs[i].size) continue;
      if (map.to_base[i]) out.push_back({*map.to_base[i], a.addr - allocs[i].address, a.width});
      break;
    }
  }
  return out;
}

// Addresses of every candidate location in one run's machine state.
std::vector<vm::AddrRange> resolve_candidates(const memdiff::CandidateSet& cands,
                                              const AllocationLog& run_log,
                                              const vm::MachineState& state) {
  auto map = memdiff::align_allocations(run_log, cands.base_log);
  std::vector<vm::AddrRange> out;
  for (const auto& loc : cands.locations) {
    auto run = map.run_of(loc.alloc_id);
    if (!run || *run >= state.allocations.size()) continue;
    out.push_back({state.allocations[*run].address + loc.offset, loc.size});
  }
  return out;
}

}  // namespace

StateKey state_key(const vm::MachineState& state, const memdiff::CandidateSet& cands,
                   const AllocationMap& map) {
  return {cands.project(memdiff::project(state, map, cands.base_log)), TerminalKind::kNone};
}

std::vector<MemoryLocation> differing_locations(const memdiff::CandidateSet& cands,
                                                const memdiff::MemoryImage& a,
                                                const memdiff::MemoryImage& b) {
  std::vector<MemoryLocation> out;
  for (const auto& loc : cands.locations) {
    for (auto o = loc.offset; o < loc.end(); ++o) {
      if (memdiff::byte_at(a, loc.alloc_id, o) != memdiff::byte_at(b, loc.alloc_id, o)) {
        out.push_back(loc);
        break;
      }
    }
  }
  return out;
}

PairAnalysis analyse_locations(const protocols::ProtocolSpec& spec,
                               const memdiff::CandidateSet& cands,
                               const model::Word& merge_access,
                               const std::vector<MemoryLocation>& locations,
                               const std::set<std::string>& skip, unsigned W,
                               const monitor::MonitorOptions& opts, bool stop_early) {
  PairAnalysis out;
  out.differing = locations;
  auto program = spec.program();
  for (const auto& loc : locations) {
    for (const auto& probe : spec.input_names()) {
      if (skip.count(probe)) continue;
      LocationVerdict lv;
      lv.location = loc;
      lv.probe = probe;
      monitor::WatchResult w;
      try {
        w = monitor::watch_reads(spec, merge_access, loc, cands.base_log, probe, opts);
      } catch (const monitor::LocationUnmapped& e) {
        out.diagnostic = e.what();
        lv.verdict.kind = dataflow::VerdictKind::kInconclusive;
        lv.verdict.note = std::string("location unmapped: ") + e.what();
        out.verdicts.push_back(lv);
        out.unmapped.push_back(loc);
        if (!out.state_defining) out.state_defining = lv;
        if (stop_early) return out;
        break;
      }
      ++out.watch_queries;
      out.hits += w.hits.size();
      lv.hits = w.hits.size();
      for (auto a : w.trace) out.traces.push_back(a);
      auto typed = typed_from_log(w.trace, w.alloc_log, cands.base_log);
      out.typed.insert(out.typed.end(), typed.begin(), typed.end());
      lv.read_before_write = dataflow::read_before_write(w.trace, w.range);
      if (!lv.read_before_write) {
        lv.verdict.note = "written before read";
      } else if (w.hits.empty()) {
        lv.verdict.note = "not read by this input";
      } else {
        dataflow::TaintConfig tc;
        tc.W = W;
        tc.target = w.range;
        for (const auto& hit : w.hits) {
          tc.state_memory = resolve_candidates(cands, w.alloc_log, *hit.context);
          auto v = dataflow::classify(program, hit, tc);
          if (v.kind != dataflow::VerdictKind::kNotStateDefining || !lv.verdict.branch_pc) {
            bool decisive = v.kind != dataflow::VerdictKind::kNotStateDefining;
            lv.verdict = std::move(v);
            if (decisive) break;
          }
        }
      }
      out.verdicts.push_back(lv);
      if (lv.verdict.kind != dataflow::VerdictKind::kNotStateDefining) {
        if (!out.state_defining) out.state_defining = lv;
        if (stop_early) return out;
      }
    }
  }
  return out;
}

struct GreyBoxLearner::Impl {
  struct HState {
    StateKey key;
    model::Word access;
    std::map<std::string, std::pair<std::string, std::size_t>> delta;
    memdiff::MemoryImage image;
    bool alive = true;
  };

  struct Ingested {
    bool complete = true;
    std::size_t last = 0;  // state reached before the first unresolved position
    std::size_t last_index = 0;  // that position
  };

  protocols::ProtocolSpec spec;
  LearnConfig cfg;
  std::vector<std::string> inputs;
  monitor::MonitorOptions mon;
  memdiff::CandidateSet cands;
  std::vector<memdiff::TypedAccess> type_log;
  std::mt19937_64 rng;

  std::vector<HState> states;
  std::vector<std::size_t> parent;
  std::map<StateKey, std::size_t> index;
  std::vector<std::pair<memdiff::MemoryImage, std::size_t>> observed;
  std::set<StateKey> seen_keys;
  std::set<model::Word> executed;
  std::map<model::Word, std::pair<std::size_t, std::string>> pending;
  std::optional<std::size_t> initial;

  std::map<std::size_t, std::deque<std::pair<std::size_t, std::string>>> queue;
  std::set<std::pair<StateKey, StateKey>> kept;
  std::map<MemoryLocation, LocationVerdict> confirmed;

  LearnStats stats;
  std::vector<MergeRecord> merges;
  Clock::time_point start;
  bool timed_out = false;
  bool capped = false;
  std::map<std::size_t, std::string> names;

  Impl(protocols::ProtocolSpec s, LearnConfig c)
      : spec(std::move(s)), cfg(c), inputs(spec.input_names()), rng(c.seed) {
    if (cfg.D < 1) throw std::invalid_argument("merge depth must be at least 1");
  }

  std::size_t find(std::size_t s) {
    while (parent[s] != s) s = parent[s] = parent[parent[s]];
    return s;
  }

  bool is_terminal(std::size_t s) const { return states[s].key.terminal != TerminalKind::kNone; }

  bool out_of_budget() {
    if (timed_out || capped) return true;
    double elapsed = std::chrono::duration<double>(Clock::now() - start).count();
    if (elapsed > cfg.time_bound) timed_out = true;
    if (cfg.query_cap && stats.io_mem_queries + stats.watchpoint_queries >= cfg.query_cap)
      capped = true;
    return timed_out || capped;
  }

  void enqueue_completions(std::size_t s) {
    if (is_terminal(s) || !states[s].alive) return;
    for (const auto& i : inputs)
      if (!states[s].delta.count(i)) queue[states[s].access.size() + 1].push_back({s, i});
  }

  std::size_t state_for(const StateKey& key, const memdiff::MemoryImage& image,
                        const model::Word& access) {
    seen_keys.insert(key);
    auto it = index.find(key);
    if (it != index.end()) {
      auto s = find(it->second);
      if (!states[s].alive) {
        states[s].alive = true;
        states[s].access = access;
        enqueue_completions(s);
      }
      return s;
    }
    std::size_t id = states.size();
    if (key.terminal == TerminalKind::kNone) observed.push_back({image, id});
    states.push_back({key, access, {}, image, true});
    parent.push_back(id);
    index[key] = id;
    if (!initial) initial = id;
    enqueue_completions(id);
    return id;
  }

  void define(std::size_t s, const std::string& input, const std::string& output,
              std::size_t t) {
    s = find(s);
    if (is_terminal(s)) return;
    states[s].delta.emplace(input, std::make_pair(output, t));
  }

  StateKey key_of(const vm::MachineState& state, const AllocationMap& map,
                  memdiff::MemoryImage& image) {
    image = memdiff::project(state, map, cands.base_log);
    return {cands.project(image), TerminalKind::kNone};
  }

  Ingested ingest(const monitor::MonitoredRun& run) {
    Ingested res;
    const auto* init = run.initial_state();
    if (!init) return {false, 0};
    auto map = memdiff::align_allocations(run.alloc_log, cands.base_log);
    memdiff::MemoryImage image;
    auto key = key_of(*init->payload, map, image);
    std::size_t cur = state_for(key, image, {});
    const auto& q = run.result.query;
    const auto& out = run.result.outputs;
    const auto& al = run.alignment;
    for (std::size_t k = 0; k < q.size(); ++k) {
      int pos = static_cast<int>(k);
      if (al.terminal != TerminalKind::kNone && pos > al.terminal_index) break;
      model::Word prefix(q.begin(), q.begin() + static_cast<std::ptrdiff_t>(k + 1));
      std::size_t next;
      if (pos == al.terminal_index) {
        next = state_for({{}, collapse(al.terminal)}, {}, prefix);
      } else if (const auto* snap = run.post_state(k)) {
        auto k2 = key_of(*snap->payload, map, image);
        next = state_for(k2, image, prefix);
      } else {
        res.complete = false;
        res.last = find(cur);
        res.last_index = k;
        return res;
      }
      define(cur, q[k], out[k], next);
      cur = find(next);
    }
    res.last = cur;
    return res;
  }

  // Remembers a run whose last input left no post-state so it is not re-executed.
  void ingest_recording(const monitor::MonitoredRun& run) {
    auto res = ingest(run);
    const auto& q = run.result.query;
    if (!res.complete && res.last_index + 1 == q.size())
      pending[q] = {res.last, run.result.outputs.back()};
  }

  monitor::MonitorOptions next_options() {
    auto opts = mon;
    opts.seed = rng();
    return opts;
  }

  void count_query(const model::Word& q) {
    ++stats.io_mem_queries;
    stats.symbols += q.size();
    if (!executed.insert(q).second && stats.bootstrap_queries) ++stats.repeated_queries;
  }

  // Executes q and folds every observation into the hypothesis.
  void execute(const model::Word& q) {
    if (out_of_budget()) return;
    std::size_t last;
    std::string last_out;
    if (auto it = pending.find(q); it != pending.end()) {
      // Already run as a silent-tail probe; only the tail still needs resolving.
      std::tie(last, last_out) = it->second;
      pending.erase(it);
    } else {
      auto run = monitor::run_monitored(spec, q, next_options());
      count_query(q);
      auto res = ingest(run);
      if (res.complete) return;
      last = res.last;
      last_out = run.result.outputs.back();
    }
    auto opts = next_options();
    auto probe = monitor::probe_silent_tail(spec, q, opts);
    for (const auto& r : probe.runs) {
      count_query(r.result.query);
      ingest_recording(r);
    }
    if (probe.exploration_closed) {
      auto t = state_for({{}, TerminalKind::kShutdownRead}, {}, q);
      define(last, q.back(), last_out, t);
    }
  }

  // Defined transition, or the implicit loop of a terminal state.
  std::optional<std::pair<std::string, std::size_t>> step(std::size_t s, const std::string& i,
                                                          bool probe) {
    s = find(s);
    if (is_terminal(s)) return std::make_pair(terminal_output(states[s].key.terminal), s);
    auto it = states[s].delta.find(i);
    if (it == states[s].delta.end() && probe) {
      auto q = states[s].access;
      q.push_back(i);
      execute(q);
      s = find(s);
      it = states[s].delta.find(i);
    }
    if (it == states[s].delta.end()) return std::nullopt;
    return std::make_pair(it->second.first, find(it->second.second));
  }

  bool io_equivalent(std::size_t a, std::size_t b, unsigned depth) {
    std::set<std::pair<std::size_t, std::size_t>> frontier{{a, b}};
    for (unsigned d = 0; d < depth && !frontier.empty(); ++d) {
      std::set<std::pair<std::size_t, std::size_t>> next;
      for (auto [x, y] : frontier) {
        for (const auto& i : inputs) {
          auto tx = step(x, i, true);
          auto ty = step(y, i, true);
          if (!tx || !ty || tx->first != ty->first) return false;
          if (tx->second != ty->second) next.insert({tx->second, ty->second});
        }
      }
      frontier = std::move(next);
    }
    return true;
  }

  std::set<std::size_t> within(std::size_t s, unsigned depth) {
    std::set<std::size_t> seen;
    std::vector<std::size_t> frontier{find(s)};
    for (unsigned d = 0; d < depth; ++d) {
      std::vector<std::size_t> next;
      for (auto x : frontier)
        for (const auto& [i, tr] : states[x].delta) {
          auto t = find(tr.second);
          if (seen.insert(t).second) next.push_back(t);
        }
      frontier = std::move(next);
    }
    return seen;
  }

  void recompute_reachability() {
    std::vector<bool> reached(states.size(), false);
    std::deque<std::size_t> work{find(*initial)};
    reached[find(*initial)] = true;
    states[find(*initial)].access.clear();
    while (!work.empty()) {
      auto s = work.front();
      work.pop_front();
      for (const auto& i : inputs) {
        auto it = states[s].delta.find(i);
        if (it == states[s].delta.end()) continue;
        auto t = find(it->second.second);
        if (reached[t]) continue;
        reached[t] = true;
        states[t].access = states[s].access;
        states[t].access.push_back(i);
        work.push_back(t);
      }
    }
    for (std::size_t s = 0; s < states.size(); ++s)
      if (find(s) == s) states[s].alive = reached[s];
  }

  std::string label(std::size_t s) { return "q" + std::to_string(find(s)); }

  void merge(std::size_t base, std::size_t m) {
    parent[m] = base;
    states[m].alive = false;
    recompute_reachability();
    for (std::size_t s = 0; s < states.size(); ++s)
      if (find(s) == s && states[s].alive) enqueue_completions(s);
  }

  bool check(std::size_t b, std::size_t m) {
    ++stats.merge_checks;
    auto pair_key = std::make_pair(states[b].key, states[m].key);
    auto differing = differing_locations(cands, states[b].image, states[m].image);
    MergeRecord rec{label(b), label(m), states[b].access, states[m].access, false, {}, {}};

    for (const auto& loc : differing) {
      auto it = confirmed.find(loc);
      if (it == confirmed.end()) continue;
      rec.reason = "differing location already state-defining";
      rec.verdicts.push_back(it->second);
      merges.push_back(std::move(rec));
      kept.insert(pair_key);
      return false;
    }
    if (!io_equivalent(b, m, cfg.D)) {
      if (!out_of_budget()) kept.insert(pair_key);
      return false;
    }
    if (out_of_budget()) return false;
    b = find(b);
    m = find(m);
    if (b == m) return false;

    std::set<std::string> skip;
    for (const auto& i : inputs) {
      auto t = step(m, i, false);
      if (t && std::find(spec.disabled_outputs.begin(), spec.disabled_outputs.end(),
                         t->first) != spec.disabled_outputs.end())
        skip.insert(i);
    }
    auto analysis = analyse_locations(spec, cands, states[m].access, differing, skip, cfg.W,
                                      next_options(), true);
    stats.watchpoint_queries += analysis.watch_queries;
    stats.watchpoint_hits += analysis.hits;
    retype(analysis.typed);
    m = find(m);
    b = find(b);
    if (b == m) return true;
    rec.verdicts = analysis.verdicts;
    if (analysis.state_defining) {
      const auto& sd = *analysis.state_defining;
      if (sd.verdict.kind == dataflow::VerdictKind::kStateDefining)
        confirmed.emplace(sd.location, sd);
      rec.reason = analysis.diagnostic.empty() ? std::string(dataflow::to_string(sd.verdict.kind))
                                               : analysis.diagnostic;
      merges.push_back(std::move(rec));
      kept.insert(pair_key);
      return false;
    }
    rec.merged = true;
    rec.reason = "all differing locations not state-defining";
    merges.push_back(std::move(rec));
    ++stats.merges;
    merge(b, m);
    return true;
  }

  std::vector<std::pair<std::size_t, std::size_t>> eligible_pairs() {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t b = 0; b < states.size(); ++b) {
      if (find(b) != b || !states[b].alive || is_terminal(b)) continue;
      for (auto m : within(b, cfg.D)) {
        if (m == b || !states[m].alive || is_terminal(m)) continue;
        if (kept.count({states[b].key, states[m].key})) continue;
        pairs.push_back({b, m});
      }
    }
    std::sort(pairs.begin(), pairs.end(), [&](auto x, auto y) {
      auto kx = std::make_tuple(states[x.first].access.size(), states[x.second].access.size(),
                                states[x.first].access, states[x.second].access);
      auto ky = std::make_tuple(states[y.first].access.size(), states[y.second].access.size(),
                                states[y.first].access, states[y.second].access);
      return kx < ky;
    });
    return pairs;
  }

  bool merge_phase() {
    bool any = false;
    for (;;) {
      bool merged = false;
      for (auto [b, m] : eligible_pairs()) {
        if (out_of_budget()) return any;
        if (find(b) != b || find(m) != m || !states[b].alive || !states[m].alive) continue;
        if (check(b, m)) {
          merged = any = true;
          break;
        }
      }
      if (!merged) return any;
    }
  }

  void bootstrap() {
    auto plan = memdiff::gen_bootstrap(spec, cfg.T);
    {
      auto opts = next_options();
      auto run = monitor::run_monitored(spec, spec.happy_flow, opts);
      count_query(spec.happy_flow);
      mon.patterns = monitor::infer_io_patterns(run.events, run.result);
    }
    std::vector<monitor::MonitoredRun> runs;
    for (const auto& q : plan.queries) {
      for (unsigned r = 0; r < plan.repeats; ++r) {
        auto opts = next_options();
        opts.nonce = static_cast<std::uint8_t>(harness::kDefaultNonce + 0x3b * r);
        opts.trace = true;
        runs.push_back(monitor::run_monitored(spec, q, opts));
        count_query(q);
      }
    }
    stats.bootstrap_queries = stats.io_mem_queries;

    AllocationLog base;
    for (std::size_t i = 0; i < plan.repeats && i < runs.size(); ++i)
      if (allocations_of(runs[i].alloc_log).size() >= allocations_of(base).size())
        base = runs[i].alloc_log;

    std::map<std::string, std::vector<memdiff::MemoryImage>> groups;
    std::vector<memdiff::ProjectedSnapshot> projected;
    std::vector<memdiff::TypedAccess> accesses;
    for (const auto& run : runs) {
      auto map = memdiff::align_allocations(run.alloc_log, base);
      auto add = [&](const monitor::Snapshot* s, const std::string& group) {
        if (!s) return;
        auto image = memdiff::project(*s->payload, map, base);
        projected.push_back({image, memdiff::address_space(*s->payload)});
        groups[group].push_back(std::move(image));
      };
      add(run.initial_state(), "");
      std::string group;
      for (std::size_t k = 0; k < run.result.query.size(); ++k) {
        group += run.result.query[k] + "/" + run.result.outputs[k] + " ";
        add(run.post_state(k), group);
      }
      auto typed = typed_from_log(run.accesses, run.alloc_log, base);
      accesses.insert(accesses.end(), typed.begin(), typed.end());
    }
    std::erase_if(groups, [](const auto& g) { return g.second.size() < 2; });
    auto diffed = memdiff::diff_snapshots(groups, base);
    auto minimized = memdiff::minimize(diffed, projected);
    type_log = std::move(accesses);
    cands = memdiff::infer_types(type_log, minimized);

    for (const auto& run : runs) ingest_recording(run);
  }

  // Re-keys every observed image after candidate types change. States whose
  // keys collide are merged.
  void retype(const std::vector<memdiff::TypedAccess>& typed) {
    if (typed.empty()) return;
    type_log.insert(type_log.end(), typed.begin(), typed.end());
    auto next = memdiff::infer_types(type_log, cands);
    if (next.locations == cands.locations) return;
    cands = std::move(next);
    ++stats.rekeys;
    std::map<StateKey, std::size_t> rekeyed;
    for (const auto& [key, id] : index)
      if (key.terminal != TerminalKind::kNone) rekeyed.emplace(key, find(id));
    for (const auto& [image, id] : observed) {
      StateKey key{cands.project(image), TerminalKind::kNone};
      auto s = find(id);
      auto [it, fresh] = rekeyed.emplace(key, s);
      auto t = find(it->second);
      if (!fresh && t != s) {
        for (auto& [i, tr] : states[s].delta) states[t].delta.emplace(i, tr);
        parent[s] = t;
        ++stats.merges;
      }
    }
    for (auto& [key, id] : rekeyed) {
      id = find(id);
      if (key.terminal == TerminalKind::kNone) states[id].key = {cands.project(states[id].image),
                                                                 TerminalKind::kNone};
    }
    index = std::move(rekeyed);
    kept.clear();
    recompute_reachability();
  }

  void finish(LearnReport& report) {
    recompute_reachability();
    model::MealyMachine m(inputs);
    std::map<std::size_t, std::size_t> ids;
    std::deque<std::size_t> work{find(*initial)};
    names.clear();
    auto add = [&](std::size_t s) {
      auto id = m.add_state("s" + std::to_string(ids.size()), is_terminal(s));
      ids[s] = id;
      names[s] = m.states()[id].id;
      report.access[names[s]] = states[s].access;
      return id;
    };
    add(find(*initial));
    while (!work.empty()) {
      auto s = work.front();
      work.pop_front();
      for (const auto& i : inputs) {
        auto t = step(s, i, false);
        if (!t) continue;
        if (!ids.count(t->second)) {
          add(t->second);
          work.push_back(t->second);
        }
        m.set_transition(ids[s], i, t->first, ids[t->second]);
      }
    }
    m.set_initial(ids[find(*initial)]);
    report.model = std::move(m);
  }

  LearnReport learn() {
    start = Clock::now();
    bootstrap();
    while (!out_of_budget()) {
      if (queue.empty()) {
        bool merged = merge_phase();
        if (!merged && queue.empty()) break;
        continue;
      }
      auto length = queue.begin()->first;
      while (!queue.empty() && queue.begin()->first <= length && !out_of_budget()) {
        auto [s, i] = queue.begin()->second.front();
        queue.begin()->second.pop_front();
        if (queue.begin()->second.empty()) queue.erase(queue.begin());
        s = find(s);
        if (!states[s].alive || is_terminal(s) || states[s].delta.count(i)) continue;
        auto q = states[s].access;
        q.push_back(i);
        if (q.size() > length) {
          queue[q.size()].push_back({s, i});
          continue;
        }
        execute(q);
      }
      if (!out_of_budget()) merge_phase();
    }

    LearnReport report;
    report.mode = "greybox";
    report.protocol = spec.name;
    report.params = spec.params;
    report.exit = timed_out ? ExitKind::kTimeBound
                            : capped ? ExitKind::kQueryCap : ExitKind::kConverged;
    finish(report);
    stats.io_states = report.model.size();
    stats.memory_states = seen_keys.size();
    stats.classifying_locations = cands.locations.size();
    stats.classifying_allocations = cands.allocations().size();
    stats.total_queries = stats.io_mem_queries + stats.watchpoint_queries;
    stats.total_time = std::chrono::duration<double>(Clock::now() - start).count();
    report.stats = stats;
    report.candidates = cands;
    report.merges = merges;
    report.config = {{"T", cfg.T},
                     {"D", cfg.D},
                     {"W", cfg.W},
                     {"timeBound", cfg.time_bound},
                     {"seed", static_cast<double>(cfg.seed)},
                     {"queryCap", static_cast<double>(cfg.query_cap)}};
    return report;
  }
};

GreyBoxLearner::GreyBoxLearner(protocols::ProtocolSpec spec, LearnConfig cfg)
    : impl_(std::make_unique<Impl>(std::move(spec), cfg)) {}

GreyBoxLearner::~GreyBoxLearner() = default;

LearnReport GreyBoxLearner::learn() { return impl_->learn(); }

const memdiff::CandidateSet& GreyBoxLearner::candidates() const { return impl_->cands; }

std::optional<std::string> GreyBoxLearner::resolve(const model::Word& q) {
  auto& im = *impl_;
  auto run = monitor::run_monitored(im.spec, q, im.next_options());
  StateKey key;
  auto last = q.size() - 1;
  if (run.alignment.terminal != TerminalKind::kNone &&
      run.alignment.terminal_index <= static_cast<int>(last)) {
    key = {{}, collapse(run.alignment.terminal)};
  } else if (const auto* snap = run.post_state(last)) {
    auto map = memdiff::align_allocations(run.alloc_log, im.cands.base_log);
    memdiff::MemoryImage image;
    key = im.key_of(*snap->payload, map, image);
  } else {
    auto probe = monitor::probe_silent_tail(im.spec, q, im.next_options());
    if (!probe.post_state) {
      key = {{}, TerminalKind::kShutdownRead};
    } else {
      const auto& r = probe.runs[*probe.run_index];
      auto map = memdiff::align_allocations(r.alloc_log, im.cands.base_log);
      memdiff::MemoryImage image;
      key = im.key_of(*probe.post_state->payload, map, image);
    }
  }
  auto it = im.index.find(key);
  if (it == im.index.end()) return std::nullopt;
  auto s = im.find(it->second);
  auto n = im.names.find(s);
  if (n == im.names.end()) return std::nullopt;
  return n->second;
}

LearnReport learn(const protocols::ProtocolSpec& spec, const LearnConfig& cfg) {
  return GreyBoxLearner(spec, cfg).learn();
}

Explanation explain(const protocols::ProtocolSpec& spec, const LearnReport& report,
                    const std::string& state_a, const std::string& state_b, unsigned W) {
  auto ia = report.access.find(state_a);
  auto ib = report.access.find(state_b);
  if (ia == report.access.end()) throw std::invalid_argument("unknown state id " + state_a);
  if (ib == report.access.end()) throw std::invalid_argument("unknown state id " + state_b);
  const auto& cands = report.candidates;
  auto image_of = [&](const model::Word& access) -> memdiff::MemoryImage {
    monitor::MonitorOptions opts;
    if (access.empty()) {
      auto run = monitor::run_monitored(spec, {spec.input_names().front()}, opts);
      auto map = memdiff::align_allocations(run.alloc_log, cands.base_log);
      return memdiff::project(*run.initial_state()->payload, map, cands.base_log);
    }
    auto run = monitor::run_monitored(spec, access, opts);
    const monitor::Snapshot* s = run.post_state(access.size() - 1);
    std::optional<monitor::SilentTailResult> probe;
    const AllocationLog* log = &run.alloc_log;
    if (!s) {
      probe = monitor::probe_silent_tail(spec, access, opts);
      if (!probe->post_state) return {};
      s = &*probe->post_state;
      log = &probe->runs[*probe->run_index].alloc_log;
    }
    auto map = memdiff::align_allocations(*log, cands.base_log);
    return memdiff::project(*s->payload, map, cands.base_log);
  };
  Explanation ex;
  ex.state_a = state_a;
  ex.state_b = state_b;
  ex.differing = differing_locations(cands, image_of(ia->second), image_of(ib->second));
  auto analysis = analyse_locations(spec, cands, ib->second, ex.differing, {}, W, {}, false);
  ex.verdicts = std::move(analysis.verdicts);
  if (!analysis.unmapped.empty()) {
    // Locations absent after b's access word are probed from a instead.
    auto from_a = analyse_locations(spec, cands, ia->second, analysis.unmapped, {}, W, {}, false);
    std::erase_if(ex.verdicts, [&](const LocationVerdict& v) {
      return std::find(analysis.unmapped.begin(), analysis.unmapped.end(), v.location) !=
             analysis.unmapped.end();
    });
    ex.verdicts.insert(ex.verdicts.end(), from_a.verdicts.begin(), from_a.verdicts.end());
  }
  return ex;
}

}  // namespace statelens::learner
