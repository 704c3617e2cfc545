#include <algorithm>
#include <chrono>
#include <random>

#include "statelens/blackbox.hpp"
#include "statelens/harness.hpp"

namespace statelens::blackbox {

namespace {

bool ends_session(const std::string& o) { return o == model::kClosed || o == model::kFault; }

using Clock = std::chrono::steady_clock;

class TimeBoundReached : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace

std::optional<model::Word> QueryCache::lookup(const model::Word& w) const {
  auto it = cache_.lower_bound(w);
  if (it != cache_.end() && it->first.size() >= w.size() &&
      std::equal(w.begin(), w.end(), it->first.begin()))
    return model::Word(it->second.begin(), it->second.begin() + static_cast<long>(w.size()));
  // A cached prefix that ended the session determines the rest.
  for (std::size_t k = 1; k < w.size(); ++k) {
    model::Word prefix(w.begin(), w.begin() + static_cast<long>(k));
    auto p = cache_.lower_bound(prefix);
    if (p == cache_.end() || p->first.size() < k ||
        !std::equal(prefix.begin(), prefix.end(), p->first.begin()))
      return std::nullopt;
    if (ends_session(p->second[k - 1])) {
      model::Word out(p->second.begin(), p->second.begin() + static_cast<long>(k));
      out.resize(w.size(), model::kClosed);
      return out;
    }
  }
  return std::nullopt;
}

void QueryCache::insert(const model::Word& w, const model::Word& out) { cache_[w] = out; }

model::Word QueryCache::query(const model::Word& w) {
  if (auto hit = lookup(w)) return *hit;
  auto out = backend_(w);
  ++executed_;
  symbols_ += w.size();
  insert(w, out);
  return out;
}

namespace {

class ObservationTable {
 public:
  ObservationTable(std::vector<std::string> inputs, QueryCache& cache,
                   std::function<void()> check)
      : inputs_(std::move(inputs)), cache_(cache), check_(std::move(check)) {
    S_.push_back({});
    for (const auto& i : inputs_) E_.push_back({i});
  }

  model::Word row(const model::Word& u) {
    model::Word r;
    for (const auto& e : E_) {
      auto w = u;
      w.insert(w.end(), e.begin(), e.end());
      check_();
      auto out = cache_.query(w);
      for (std::size_t k = u.size(); k < out.size(); ++k) r.push_back(out[k]);
      r.push_back("|");
    }
    return r;
  }

  // Extends S until every one-step extension matches a row of S.
  void close() {
    for (bool changed = true; changed;) {
      changed = false;
      rows_.clear();
      for (const auto& s : S_) rows_.push_back(row(s));
      for (std::size_t si = 0; si < S_.size() && !changed; ++si) {
        for (const auto& i : inputs_) {
          auto u = S_[si];
          u.push_back(i);
          auto r = row(u);
          if (std::find(rows_.begin(), rows_.end(), r) == rows_.end()) {
            S_.push_back(u);
            changed = true;
            break;
          }
        }
      }
    }
  }

  model::MealyMachine hypothesis() {
    model::MealyMachine m(inputs_);
    for (std::size_t s = 0; s < S_.size(); ++s) m.add_state("s" + std::to_string(s));
    for (std::size_t s = 0; s < S_.size(); ++s) {
      for (const auto& i : inputs_) {
        auto u = S_[s];
        u.push_back(i);
        auto r = row(u);
        auto t = static_cast<std::size_t>(std::find(rows_.begin(), rows_.end(), r) -
                                          rows_.begin());
        m.set_transition(s, i, cache_.query(u).back(), t);
      }
    }
    m.set_initial(0);
    return m;
  }

  void add_suffixes(const model::Word& cex) {
    for (std::size_t k = 0; k < cex.size(); ++k) {
      model::Word suffix(cex.begin() + static_cast<long>(k), cex.end());
      if (std::find(E_.begin(), E_.end(), suffix) == E_.end()) E_.push_back(suffix);
    }
  }

  const std::vector<model::Word>& S() const { return S_; }
  const std::vector<model::Word>& E() const { return E_; }

 private:
  std::vector<std::string> inputs_;
  QueryCache& cache_;
  std::function<void()> check_;
  std::vector<model::Word> S_;
  std::vector<model::Word> E_;
  std::vector<model::Word> rows_;
};

// Words of length 0..k over `inputs`, shortest first.
std::vector<model::Word> middles(const std::vector<std::string>& inputs, unsigned k) {
  std::vector<model::Word> out{{}};
  std::size_t from = 0;
  for (unsigned len = 1; len <= k; ++len) {
    std::size_t to = out.size();
    for (std::size_t j = from; j < to; ++j)
      for (const auto& i : inputs) {
        auto w = out[j];
        w.push_back(i);
        out.push_back(std::move(w));
      }
    from = to;
  }
  return out;
}

std::optional<model::Word> w_method(const model::MealyMachine& h, ObservationTable& table,
                                    QueryCache& cache, const std::vector<std::string>& inputs,
                                    unsigned k, const std::function<void()>& check) {
  std::vector<model::Word> cover;
  for (const auto& s : table.S()) {
    cover.push_back(s);
    for (const auto& i : inputs) {
      auto u = s;
      u.push_back(i);
      cover.push_back(u);
    }
  }
  auto mids = middles(inputs, k);
  for (const auto& p : cover) {
    for (const auto& mid : mids) {
      for (const auto& e : table.E()) {
        auto w = p;
        w.insert(w.end(), mid.begin(), mid.end());
        w.insert(w.end(), e.begin(), e.end());
        check();
        auto actual = cache.query(w);
        auto predicted = h.run(w);
        if (actual != predicted) {
          for (std::size_t n = 1; n <= w.size(); ++n)
            if (actual[n - 1] != predicted[n - 1])
              return model::Word(w.begin(), w.begin() + static_cast<long>(n));
        }
      }
    }
  }
  return std::nullopt;
}

}  // namespace

LearnReport learn_bb(const std::vector<std::string>& inputs, QueryCache& cache,
                     const BlackBoxConfig& cfg) {
  auto start = Clock::now();
  auto check = [&] {
    if (cfg.query_cap && cache.executed() >= cfg.query_cap)
      throw QueryCapReached("query cap reached");
    if (std::chrono::duration<double>(Clock::now() - start).count() > cfg.time_bound)
      throw TimeBoundReached("time bound reached");
  };
  LearnReport report;
  report.mode = "blackbox";
  report.model = model::MealyMachine(inputs);
  report.model.add_state("s0");
  ObservationTable table(inputs, cache, check);
  try {
    for (;;) {
      table.close();
      report.model = table.hypothesis();
      auto cex = w_method(report.model, table, cache, inputs, cfg.depth_bound, check);
      if (!cex) break;
      table.add_suffixes(*cex);
    }
  } catch (const QueryCapReached&) {
    report.exit = ExitKind::kQueryCap;
  } catch (const TimeBoundReached&) {
    report.exit = ExitKind::kTimeBound;
  }
  auto access = report.model.access_words();
  for (const auto& [s, w] : access) report.access[report.model.states()[s].id] = w;
  auto& st = report.stats;
  st.io_states = report.model.size();
  st.total_queries = st.io_mem_queries = cache.executed();
  st.symbols = cache.symbols();
  st.total_time = std::chrono::duration<double>(Clock::now() - start).count();
  report.config = {{"depthBound", cfg.depth_bound},
                   {"queryCap", static_cast<double>(cfg.query_cap)},
                   {"timeBound", cfg.time_bound},
                   {"seed", static_cast<double>(cfg.seed)}};
  return report;
}

LearnReport learn_bb(const protocols::ProtocolSpec& spec, const BlackBoxConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  QueryCache cache([&](const model::Word& w) {
    return harness::execute_query(spec, w, rng()).outputs;
  });
  auto report = learn_bb(spec.input_names(), cache, cfg);
  report.protocol = spec.name;
  report.params = spec.params;
  return report;
}

}  // namespace statelens::blackbox
