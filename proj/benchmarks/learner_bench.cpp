#include <benchmark/benchmark.h>

#include "statelens/blackbox.hpp"
#include "statelens/learner.hpp"

using namespace statelens;

namespace {

void BM_ExecuteQuery(benchmark::State& state) {
  auto spec = protocols::load_spec("backdoor", {{"N", 12}});
  model::Word w(12, "init");
  w.push_back("data");
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(harness::execute_query(spec, w, ++seed));
}
BENCHMARK(BM_ExecuteQuery);

void BM_MonitoredRun(benchmark::State& state) {
  auto spec = protocols::load_spec("early-keys");
  monitor::MonitorOptions opts;
  opts.trace = state.range(0) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(monitor::run_monitored(spec, spec.happy_flow, opts));
}
BENCHMARK(BM_MonitoredRun)->Arg(0)->Arg(1);

void BM_GreyBoxBackdoor(benchmark::State& state) {
  auto spec = protocols::load_spec("backdoor", {{"N", static_cast<int>(state.range(0))}});
  std::size_t queries = 0;
  for (auto _ : state) queries = learner::learn(spec).stats.total_queries;
  state.counters["queries"] = static_cast<double>(queries);
}
BENCHMARK(BM_GreyBoxBackdoor)->Arg(3)->Arg(6)->Arg(12)->Unit(benchmark::kMillisecond);

void BM_GreyBoxHandshake(benchmark::State& state) {
  auto spec = protocols::load_spec("handshake-bypass",
                                   {{"READ_SEQ_LIMIT", static_cast<int>(state.range(0))}});
  std::size_t queries = 0;
  for (auto _ : state) queries = learner::learn(spec).stats.total_queries;
  state.counters["queries"] = static_cast<double>(queries);
}
BENCHMARK(BM_GreyBoxHandshake)->Arg(5)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_BlackBox(benchmark::State& state) {
  auto spec = protocols::load_spec("partial-shutdown");
  std::size_t queries = 0;
  for (auto _ : state) queries = blackbox::learn_bb(spec).stats.total_queries;
  state.counters["queries"] = static_cast<double>(queries);
}
BENCHMARK(BM_BlackBox)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
