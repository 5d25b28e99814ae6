#include <benchmark/benchmark.h>

#include <vector>

#include "snigl/graph.hpp"
#include "snigl/model.hpp"
#include "snigl/training.hpp"

namespace {

using namespace snigl;

data::Dataset two_envs(std::size_t per_env) {
  return data::split_bias_levels({0.7, 0.9}, per_env, 30, 7).train;
}

training::StepInputs step_inputs(const data::Dataset& ds) {
  training::StepInputs in;
  std::vector<const data::Graph*> ptrs;
  for (const auto& env : ds.environments) {
    std::vector<std::size_t> rows;
    for (const auto& g : ds.graphs)
      if (g.env == env) {
        rows.push_back(ptrs.size());
        ptrs.push_back(&g);
      }
    in.envs.push_back(env);
    in.env_rows.push_back(rows);
    in.priors.push_back(data::empirical_label_dist(ds, env));
  }
  in.batch = model::GraphBatch::of(ptrs);
  return in;
}

void BM_EncodeBatch(benchmark::State& state) {
  const auto ds = two_envs(static_cast<std::size_t>(state.range(0)) / 2);
  std::vector<const data::Graph*> ptrs;
  for (const auto& g : ds.graphs) ptrs.push_back(&g);
  const auto batch = model::GraphBatch::of(ptrs);
  model::ModelConfig config;
  const auto params = model::ModelParams::init(config, ds.environments, 1);
  for (auto _ : state) {
    auto out = model::infer_invariant(params, batch, model::EvalMask::probability);
    benchmark::DoNotOptimize(out.probs.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncodeBatch)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_ObjectiveStep(benchmark::State& state) {
  const auto objective = static_cast<training::Objective>(state.range(0));
  const auto ds = two_envs(32);
  const auto in = step_inputs(ds);
  training::TrainConfig config;
  config.objective = objective;
  const auto params = model::ModelParams::init(config.model, in.envs, 3);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    ad::Tape tape;
    model::Bound p(tape, params);
    const auto out = training::objective(p, in, config, 1.0, seed++);
    tape.backward(out.loss);
    auto grads = p.gradients();
    benchmark::DoNotOptimize(grads);
  }
  state.SetLabel(training::to_string(objective));
}
BENCHMARK(BM_ObjectiveStep)
    ->Arg(static_cast<int>(training::Objective::full))
    ->Arg(static_cast<int>(training::Objective::no_pns))
    ->Arg(static_cast<int>(training::Objective::erm))
    ->Unit(benchmark::kMillisecond);

void BM_GenerateMotifGraphs(benchmark::State& state) {
  data::MotifSpec spec;
  spec.bias = 0.9;
  for (auto _ : state) {
    auto ds = data::generate_spurious_motif(static_cast<std::size_t>(state.range(0)), spec, 11);
    benchmark::DoNotOptimize(ds.graphs.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GenerateMotifGraphs)->Arg(1000)->Unit(benchmark::kMillisecond);

}  // namespace
