#include <benchmark/benchmark.h>

#include "ebmprop/trainer.hpp"

using namespace ebmprop;

namespace {

Dataset bench_data() { return gen_dataset("bimodal-split", 256, 1); }

void TrainingIteration(benchmark::State& state) {
  const int M = static_cast<int>(state.range(0));
  Dataset data = bench_data();
  EnergyNet ebm(EnergyNetConfig::standard(1, 1, 10, 10, Activation::kRelu, 3));
  MdnHead head({10, 10, 4, 1, Activation::kRelu, 4, kSigmaFloor});
  std::vector<ParamTensor*> params = ebm.params();
  for (auto* p : head.params()) params.push_back(p);
  Adam adam({1e-3}, params);
  Rng rng(5);
  Tensor x = Tensor::matrix(32, 1), y = Tensor::matrix(32, 1);
  for (int i = 0; i < 32; ++i) {
    x[i] = data.x[static_cast<size_t>(i)];
    y[i] = data.y[static_cast<size_t>(i)];
  }
  for (auto _ : state) {
    Tape tape;
    JointParts parts = assemble_joint_batch(tape, ebm, head, x, y, M, rng);
    Var total = tape.add(loss_nce(tape, parts.batch), loss_kl(tape, parts.batch));
    tape.backward(total);
    std::vector<Tensor> grads = ebm.collect_grads(parts.energy_bound);
    for (auto& g : head.collect_grads(parts.head_bound)) grads.push_back(std::move(g));
    adam.step(grads);
    benchmark::DoNotOptimize(total.value()[0]);
  }
  state.SetItemsProcessed(state.iterations() * 32 * (M + 1));
}
BENCHMARK(TrainingIteration)->Arg(64)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

void MixtureSampling(benchmark::State& state) {
  const int M = static_cast<int>(state.range(0));
  Tensor logits = Tensor::matrix(32, 4), means = Tensor::matrix(32, 4),
         logs2 = Tensor::matrix(32, 4);
  Rng init(7);
  for (int64_t i = 0; i < logits.numel(); ++i) {
    logits[i] = init.uniform(-1, 1);
    means[i] = init.uniform(-2, 2);
    logs2[i] = init.uniform(-1, 1);
  }
  MixtureParams params = mixture_params_from_raw(logits, means, logs2);
  Rng rng(8);
  for (auto _ : state) {
    MdnSamples draws = mdn_sample(params, M, rng);
    benchmark::DoNotOptimize(draws.log_q(0, 0));
  }
  state.SetItemsProcessed(state.iterations() * 32 * M);
}
BENCHMARK(MixtureSampling)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

void GridEvaluation(benchmark::State& state) {
  EnergyNet net(EnergyNetConfig::standard(1, 1, 10, 10, Activation::kRelu, 9));
  const EnergyRowFn row = energy_row_fn(net);
  Dataset data = bench_data();
  const EvalGrid grid{-4.5, 4.5, static_cast<int>(state.range(0))};
  for (auto _ : state) {
    benchmark::DoNotOptimize(eval_nll_grid(row, data, grid));
  }
}
BENCHMARK(GridEvaluation)->Arg(2048)->Arg(8192)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
