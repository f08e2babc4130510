#include <benchmark/benchmark.h>

#include "ctn/autograd.hpp"
#include "ctn/encoder.hpp"
#include "ctn/ops.hpp"
#include "ctn/parameters.hpp"
#include "ctn/pretrain.hpp"
#include "ctn/synth.hpp"
#include "ctn/token_space.hpp"
#include "ctn/tokenizer.hpp"

namespace ctn {
namespace {

void BM_Matmul(benchmark::State& state) {
  const auto n = state.range(0);
  SeededRng rng(1);
  const auto a = normal_init({n, n}, 1.0, rng);
  const auto b = normal_init({n, n}, 1.0, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_Conv1d(benchmark::State& state) {
  SeededRng rng(2);
  const auto x = normal_init({32, 64, 20}, 1.0, rng);
  const auto k = normal_init({64, 64, 3}, 0.1, rng);
  const auto bias = Tensor::zeros({64});
  for (auto _ : state) benchmark::DoNotOptimize(conv1d(x, k, bias, state.range(0), Padding::same));
}
BENCHMARK(BM_Conv1d)->Arg(1)->Arg(4);

void BM_NearestCode(benchmark::State& state) {
  SeededRng rng(3);
  const auto codebook = normal_init({state.range(0), 64}, 1.0, rng);
  const auto z = normal_init({64}, 1.0, rng);
  const auto zs = z.values<float>();
  for (auto _ : state) benchmark::DoNotOptimize(nearest_code(zs, codebook));
}
BENCHMARK(BM_NearestCode)->Arg(128)->Arg(512);

void BM_MaskPlan(benchmark::State& state) {
  SeededRng rng(4);
  for (auto _ : state) benchmark::DoNotOptimize(mask_plan(64, 0.45, rng));
}
BENCHMARK(BM_MaskPlan);

void BM_Tokenize(benchmark::State& state) {
  const auto corpus = synth_corpus(default_synth_spec(4, 1), 5);
  const auto tok = Tokenizer::initialize(*corpus[0].meta, TokenizerConfig{});
  for (auto _ : state) benchmark::DoNotOptimize(tok.tokenize(corpus[0].train[0]));
}
BENCHMARK(BM_Tokenize);

struct EncoderFixture {
  GlobalTokenSpace space;
  EncoderCheckpoint model;
  std::vector<std::vector<std::int64_t>> batch;

  explicit EncoderFixture(std::int64_t length) {
    space = build_token_space(std::vector<std::pair<std::string, std::int64_t>>{{"a", 512}, {"b", 512}, {"c", 512}});
    model = EncoderCheckpoint::initialize(EncoderConfig{}, space, word_map(space, space.total_size(), 1), 1);
    SeededRng rng(6);
    batch.assign(32, std::vector<std::int64_t>(static_cast<std::size_t>(length)));
    for (auto& s : batch)
      for (auto& t : s) t = static_cast<std::int64_t>(rng.below(1536));
  }
};

void BM_EncoderForward(benchmark::State& state) {
  const EncoderFixture f(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(encoder_forward(f.model, f.batch));
}
BENCHMARK(BM_EncoderForward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_MtpTrainingStep(benchmark::State& state) {
  EncoderFixture f(state.range(0));
  for (auto& t : f.model.params.tensors()) t.set_requires_grad(true);
  SeededRng rng(7);
  std::vector<std::int64_t> rows, targets;
  auto inputs = f.batch;
  const auto seq = state.range(0) + 1;
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    const auto plan = mask_plan(state.range(0), 0.45, rng);
    for (auto p : plan.positions) {
      rows.push_back(static_cast<std::int64_t>(b) * seq + p + 1);
      targets.push_back(inputs[b][static_cast<std::size_t>(p)]);
    }
    inputs[b] = corrupt(inputs[b], plan, f.space.mask_id());
  }
  for (auto _ : state) {
    Record record;
    RecordScope scope(record);
    ForwardOptions opts;
    opts.training = true;
    opts.rng = &rng;
    const auto loss = mtp_loss(mtp_logits(f.model, encoder_forward(f.model, inputs, opts), rows), targets);
    record.backward(loss);
    benchmark::DoNotOptimize(loss);
  }
}
BENCHMARK(BM_MtpTrainingStep)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace ctn

BENCHMARK_MAIN();
