#include <benchmark/benchmark.h>

#include "gfm/distill.hpp"
#include "gfm/metrics.hpp"
#include "gfm/mim.hpp"
#include "gfm/trainer.hpp"

using namespace gfm;

namespace {

Tensor<float> random_images(std::size_t b, int side, Rng& rng) {
  Tensor<float> t({b, static_cast<std::size_t>(side), static_cast<std::size_t>(side), 3});
  for (auto& v : t.data) v = static_cast<float>(rng.uniform());
  return t;
}

void BM_EncoderForward(benchmark::State& state) {
  const auto cfg = EncoderConfig::tiny();
  const Encoder<float> enc(cfg, 0);
  Rng rng(1);
  const auto x = random_images(static_cast<std::size_t>(state.range(0)), cfg.image_size, rng);
  for (auto _ : state) benchmark::DoNotOptimize(enc.forward(ag::make_var(x)).stages.back()->value.data[0]);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncoderForward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_EncoderForwardBackward(benchmark::State& state) {
  const auto cfg = EncoderConfig::tiny();
  Encoder<float> enc(cfg, 0);
  const ReconstructionHead<float> head(cfg.dims.back(), cfg.image_size / cfg.stage_sides().back(), 3, 1);
  Rng rng(2);
  const auto x = random_images(static_cast<std::size_t>(state.range(0)), cfg.image_size, rng);
  const auto mask = sample_mask_batch(x.dim(0), static_cast<std::size_t>(cfg.mask_grid_side()), 0.6, rng);
  for (auto _ : state) {
    const auto pyr = enc.forward(ag::make_var(x), &mask);
    ag::backward(mim_loss(x, head.forward(pyr.final_normed), mask, static_cast<std::size_t>(cfg.mask_patch_size)));
    enc.params().zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncoderForwardBackward)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_PretrainStepMimOnly(benchmark::State& state) {
  TrainConfig cfg;
  cfg.encoder = EncoderConfig::tiny();
  cfg.objective = Objective::mim_only;
  cfg.batch_size = 8;
  auto s = make_pretrain_state(cfg, 1000);
  Rng rng(3);
  const BranchBatch batch{random_images(8, cfg.encoder.image_size, rng), std::nullopt};
  for (auto _ : state) benchmark::DoNotOptimize(pretrain_step(s, batch).total);
}
BENCHMARK(BM_PretrainStepMimOnly)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  std::vector<double> a(side * side * 3), b(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.uniform();
    b[i] = rng.uniform();
  }
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b, side, side, 3));
}
BENCHMARK(BM_Ssim)->Arg(64)->Arg(128);

void BM_MeanIou(benchmark::State& state) {
  Rng rng(5);
  std::vector<int> p(256 * 256), t(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = static_cast<int>(rng.below(5));
    t[i] = static_cast<int>(rng.below(5));
  }
  for (auto _ : state) benchmark::DoNotOptimize(mean_iou(p, t, 5));
}
BENCHMARK(BM_MeanIou);

}  // namespace

BENCHMARK_MAIN();
