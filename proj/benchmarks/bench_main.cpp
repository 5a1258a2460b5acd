#include <benchmark/benchmark.h>

#include <numbers>

#include "esgn/detect.hpp"
#include "esgn/dgfd.hpp"
#include "esgn/egfg.hpp"

using namespace esgn;

namespace {

Tensor random_tensor(const Shape& dims, std::uint64_t seed) {
  Tensor t(dims);
  Lcg rng(seed);
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({c, 16, 32}, 1);
  const ConvKernel k = seeded_kernel(2, c, c, 3, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c * c * 9 * 16 * 32));
}
BENCHMARK(BM_Conv2d)->Arg(8)->Arg(24)->Arg(96);

void BM_Correlate(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const Tensor l = random_tensor({8, 16, 32}, 3), r = random_tensor({8, 16, 32}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(correlate(l, r, d));
}
BENCHMARK(BM_Correlate)->Arg(8)->Arg(24);

void BM_FrustumSample(benchmark::State& state) {
  const Tensor vol = random_tensor({8, 24, 16, 32}, 5);
  const CameraRig rig = CameraRig::ideal(120.0, 64.0, 32.0, 0.54);
  const VoxelGridSpec spec = VoxelGridSpec::stereo_default();
  for (auto _ : state) benchmark::DoNotOptimize(frustum_sample(vol, rig, spec, 4));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(spec.nx() * spec.ny() * spec.nz()));
}
BENCHMARK(BM_FrustumSample)->Unit(benchmark::kMillisecond);

void BM_RotatedIou(benchmark::State& state) {
  Lcg rng(6);
  std::vector<Box3D> boxes(256);
  for (Box3D& b : boxes) {
    b.x = rng.uniform(-2, 2);
    b.z = rng.uniform(8, 12);
    b.h = 1.5;
    b.w = rng.uniform(1, 2);
    b.l = rng.uniform(2, 5);
    b.yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
  }
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(iou_3d(boxes[i % 256], boxes[(i * 7 + 3) % 256]));
    ++i;
  }
}
BENCHMARK(BM_RotatedIou);

void BM_Voxelize(benchmark::State& state) {
  const VoxelGridSpec spec = VoxelGridSpec::lidar_default();
  Lcg rng(7);
  std::vector<LidarPoint> pts(static_cast<std::size_t>(state.range(0)));
  for (auto& p : pts) {
    p = {static_cast<float>(rng.uniform(-30, 30)), static_cast<float>(rng.uniform(-1, 3)),
         static_cast<float>(rng.uniform(2, 60)), static_cast<float>(rng.uniform())};
  }
  for (auto _ : state) benchmark::DoNotOptimize(voxelize(pts, spec));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Voxelize)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
