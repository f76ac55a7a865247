// Microbenchmarks for the hot paths: convolution, ECC alignment, slicing and
// layer rasterisation. Build with -DCMAKE_BUILD_TYPE=Release; numbers from
// debug builds are meaningless.

#include <benchmark/benchmark.h>

#include <vector>

#include "../tests/helpers.hpp"
#include "layermon/image.hpp"
#include "layermon/nn_layers.hpp"
#include "layermon/registration.hpp"
#include "layermon/rng.hpp"
#include "layermon/slicer.hpp"
#include "layermon/synth.hpp"

namespace {

using namespace layermon;

Tensor random_tensor(int n, int c, int h, int w, Rng& rng) {
  Tensor t(n, c, h, w);
  for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_conv2d_forward(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0));
  Rng rng(1);
  const Tensor x = random_tensor(1, channels, 64, 64, rng);
  const Tensor w = random_tensor(channels, channels, 3, 3, rng);
  const Tensor b = random_tensor(1, channels, 1, 1, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d_forward(x, w, b));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(channels) * channels *
                          64 * 64 * 9);
}
BENCHMARK(BM_conv2d_forward)->Arg(4)->Arg(8)->Arg(16);

void BM_ecc_align_euclidean(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const GrayImage base = testutil::value_noise_texture(size + 32, size + 32, 42);
  GrayImage templ(size, size);
  GrayImage target(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      templ.at(x, y) = base.at(x + 16, y + 16);
      target.at(x, y) = base.at(x + 19, y + 14);  // 3 px right, 2 px up
    }
  for (auto _ : state) {
    benchmark::DoNotOptimize(ecc_align(templ, target, WarpKind::euclidean));
  }
}
BENCHMARK(BM_ecc_align_euclidean)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_slice_job(benchmark::State& state) {
  const TriMesh mesh = testutil::mesh_from(
      testutil::sphere_triangles(10.0, static_cast<int>(state.range(0)),
                                 static_cast<int>(state.range(0)) * 2));
  for (auto _ : state) {
    benchmark::DoNotOptimize(slice_job(mesh, 0.1));
  }
  state.SetLabel(std::to_string(mesh.triangles.size()) + " tris");
}
BENCHMARK(BM_slice_job)->Arg(16)->Arg(48)->Unit(benchmark::kMillisecond);

void BM_rasterize_layer(benchmark::State& state) {
  const int canvas = static_cast<int>(state.range(0));
  const SliceStack stack =
      slice_job(testutil::mesh_from(testutil::cube_triangles(20.0)), 0.5);
  const std::vector<Contour>& contours = stack.layers.front().contours;
  const RandomisationConfig cfg;
  Rng rng(7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        rasterize_layer(contours, cfg, rng, nullptr, canvas, canvas, canvas / 32.0));
  }
}
BENCHMARK(BM_rasterize_layer)->Arg(64)->Arg(192)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
