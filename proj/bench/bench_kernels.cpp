// Parallel (im2col + GEMM) kernels against the serial direct-loop reference,
// plus one full training step at the Darcy preset size.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "vito/model.hpp"
#include "vito/nn/kernels.hpp"
#include "vito/train.hpp"

using namespace vito;
using namespace vito::nn;

namespace {

struct ConvCase {
  ConvGeom g;
  int batch;
  std::vector<float> x, w, b, y, dy, dx, dw, db;

  ConvCase(int cin, int cout, int side, int stride, int batch_) : batch(batch_) {
    g.cin = cin;
    g.cout = cout;
    g.stride = stride;
    g.h = g.w = side;
    std::mt19937 rng(1);
    std::normal_distribution<float> d;
    auto fill = [&](std::vector<float>& v, std::size_t n) {
      v.resize(n);
      for (auto& e : v) e = d(rng);
    };
    const std::size_t in = std::size_t(batch) * cin * side * side, out = std::size_t(batch) * cout * g.ho() * g.wo();
    fill(x, in);
    fill(w, std::size_t(cout) * cin * 9);
    fill(b, cout);
    fill(dy, out);
    y.resize(out);
    dx.resize(in);
    dw.resize(w.size());
    db.resize(b.size());
  }
};

// Args: cin, cout, side, stride.
void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({8, 8, 64, 1})->Args({16, 16, 32, 1})->Args({3, 8, 128, 2})->Args({16, 8, 64, 1});
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& st) {
  ConvCase c(st.range(0), st.range(1), st.range(2), st.range(3), 10);
  for (auto _ : st) {
    if constexpr (Parallel)
      kernels::conv2d_forward(c.x.data(), c.w.data(), c.b.data(), c.y.data(), c.batch, c.g);
    else
      kernels::reference::conv2d_forward(c.x.data(), c.w.data(), c.b.data(), c.y.data(), c.batch, c.g);
    benchmark::DoNotOptimize(c.y.data());
  }
  st.SetItemsProcessed(st.iterations() * c.batch);
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& st) {
  ConvCase c(st.range(0), st.range(1), st.range(2), st.range(3), 10);
  for (auto _ : st) {
    if constexpr (Parallel)
      kernels::conv2d_backward(c.x.data(), c.w.data(), c.dy.data(), c.dx.data(), c.dw.data(), c.db.data(), c.batch,
                               c.g);
    else
      kernels::reference::conv2d_backward(c.x.data(), c.w.data(), c.dy.data(), c.dx.data(), c.dw.data(), c.db.data(),
                                          c.batch, c.g);
    benchmark::DoNotOptimize(c.dw.data());
  }
  st.SetItemsProcessed(st.iterations() * c.batch);
}

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/reference")->Apply(conv_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->Apply(conv_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/reference")->Apply(conv_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/parallel")->Apply(conv_args)->Unit(benchmark::kMillisecond);

// One optimizer step on a batch of 10 Darcy samples, 16x16 -> 128x128.
void BM_TrainStep(benchmark::State& st) {
  Rng rng(1);
  Model<float> m(ViTOConfig::darcy(), rng);
  Tensor<float> x({10, 1, 16, 16}), y({10, 1, 128, 128}, 1.0f);
  std::normal_distribution<float> d;
  for (auto& v : x.storage()) v = d(rng);
  AdamW<float> opt(m.parameters(), 1e-4);
  const Mesh2D mesh = Mesh2D::unit_square(16);
  for (auto _ : st) {
    Model<float>::Tape tape;
    const auto p = m.forward(x, mesh, 128, 128, &tape);
    Tensor<float> g;
    relative_l2_loss(p, y, 1e-8, &g);
    m.zero_grad();
    m.backward(g, tape);
    opt.step(1e-4);
  }
  st.SetItemsProcessed(st.iterations() * 10);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_EvalForward(benchmark::State& st) {
  Rng rng(1);
  Model<float> m(ViTOConfig::darcy(), rng);
  Tensor<float> x({10, 1, 16, 16});
  std::normal_distribution<float> d;
  for (auto& v : x.storage()) v = d(rng);
  const Mesh2D mesh = Mesh2D::unit_square(16);
  for (auto _ : st) benchmark::DoNotOptimize(m.forward(x, mesh, 128, 128));
  st.SetItemsProcessed(st.iterations() * 10);
}
BENCHMARK(BM_EvalForward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
