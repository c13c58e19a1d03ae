/*
 * Copyright 2026 The edt Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Parallel kernels against their serial references on shapes from the toy model.

#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "edt/kernels.hpp"
#include "edt/random.hpp"
#include "edt/tensor.hpp"

namespace {

std::vector<double> values(std::size_t n, std::uint64_t seed) {
  edt::Rng rng = edt::make_rng(seed, 0xBE7C);
  const edt::Tensor t = edt::normal_tensor({n}, 1.0, rng);
  return {t.data().begin(), t.data().end()};
}

template <bool Parallel>
void gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), k = static_cast<std::size_t>(state.range(1)),
             n = static_cast<std::size_t>(state.range(2));
  const auto a = values(m * k, 1), b = values(k * n, 2);
  std::vector<double> out(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      edt::kernels::gemm_nn(a, b, out, m, k, n);
    else
      edt::kernels::serial::gemm_nn(a, b, out, m, k, n);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * k * n));
}

template <bool Parallel>
void softmax(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), n = static_cast<std::size_t>(state.range(1));
  const auto x = values(m * n, 3);
  std::vector<double> out(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      edt::kernels::softmax_rows(x, out, m, n);
    else
      edt::kernels::serial::softmax_rows(x, out, m, n);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void attention(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), n = static_cast<std::size_t>(state.range(1));
  const std::size_t d = 64, heads = 4;
  const auto q = values(m * d, 4), k = values(n * d, 5), v = values(n * d, 6);
  std::vector<double> probs(heads * m * n), out(m * d);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d / heads));
  for (auto _ : state) {
    if constexpr (Parallel)
      edt::kernels::attention_heads(q, k, v, probs, out, m, n, d, heads, scale);
    else
      edt::kernels::serial::attention_heads(q, k, v, probs, out, m, n, d, heads, scale);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void layer_norm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), n = static_cast<std::size_t>(state.range(1));
  const auto x = values(m * n, 7), g = values(n, 8), b = values(n, 9);
  std::vector<double> out(m * n), xhat(m * n), rstd(m);
  for (auto _ : state) {
    if constexpr (Parallel)
      edt::kernels::layer_norm_rows(x, g, b, 1e-6, out, xhat, rstd, m, n);
    else
      edt::kernels::serial::layer_norm_rows(x, g, b, 1e-6, out, xhat, rstd, m, n);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void gelu(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = values(n, 10);
  std::vector<double> out(n);
  for (auto _ : state) {
    if constexpr (Parallel)
      edt::kernels::gelu(x, out);
    else
      edt::kernels::serial::gelu(x, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void inner_products(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), dim = static_cast<std::size_t>(state.range(1));
  const auto db = values(rows * dim, 11), q = values(dim, 12);
  std::vector<double> out(rows);
  for (auto _ : state) {
    if constexpr (Parallel)
      edt::kernels::inner_products(db, q, out, rows, dim);
    else
      edt::kernels::serial::inner_products(db, q, out, rows, dim);
    benchmark::DoNotOptimize(out.data());
  }
}

// Token projections (17 x 64 x 64), the MLP (17 x 64 x 256) and a batch of eight images.
#define GEMM_ARGS Args({17, 64, 64})->Args({17, 64, 256})->Args({136, 64, 256})
BENCHMARK(gemm<true>)->Name("gemm/parallel")->GEMM_ARGS;
BENCHMARK(gemm<false>)->Name("gemm/serial")->GEMM_ARGS;
BENCHMARK(softmax<true>)->Name("softmax/parallel")->Args({68, 17})->Args({512, 136});
BENCHMARK(softmax<false>)->Name("softmax/serial")->Args({68, 17})->Args({512, 136});
BENCHMARK(attention<true>)->Name("attention/parallel")->Args({17, 17})->Args({16, 17})->Args({128, 136});
BENCHMARK(attention<false>)->Name("attention/serial")->Args({17, 17})->Args({16, 17})->Args({128, 136});
BENCHMARK(layer_norm<true>)->Name("layer_norm/parallel")->Args({17, 64})->Args({136, 64});
BENCHMARK(layer_norm<false>)->Name("layer_norm/serial")->Args({17, 64})->Args({136, 64});
BENCHMARK(gelu<true>)->Name("gelu/parallel")->Arg(17 * 256)->Arg(136 * 256);
BENCHMARK(gelu<false>)->Name("gelu/serial")->Arg(17 * 256)->Arg(136 * 256);
BENCHMARK(inner_products<true>)->Name("inner_products/parallel")->Args({32, 256})->Args({4096, 256});
BENCHMARK(inner_products<false>)->Name("inner_products/serial")->Args({32, 256})->Args({4096, 256});

}  // namespace

BENCHMARK_MAIN();
