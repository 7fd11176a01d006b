// include/ivcal/parallel.h

// Copyright 2026 The ivcal Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Segment-level map and map-reduce over a fixed index range.
//
// In reproducible mode the range is cut into kReproducibleBlocks contiguous
// blocks independent of the thread count; each block is accumulated in index
// order and the blocks are merged in block order, so results are bit-identical
// for any number of threads. Otherwise every worker keeps one accumulator and
// pulls chunks dynamically, which is faster but leaves the floating-point
// summation order to the scheduler.

#ifndef IVCAL_PARALLEL_H_
#define IVCAL_PARALLEL_H_

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

namespace ivcal {

struct ParallelOptions {
  int num_threads = 0;      // 0: std::thread::hardware_concurrency()
  bool reproducible = true;
};

constexpr size_t kReproducibleBlocks = 64;

inline int ResolveThreads(const ParallelOptions &opts, size_t work_items) {
  int n = opts.num_threads > 0
              ? opts.num_threads
              : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return static_cast<int>(std::max<size_t>(1, std::min<size_t>(n, work_items)));
}

namespace internal {

// Runs worker(w) for w in [0, num_workers) and rethrows the first exception.
template <class Worker>
void RunWorkers(int num_workers, Worker &&worker) {
  if (num_workers <= 1) {
    worker(0);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(num_workers);
  for (int w = 0; w < num_workers; w++) {
    threads.emplace_back([&, w] {
      try {
        worker(w);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto &t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace internal

// Calls fn(i) for every i in [0, n). fn must be safe to run concurrently for
// distinct i.
template <class Fn>
void ParallelFor(size_t n, const ParallelOptions &opts, Fn &&fn) {
  if (n == 0) return;
  std::atomic<size_t> next{0};
  internal::RunWorkers(ResolveThreads(opts, n), [&](int) {
    for (size_t i; (i = next.fetch_add(1)) < n;) fn(i);
  });
}

/// Map-reduce: make() creates an empty accumulator, accumulate(acc, i) folds
/// item i into it and merge(acc, other) folds another accumulator in.
/// merge must be associative and commutative up to rounding.
template <class MakeAcc, class Accumulate, class Merge>
auto ParallelReduce(size_t n, const ParallelOptions &opts, MakeAcc &&make,
                    Accumulate &&accumulate, Merge &&merge) -> decltype(make()) {
  using Acc = decltype(make());
  if (n == 0) return make();
  if (opts.reproducible) {
    const size_t num_blocks = std::min(n, kReproducibleBlocks);
    std::vector<std::optional<Acc>> blocks(num_blocks);
    std::atomic<size_t> next{0};
    internal::RunWorkers(ResolveThreads(opts, num_blocks), [&](int) {
      for (size_t b; (b = next.fetch_add(1)) < num_blocks;) {
        Acc acc = make();
        const size_t begin = b * n / num_blocks, end = (b + 1) * n / num_blocks;
        for (size_t i = begin; i < end; i++) accumulate(acc, i);
        blocks[b].emplace(std::move(acc));
      }
    });
    Acc total = std::move(*blocks[0]);
    for (size_t b = 1; b < num_blocks; b++) merge(total, *blocks[b]);
    return total;
  }
  const int workers = ResolveThreads(opts, n);
  std::vector<std::optional<Acc>> partial(workers);
  std::atomic<size_t> next{0};
  const size_t chunk = std::max<size_t>(1, n / (8 * static_cast<size_t>(workers)));
  internal::RunWorkers(workers, [&](int w) {
    Acc acc = make();
    for (size_t begin; (begin = next.fetch_add(chunk)) < n;) {
      const size_t end = std::min(n, begin + chunk);
      for (size_t i = begin; i < end; i++) accumulate(acc, i);
    }
    partial[w].emplace(std::move(acc));
  });
  Acc total = std::move(*partial[0]);
  for (int w = 1; w < workers; w++) merge(total, *partial[w]);
  return total;
}

}  // namespace ivcal

#endif  // IVCAL_PARALLEL_H_
