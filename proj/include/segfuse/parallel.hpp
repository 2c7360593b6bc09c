// Copyright 2026 The segfuse Authors
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

#ifndef SEGFUSE_PARALLEL_HPP_
#define SEGFUSE_PARALLEL_HPP_

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "segfuse/error.hpp"

namespace segfuse {

// Worker count precedence: explicit request, then SEGFUSE_THREADS, then
// the hardware concurrency (at least 1).
inline int resolve_threads(int requested = 0) {
  if (requested < 0) fail(errc::bad_argument, "thread count must be positive");
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SEGFUSE_THREADS")) {
    const int parsed = std::atoi(env);
    if (parsed > 0) return parsed;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Runs fn(slot, begin, end) over contiguous chunks of [0, n). Slots are
// dense chunk indices so callers can keep per-slot accumulators and merge
// them in slot order, making results independent of scheduling. The first
// exception (by slot order) is rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads < 1) fail(errc::bad_argument, "thread count must be positive");
  const std::size_t chunks =
      std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  if (chunks <= 1) {
    if (n > 0) fn(std::size_t{0}, std::size_t{0}, n);
    return;
  }
  const std::size_t per = (n + chunks - 1) / chunks;
  std::vector<std::exception_ptr> errors(chunks);
  std::vector<std::thread> workers;
  workers.reserve(chunks);
  for (std::size_t slot = 0; slot < chunks; ++slot) {
    const std::size_t begin = slot * per;
    const std::size_t end = std::min(n, begin + per);
    if (begin >= end) break;
    workers.emplace_back([&, slot, begin, end] {
      try {
        fn(slot, begin, end);
      } catch (...) {
        errors[slot] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace segfuse

#endif  // SEGFUSE_PARALLEL_HPP_
