// SPDX-License-Identifier: Apache-2.0
#include "rshe/parallel.hpp"

#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

namespace rshe {

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body) {
  if (n == 0) return;
  if (threads == 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const int concurrency = threads == 0 ? tbb::task_arena::automatic : static_cast<int>(threads);
  tbb::task_arena arena(concurrency);
  arena.execute([&] {
    tbb::parallel_for(std::size_t{0}, n, [&](std::size_t i) { body(i); });
  });
}

}  // namespace rshe
