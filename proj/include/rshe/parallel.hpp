// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace rshe {

// Runs body(i) for i in [0, n) on at most `threads` workers (0 = library
// default). Results must not depend on scheduling; callers write to
// disjoint slots.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body);

}  // namespace rshe
