/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#pragma once

#include <cstdint>
#include <functional>

namespace scamap {

/// Caps the worker count for all parallel_for calls (0 = hardware default).
void set_max_threads(int n);
int max_threads();

/// Runs fn(i) for i in [begin, end). fn must only write state that is
/// disjoint per index; results are then identical for any worker count.
void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)> &fn);

} // namespace scamap
