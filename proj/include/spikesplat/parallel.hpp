// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>

namespace spikesplat {

// Worker cap for data-parallel loops. Defaults to SPIKESPLAT_THREADS when the
// environment sets it, else the hardware concurrency.
int max_threads();
void set_max_threads(int n);

// Static chunking over [begin, end): fn(chunk_index, chunk_begin, chunk_end).
// Chunk boundaries depend only on the range and thread count, so writers of
// disjoint slices stay deterministic.
void parallel_chunks(int begin, int end,
                     const std::function<void(int, int, int)>& fn);

} // namespace spikesplat
