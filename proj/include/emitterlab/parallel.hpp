#pragma once

#include <cstddef>

namespace emitterlab {

/// Worker count for internal parallelism: hardware concurrency, capped by
/// the EMITTERLAB_THREADS environment variable when it holds a positive integer.
unsigned default_thread_count();

/// Splits [0, n) into at most `parts` contiguous ranges of near-equal size.
struct ChunkRange {
  std::size_t begin;
  std::size_t end;
};
ChunkRange chunk(std::size_t n, unsigned parts, unsigned index);

}  // namespace emitterlab
