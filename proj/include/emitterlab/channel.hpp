#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace emitterlab {

/// Detection events of one detector: strictly increasing integer picoseconds in [0, duration].
struct TimestampChannel {
  std::vector<std::int64_t> timestamps;
  std::int64_t duration = 0;  ///< ps
  std::string label;

  std::size_t size() const { return timestamps.size(); }
  bool empty() const { return timestamps.empty(); }

  /// Mean count rate over the channel duration, counts/s.
  double mean_rate() const;

  /// Throws UnsortedInputError / InvalidArgument when the invariants do not hold.
  void validate() const;
};

}  // namespace emitterlab
