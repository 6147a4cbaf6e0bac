#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "emitterlab/channel.hpp"

namespace emitterlab::pts {

// PTS1 layout, all integers little-endian:
//   0..3   magic "PTS1"
//   4..7   uint32 version (= 1)
//   8..15  uint64 event count N
//   16..   N x uint64 timestamps in ps, strictly increasing
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 16;

std::string encode(const TimestampChannel& channel);

/// Parses a PTS1 image. The format carries no duration, so the channel
/// duration is set to `duration` when positive, otherwise to the last
/// timestamp. Throws FormatError on any layout or ordering violation.
TimestampChannel decode(std::string_view bytes, std::int64_t duration = 0);

void write_file(const std::filesystem::path& path, const TimestampChannel& channel);
TimestampChannel read_file(const std::filesystem::path& path, std::int64_t duration = 0);

}  // namespace emitterlab::pts
