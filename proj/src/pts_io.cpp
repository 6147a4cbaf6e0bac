#include "emitterlab/pts_io.hpp"

#include <fstream>
#include <iterator>
#include <limits>

#include "emitterlab/error.hpp"

namespace emitterlab::pts {

namespace {

void put_le(std::string& out, std::uint64_t value, int bytes) {
  for (int i = 0; i < bytes; ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFFu));
  }
}

std::uint64_t get_le(std::string_view in, std::size_t offset, int bytes) {
  std::uint64_t value = 0;
  for (int i = 0; i < bytes; ++i) {
    value |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return value;
}

}  // namespace

std::string encode(const TimestampChannel& channel) {
  std::string out;
  out.reserve(kHeaderSize + 8 * channel.timestamps.size());
  out.append("PTS1");
  put_le(out, kVersion, 4);
  put_le(out, channel.timestamps.size(), 8);
  std::int64_t previous = -1;
  for (std::int64_t t : channel.timestamps) {
    if (t < 0 || t <= previous) {
      throw InvalidArgument("PTS1 encode: timestamps must be non-negative and strictly increasing");
    }
    previous = t;
    put_le(out, static_cast<std::uint64_t>(t), 8);
  }
  return out;
}

TimestampChannel decode(std::string_view bytes, std::int64_t duration) {
  if (bytes.size() < kHeaderSize) {
    throw FormatError("PTS1: file shorter than the 16-byte header");
  }
  if (bytes.substr(0, 4) != "PTS1") {
    throw FormatError("PTS1: bad magic");
  }
  const auto version = get_le(bytes, 4, 4);
  if (version != kVersion) {
    throw FormatError("PTS1: unsupported version " + std::to_string(version));
  }
  const auto count = get_le(bytes, 8, 8);
  if (count > (bytes.size() - kHeaderSize) / 8 || bytes.size() != kHeaderSize + 8 * count) {
    throw FormatError("PTS1: event count " + std::to_string(count) + " does not match file size " +
                      std::to_string(bytes.size()));
  }
  TimestampChannel channel;
  channel.timestamps.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto raw = get_le(bytes, kHeaderSize + 8 * i, 8);
    if (raw > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
      throw FormatError("PTS1: timestamp overflows int64");
    }
    const auto t = static_cast<std::int64_t>(raw);
    if (!channel.timestamps.empty() && t <= channel.timestamps.back()) {
      throw FormatError("PTS1: timestamps not strictly increasing at event " + std::to_string(i));
    }
    channel.timestamps.push_back(t);
  }
  const std::int64_t last = channel.timestamps.empty() ? 0 : channel.timestamps.back();
  if (duration > 0 && duration < last) {
    throw FormatError("PTS1: declared duration shorter than the last timestamp");
  }
  channel.duration = duration > 0 ? duration : last;
  return channel;
}

void write_file(const std::filesystem::path& path, const TimestampChannel& channel) {
  const auto bytes = encode(channel);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open '" + path.string() + "' for writing");
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("write failed for '" + path.string() + "'");
  }
}

TimestampChannel read_file(const std::filesystem::path& path, std::int64_t duration) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open '" + path.string() + "' for reading");
  }
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto channel = decode(bytes, duration);
  channel.label = path.filename().string();
  return channel;
}

}  // namespace emitterlab::pts
