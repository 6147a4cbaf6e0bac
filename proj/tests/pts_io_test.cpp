#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "emitterlab/error.hpp"
#include "emitterlab/pts_io.hpp"
#include "emitterlab/rng.hpp"

using namespace emitterlab;

namespace {

TimestampChannel sample_channel() {
  TimestampChannel c;
  c.timestamps = {0, 1, 255, 256, 65'535, 1'000'000'000'000, (std::int64_t{1} << 62) + 7};
  c.duration = c.timestamps.back();
  return c;
}

}  // namespace

TEST(Pts, HeaderLayoutIsBitExact) {
  TimestampChannel c;
  c.timestamps = {0x0102030405060708};
  const auto bytes = pts::encode(c);
  ASSERT_EQ(bytes.size(), 24u);
  EXPECT_EQ(bytes.substr(0, 4), "PTS1");
  const std::string version{'\x01', '\x00', '\x00', '\x00'};
  EXPECT_EQ(bytes.substr(4, 4), version);
  const std::string count{'\x01', 0, 0, 0, 0, 0, 0, 0};
  EXPECT_EQ(bytes.substr(8, 8), count);
  const std::string ts{'\x08', '\x07', '\x06', '\x05', '\x04', '\x03', '\x02', '\x01'};
  EXPECT_EQ(bytes.substr(16, 8), ts);
}

TEST(Pts, EmptyChannelIsHeaderOnly) {
  const auto bytes = pts::encode({});
  EXPECT_EQ(bytes.size(), pts::kHeaderSize);
  const auto back = pts::decode(bytes);
  EXPECT_TRUE(back.empty());
  EXPECT_EQ(back.duration, 0);
}

TEST(Pts, RoundTrip) {
  const auto c = sample_channel();
  const auto back = pts::decode(pts::encode(c));
  EXPECT_EQ(back.timestamps, c.timestamps);
  EXPECT_EQ(back.duration, c.timestamps.back());
}

TEST(Pts, RandomRoundTripIsIdentity) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    TimestampChannel c;
    std::int64_t t = static_cast<std::int64_t>(rng.next_u64() % 1000);
    const auto n = 1 + rng.next_u64() % 2000;
    for (std::uint64_t i = 0; i < n; ++i) {
      c.timestamps.push_back(t);
      t += 1 + static_cast<std::int64_t>(rng.next_u64() % 100'000);
    }
    const auto bytes = pts::encode(c);
    EXPECT_EQ(bytes.size(), pts::kHeaderSize + 8 * n);
    const auto back = pts::decode(bytes, t);
    EXPECT_EQ(back.timestamps, c.timestamps);
    EXPECT_EQ(back.duration, t);
    EXPECT_EQ(pts::encode(back), bytes);
  }
}

TEST(Pts, ExplicitDurationIsKept) {
  const auto c = sample_channel();
  const auto back = pts::decode(pts::encode(c), c.timestamps.back() + 10);
  EXPECT_EQ(back.duration, c.timestamps.back() + 10);
  EXPECT_THROW(pts::decode(pts::encode(c), 5), FormatError);
}

TEST(Pts, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "emitterlab_pts_test.pts";
  const auto c = sample_channel();
  pts::write_file(path, c);
  EXPECT_EQ(std::filesystem::file_size(path), pts::kHeaderSize + 8 * c.size());
  EXPECT_EQ(pts::read_file(path).timestamps, c.timestamps);
  std::filesystem::remove(path);
  EXPECT_THROW(pts::read_file(path), IoError);
}

TEST(Pts, EncodeRejectsUnsortedOrNegative) {
  TimestampChannel c;
  c.timestamps = {5, 5};
  EXPECT_THROW(pts::encode(c), InvalidArgument);
  c.timestamps = {-1, 5};
  EXPECT_THROW(pts::encode(c), InvalidArgument);
}

TEST(Pts, DecodeRejectsMalformedImages) {
  const auto good = pts::encode(sample_channel());
  EXPECT_THROW(pts::decode(good.substr(0, 10)), FormatError);

  auto bad_magic = good;
  bad_magic[3] = '2';
  EXPECT_THROW(pts::decode(bad_magic), FormatError);

  auto bad_version = good;
  bad_version[4] = 2;
  EXPECT_THROW(pts::decode(bad_version), FormatError);

  EXPECT_THROW(pts::decode(good.substr(0, good.size() - 1)), FormatError);
  EXPECT_THROW(pts::decode(good + std::string(8, '\0')), FormatError);

  auto huge_count = good;
  huge_count[15] = '\x7f';
  EXPECT_THROW(pts::decode(huge_count), FormatError);

  // Swap the first two timestamps.
  auto unsorted = pts::encode(TimestampChannel{{1, 2}, 2, ""});
  std::swap_ranges(unsorted.begin() + 16, unsorted.begin() + 24, unsorted.begin() + 24);
  EXPECT_THROW(pts::decode(unsorted), FormatError);

  auto overflow = pts::encode(TimestampChannel{{1}, 1, ""});
  overflow[23] = '\x80';
  EXPECT_THROW(pts::decode(overflow), FormatError);
}
