#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace emitterlab::svg {

struct Series {
  enum class Style { kLine, kMarkers, kBars };
  std::vector<double> x;
  std::vector<double> y;
  Style style = Style::kLine;
  std::string color = "#1f77b4";
  std::string label;
};

struct Plot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  bool log_x = false;
  double width = 640;
  double height = 420;
};

std::string render(const Plot& plot);

/// Writes the plot; returns false instead of throwing on any failure.
bool write(const std::filesystem::path& path, const Plot& plot) noexcept;

}  // namespace emitterlab::svg
