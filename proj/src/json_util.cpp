#include "emitterlab/json_util.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "emitterlab/error.hpp"

namespace emitterlab::jsonio {

double round_significant(double value, int digits) {
  if (!std::isfinite(value) || value == 0.0) return value;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, value);
  return std::strtod(buf, nullptr);
}

nlohmann::json rounded(const nlohmann::json& value, int digits) {
  if (value.is_number_float()) {
    const double v = value.get<double>();
    if (!std::isfinite(v)) return nullptr;
    return round_significant(v, digits);
  }
  if (value.is_object()) {
    nlohmann::json out = nlohmann::json::object();
    for (auto it = value.begin(); it != value.end(); ++it) out[it.key()] = rounded(it.value(), digits);
    return out;
  }
  if (value.is_array()) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& v : value) out.push_back(rounded(v, digits));
    return out;
  }
  return value;
}

nlohmann::json number_or_null(double value) {
  if (!std::isfinite(value)) return nullptr;
  return value;
}

nlohmann::json load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void save_file(const std::filesystem::path& path, const nlohmann::json& value) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << rounded(value).dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace emitterlab::jsonio
