#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

namespace emitterlab::jsonio {

/// Value after a %.{digits}g round trip; non-finite values pass through.
double round_significant(double value, int digits = 12);

/// Deep copy with every floating-point number rounded; non-finite numbers become null.
nlohmann::json rounded(const nlohmann::json& value, int digits = 12);

nlohmann::json number_or_null(double value);

/// Throws IoError when unreadable and FormatError when malformed.
nlohmann::json load_file(const std::filesystem::path& path);
/// Pretty-printed, rounded, trailing newline. Throws IoError.
void save_file(const std::filesystem::path& path, const nlohmann::json& value);

}  // namespace emitterlab::jsonio
