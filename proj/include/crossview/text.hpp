#pragma once

#include <string>
#include <string_view>

namespace crossview {

std::string trim(std::string_view s);

/// Trim, collapse internal whitespace runs to one space, lowercase (ASCII).
std::string normalize_place_name(std::string_view s);

/// Maps a reference to a file-name-safe token: characters outside
/// [A-Za-z0-9._-] become '_'.
std::string sanitize_ref(std::string_view s);

/// Lowercase hex SHA-256 of the UTF-8 bytes of `data`.
std::string sha256_hex(std::string_view data);

/// Current UTC time as ISO-8601 with millisecond precision.
std::string utc_timestamp();

}  // namespace crossview
