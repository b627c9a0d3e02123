#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace crossview::detail {

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

std::vector<std::string_view> split(std::string_view s, char sep);
std::vector<std::string> read_lines(const std::filesystem::path& path);

std::string format_float(float v);
std::string format_double(double v);

}  // namespace crossview::detail
