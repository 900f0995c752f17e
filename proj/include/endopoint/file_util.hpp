#pragma once

#include <filesystem>
#include <string>

namespace endopoint {

/// Writes through a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path,
                       const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace endopoint
