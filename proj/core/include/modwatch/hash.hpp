#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace modwatch {

// Hex SHA-1 of "blob <size>\0<bytes>", i.e. the object id git assigns to a file.
std::string git_blob_sha1(std::string_view bytes);
std::string git_blob_sha1_file(const std::filesystem::path& path);

}  // namespace modwatch
