#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace pcet {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Digest over every regular file under `root` (relative paths + contents, sorted).
std::string directory_digest(const std::filesystem::path& root);

}  // namespace pcet
