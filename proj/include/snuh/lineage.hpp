#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace snuh {

// 64-bit FNV-1a. Used for artifact cache keys and lineage checks, not for
// anything adversarial.
class ContentHash {
 public:
  ContentHash& update(std::string_view bytes);
  ContentHash& update_file(const std::filesystem::path& path);
  std::uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

// Reads the "# lineage <hex>" line from the comment preamble of a text
// artifact, if present.
std::optional<std::string> read_lineage(const std::filesystem::path& path);

}  // namespace snuh
