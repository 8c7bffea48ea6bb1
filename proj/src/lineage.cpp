#include "snuh/lineage.hpp"

#include <array>
#include <cstdio>
#include <fstream>

#include "snuh/errors.hpp"

namespace snuh {

ContentHash& ContentHash::update(std::string_view bytes) {
  for (unsigned char c : bytes) {
    state_ ^= c;
    state_ *= 0x100000001b3ULL;
  }
  return *this;
}

ContentHash& ContentHash::update_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    update(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
  }
  return *this;
}

std::string ContentHash::hex() const {
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(state_));
  return out;
}

std::optional<std::string> read_lineage(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::string line;
  constexpr std::string_view tag = "# lineage ";
  while (std::getline(in, line) && !line.empty() && line.front() == '#')
    if (line.starts_with(tag)) return line.substr(tag.size());
  return std::nullopt;
}

}  // namespace snuh
