#include <array>
#include <cstdio>
#include <fstream>

#include "mristage/error.hpp"
#include "mristage/manifest.hpp"

namespace mristage {

std::uint64_t hash_bytes(const void* data, std::size_t size, std::uint64_t seed) {
  constexpr std::uint64_t kPrime = 0x100000001b3ULL;
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= kPrime;
  }
  return h;
}

std::uint64_t hash_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DatasetError("cannot read " + file.string());
  std::array<char, 1 << 16> buffer{};
  std::uint64_t h = 0xcbf29ce484222325ULL;
  while (in) {
    in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    const auto got = static_cast<std::size_t>(in.gcount());
    if (got == 0) break;
    h = hash_bytes(buffer.data(), got, h);
  }
  return h;
}

std::string format_hash(std::uint64_t hash) {
  char text[17];
  std::snprintf(text, sizeof(text), "%016llx", static_cast<unsigned long long>(hash));
  return text;
}

std::uint64_t parse_hash(std::string_view hex) {
  if (hex.size() != 16) throw DatasetError("content_hash must be 16 hex digits: " + std::string(hex));
  std::uint64_t value = 0;
  for (char c : hex) {
    value <<= 4;
    if (c >= '0' && c <= '9') value |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') value |= static_cast<std::uint64_t>(c - 'a' + 10);
    else if (c >= 'A' && c <= 'F') value |= static_cast<std::uint64_t>(c - 'A' + 10);
    else throw DatasetError("content_hash must be 16 hex digits: " + std::string(hex));
  }
  return value;
}

}  // namespace mristage
