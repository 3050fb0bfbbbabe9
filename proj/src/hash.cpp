#include "piqa/hash.hpp"

#include <cstdio>

namespace piqa {

namespace {
constexpr std::uint64_t kPrime = 0x100000001b3ULL;
}

void Fnv1a::update(std::span<const std::byte> bytes) noexcept {
  for (std::byte b : bytes) {
    state_ ^= static_cast<std::uint64_t>(b);
    state_ *= kPrime;
  }
}

void Fnv1a::update(std::string_view text) noexcept {
  for (char c : text) {
    state_ ^= static_cast<std::uint8_t>(c);
    state_ *= kPrime;
  }
}

std::uint64_t fnv1a(std::string_view text) noexcept {
  Fnv1a h;
  h.update(text);
  return h.digest();
}

std::uint64_t fnv1a(std::span<const std::byte> bytes) noexcept {
  Fnv1a h;
  h.update(bytes);
  return h.digest();
}

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace piqa
