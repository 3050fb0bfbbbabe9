#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace piqa {

// 64-bit FNV-1a. Used for blob checksums, prompt-grid identity and image keys.
class Fnv1a {
 public:
  void update(std::span<const std::byte> bytes) noexcept;
  void update(std::string_view text) noexcept;
  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::uint64_t fnv1a(std::string_view text) noexcept;
std::uint64_t fnv1a(std::span<const std::byte> bytes) noexcept;
std::string to_hex(std::uint64_t value);

}  // namespace piqa
