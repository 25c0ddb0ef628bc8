#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace iia::detail {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Fixed header shared by EMB1 and SIM1: 4-byte magic, version byte, two u32-LE fields.
struct MatrixHeader {
  std::uint32_t first = 0;
  std::uint32_t second = 0;
};

inline constexpr std::size_t kHeaderSize = 13;
inline constexpr std::uint8_t kFormatVersion = 1;

/// Validates magic, version and that the payload holds exactly first*second f32 values.
MatrixHeader parse_header(std::span<const std::uint8_t> bytes, std::string_view magic,
                          const std::string& what);

void append_header(std::vector<std::uint8_t>& out, std::string_view magic, std::uint32_t first,
                   std::uint32_t second);

void append_f32(std::vector<std::uint8_t>& out, float value);
float read_f32(std::span<const std::uint8_t> bytes, std::size_t offset);

}  // namespace iia::detail
