#include "binary_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <limits>

#include "iia/error.hpp"

namespace iia::detail {

namespace {

std::uint32_t read_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return static_cast<std::uint32_t>(bytes[offset]) |
         (static_cast<std::uint32_t>(bytes[offset + 1]) << 8) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 3]) << 24);
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

MatrixHeader parse_header(std::span<const std::uint8_t> bytes, std::string_view magic,
                          const std::string& what) {
  if (bytes.size() < kHeaderSize) throw FormatError(what + ": truncated header");
  if (std::string_view(reinterpret_cast<const char*>(bytes.data()), 4) != magic) {
    throw FormatError(what + ": bad magic, expected " + std::string(magic));
  }
  if (bytes[4] != kFormatVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(bytes[4]));
  }
  MatrixHeader h{read_u32(bytes, 5), read_u32(bytes, 9)};
  const std::uint64_t expected =
      static_cast<std::uint64_t>(h.first) * static_cast<std::uint64_t>(h.second) * 4u;
  const std::uint64_t actual = bytes.size() - kHeaderSize;
  if (expected != actual) {
    throw FormatError(what + ": header declares " + std::to_string(h.first) + "x" +
                      std::to_string(h.second) + " values (" + std::to_string(expected) +
                      " bytes) but payload has " + std::to_string(actual) + " bytes");
  }
  return h;
}

void append_header(std::vector<std::uint8_t>& out, std::string_view magic, std::uint32_t first,
                   std::uint32_t second) {
  out.insert(out.end(), magic.begin(), magic.end());
  out.push_back(kFormatVersion);
  append_u32(out, first);
  append_u32(out, second);
}

void append_f32(std::vector<std::uint8_t>& out, float value) {
  append_u32(out, std::bit_cast<std::uint32_t>(value));
}

float read_f32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return std::bit_cast<float>(read_u32(bytes, offset));
}

}  // namespace iia::detail
