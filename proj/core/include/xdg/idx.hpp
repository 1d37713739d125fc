#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "xdg/tensor.hpp"

namespace xdg {

/// Malformed IDX input. The message names the byte offset where parsing stopped.
class IdxError : public std::runtime_error {
 public:
  IdxError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

inline constexpr std::uint32_t kIdxImages = 0x00000803;
inline constexpr std::uint32_t kIdxLabels = 0x00000801;

/// Unsigned-byte IDX payload (images or labels) scaled to [0,1].
Tensor parse_idx(std::span<const std::uint8_t> bytes);
/// Label file (magic 0x801) as integers.
std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes);

/// Encodes raw bytes with the given dimensions; rank 1 uses the label magic, rank 3 the image magic.
std::vector<std::uint8_t> write_idx(const std::vector<std::uint32_t>& dims, std::span<const std::uint8_t> payload);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace xdg
