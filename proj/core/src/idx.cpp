#include "xdg/idx.hpp"

#include <fstream>
#include <iterator>

namespace xdg {

namespace {

struct Header {
  std::uint32_t magic = 0;
  std::vector<std::size_t> dims;
  std::size_t payload_offset = 0;
};

std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

Header read_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw IdxError("truncated header", bytes.size());
  Header h;
  h.magic = be32(bytes, 0);
  if (h.magic != kIdxImages && h.magic != kIdxLabels) {
    throw IdxError("bad magic 0x" + [&] {
      static const char* hex = "0123456789abcdef";
      std::string s;
      for (int sh = 28; sh >= 0; sh -= 4) s += hex[(h.magic >> sh) & 0xf];
      return s;
    }(), 0);
  }
  const std::size_t rank = h.magic & 0xff;
  std::size_t off = 4;
  for (std::size_t i = 0; i < rank; ++i) {
    if (bytes.size() < off + 4) throw IdxError("truncated header", bytes.size());
    const std::uint32_t d = be32(bytes, off);
    if (d == 0) throw IdxError("zero dimension", off);
    h.dims.push_back(d);
    off += 4;
  }
  h.payload_offset = off;
  std::size_t need = 1;
  for (auto d : h.dims) need *= d;
  if (bytes.size() - off < need) throw IdxError("truncated payload", bytes.size());
  return h;
}

}  // namespace

Tensor parse_idx(std::span<const std::uint8_t> bytes) {
  const Header h = read_header(bytes);
  Tensor t(Shape(h.dims.begin(), h.dims.end()));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = bytes[h.payload_offset + i] / 255.0;
  return t;
}

std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  const Header h = read_header(bytes);
  if (h.magic != kIdxLabels) throw IdxError("expected a label file (magic 0x00000801)", 0);
  std::vector<int> out(h.dims[0]);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = bytes[h.payload_offset + i];
  return out;
}

std::vector<std::uint8_t> write_idx(const std::vector<std::uint32_t>& dims, std::span<const std::uint8_t> payload) {
  std::vector<std::uint8_t> out;
  const std::uint32_t magic = 0x00000800u | static_cast<std::uint32_t>(dims.size());
  auto put = [&](std::uint32_t v) {
    for (int sh = 24; sh >= 0; sh -= 8) out.push_back(static_cast<std::uint8_t>(v >> sh));
  };
  put(magic);
  for (auto d : dims) put(d);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace xdg
