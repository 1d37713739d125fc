#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xdg/datasets.hpp"
#include "xdg/random.hpp"
#include "xdg/tensor.hpp"

namespace xdg::testing {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0);
/// Values with magnitude in [0.1, 1] and random sign, away from relu kinks.
Tensor kinkless_tensor(const Shape& shape, Rng& rng);
std::vector<int> random_labels(std::size_t n, int classes, Rng& rng);

/// Small glyph dataset shared by harness tests.
MultiDomainDataset tiny_glyphs(std::uint64_t seed = 0, std::size_t per_class = 12, int domains = 3);

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

std::string read_text(const std::filesystem::path& p);

}  // namespace xdg::testing
