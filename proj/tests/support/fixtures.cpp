#include "fixtures.hpp"

#include <fstream>
#include <sstream>
#include <unistd.h>

namespace xdg::testing {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo, double hi) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor kinkless_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (auto& v : t.data()) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
  return t;
}

std::vector<int> random_labels(std::size_t n, int classes, Rng& rng) {
  std::vector<int> out(n);
  for (auto& l : out) l = static_cast<int>(rng.below(static_cast<std::size_t>(classes)));
  return out;
}

MultiDomainDataset tiny_glyphs(std::uint64_t seed, std::size_t per_class, int domains) {
  GlyphSpec spec;
  spec.classes = 3;
  spec.per_class = per_class;
  spec.domains = domains;
  spec.side = 16;
  return gen_synth_glyphs(spec, seed);
}

TempDir::TempDir(const std::string& tag) {
  static int counter = 0;
  path_ = std::filesystem::temp_directory_path() /
          ("xdg-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace xdg::testing
