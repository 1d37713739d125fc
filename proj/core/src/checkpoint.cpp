#include "xdg/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace xdg {

namespace {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("truncated container while reading ") + what + " at offset " +
                        std::to_string(pos_));
    }
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_arrays(const NamedArrays& arrays) {
  std::string out = "XDG1";
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, t] : arrays) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.data()) put<double>(out, v);
  }
  return out;
}

NamedArrays decode_arrays(const std::string& bytes) {
  Reader r(bytes);
  if (r.str(4, "magic") != "XDG1") throw FormatError("bad magic: not an XDG1 container");
  const auto count = r.get<std::uint32_t>("array count");
  NamedArrays out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>("name length");
    std::string name = r.str(len, "name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank == 0) throw FormatError("array '" + name + "' has rank 0");
    Shape shape(rank);
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.get<std::uint64_t>("dimension"));
      if (d == 0) throw FormatError("array '" + name + "' has a zero dimension");
    }
    std::vector<double> data(numel(shape));
    for (auto& v : data) v = r.get<double>("payload");
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw FormatError("trailing bytes after offset " + std::to_string(r.pos()));
  return out;
}

void save_arrays(const std::filesystem::path& path, const NamedArrays& arrays) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_arrays(arrays);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

NamedArrays load_arrays(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_arrays(ss.str());
}

NamedArrays snapshot(const std::vector<Var>& params) {
  NamedArrays out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.name(), p.value());
  return out;
}

const Tensor& find_array(const NamedArrays& arrays, const std::string& name) {
  for (const auto& [n, t] : arrays) {
    if (n == name) return t;
  }
  throw FormatError("array '" + name + "' not found");
}

void restore(std::vector<Var>& params, const NamedArrays& arrays) {
  for (auto& p : params) {
    const Tensor& t = find_array(arrays, p.name());
    if (t.shape() != p.shape()) {
      throw FormatError("array '" + p.name() + "' has shape " + shape_str(t.shape()) + ", expected " +
                        shape_str(p.shape()));
    }
    p.mutable_value() = t;
  }
}

}  // namespace xdg
