#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "xdg/autodiff.hpp"

namespace xdg {

/// Named arrays as stored in an XDG1 container.
using NamedArrays = std::vector<std::pair<std::string, Tensor>>;

/// Thrown for malformed or unreadable containers.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Container layout, all integers little-endian:
//   "XDG1" | u32 count | count x ( u32 name_len | name | u32 rank | u64 dims[rank] | f64 data[prod] )
std::string encode_arrays(const NamedArrays& arrays);
NamedArrays decode_arrays(const std::string& bytes);

void save_arrays(const std::filesystem::path& path, const NamedArrays& arrays);
NamedArrays load_arrays(const std::filesystem::path& path);

/// Snapshot of parameter values keyed by parameter name.
NamedArrays snapshot(const std::vector<Var>& params);
/// Copies values back by name; every parameter must be present with a matching shape.
void restore(std::vector<Var>& params, const NamedArrays& arrays);

const Tensor& find_array(const NamedArrays& arrays, const std::string& name);

}  // namespace xdg
