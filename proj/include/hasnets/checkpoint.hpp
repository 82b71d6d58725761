#pragma once

#include <filesystem>
#include <iosfwd>

#include "hasnets/model.hpp"

namespace hasnets::nn {

// Layout: "HNM1", u64 descriptor length, descriptor text, then per parameter
// tensor: u64 rank, u64 dims, raw f64 values. All integers and floats are
// little-endian.

void write_checkpoint(std::ostream& out, const Model& model);
Model read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace hasnets::nn
