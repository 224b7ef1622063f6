#pragma once

#include <iosfwd>
#include <string>

#include "vdiff/tensor.hpp"

namespace vdiff {

// "ATNS" binary tensor container: magic `ATNS`, u8 version=1, u8 dtype
// (0=f64, 1=f32), u8 ndim, one padding byte, ndim little-endian u64 extents,
// then the row-major payload. Little-endian host assumed.

void write_atns(std::ostream& os, const Tensor& t);
Tensor read_atns(std::istream& is);

void save_atns(const std::string& path, const Tensor& t);
Tensor load_atns(const std::string& path);

}  // namespace vdiff
