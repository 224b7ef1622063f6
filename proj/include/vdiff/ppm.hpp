#pragma once

#include <string>

#include "vdiff/tensor.hpp"

namespace vdiff {

// Binary PPM (P6) frame dumps. A frame is [C,H,W] with values in [-1,1];
// channels 0..2 map to RGB (a single channel is replicated to gray). Values
// map to bytes via round-half-away-from-zero of 255*(v+1)/2, clamped.
void save_ppm(const std::string& path, const Tensor& frame);

// Reads a P6 file back as [3,H,W] with values in [-1,1] (for tests).
Tensor load_ppm(const std::string& path);

}  // namespace vdiff
