#include "vdiff/ppm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

namespace vdiff {

void save_ppm(const std::string& path, const Tensor& frame) {
  if (frame.ndim() != 3) throw std::invalid_argument("ppm: frame must be [C,H,W]");
  long c = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("ppm: cannot open " + path + " for writing");
  f << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      for (long ch = 0; ch < 3; ++ch) {
        long src = c >= 3 ? ch : 0;
        double v = frame.value_at((src * h + y) * w + x);
        long byte = std::lround(255.0 * (v + 1.0) / 2.0);
        byte = std::clamp(byte, 0L, 255L);
        row[static_cast<size_t>(x * 3 + ch)] = static_cast<unsigned char>(byte);
      }
    }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw std::runtime_error("ppm: write failed: " + path);
}

Tensor load_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("ppm: cannot open " + path);
  std::string magic;
  long w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || w <= 0 || h <= 0)
    throw std::runtime_error("ppm: unsupported header in " + path);
  f.get();  // single whitespace byte after maxval
  std::vector<unsigned char> buf(static_cast<size_t>(w) * h * 3);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("ppm: truncated pixel data in " + path);
  Tensor t = make_tensor({3, h, w}, DType::F64);
  for (long ch = 0; ch < 3; ++ch)
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double b = buf[static_cast<size_t>((y * w + x) * 3 + ch)];
        t.set_value((ch * h + y) * w + x, b / 255.0 * 2.0 - 1.0);
      }
  return t;
}

}  // namespace vdiff
