#include "vdiff/atns.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace vdiff {

namespace {
constexpr char kMagic[4] = {'A', 'T', 'N', 'S'};
constexpr int kMaxNdim = 8;
}  // namespace

void write_atns(std::ostream& os, const Tensor& t) {
  if (t.ndim() > kMaxNdim) throw std::invalid_argument("atns: too many dimensions");
  os.write(kMagic, 4);
  unsigned char head[4] = {1, static_cast<unsigned char>(t.dtype()),
                           static_cast<unsigned char>(t.ndim()), 0};
  os.write(reinterpret_cast<const char*>(head), 4);
  for (long d : t.shape()) {
    std::uint64_t e = static_cast<std::uint64_t>(d);
    os.write(reinterpret_cast<const char*>(&e), 8);
  }
  if (t.dtype() == DType::F64)
    os.write(reinterpret_cast<const char*>(t.data<double>()), t.numel() * 8);
  else
    os.write(reinterpret_cast<const char*>(t.data<float>()), t.numel() * 4);
  if (!os) throw std::runtime_error("atns: write failed");
}

Tensor read_atns(std::istream& is) {
  char magic[4];
  unsigned char head[4];
  is.read(magic, 4);
  is.read(reinterpret_cast<char*>(head), 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("atns: bad magic");
  if (head[0] != 1) throw std::runtime_error("atns: unsupported version " + std::to_string(head[0]));
  if (head[1] > 1) throw std::runtime_error("atns: bad dtype byte " + std::to_string(head[1]));
  if (head[2] > kMaxNdim) throw std::runtime_error("atns: bad ndim " + std::to_string(head[2]));
  DType dt = head[1] == 0 ? DType::F64 : DType::F32;
  Shape shape(head[2]);
  for (auto& d : shape) {
    std::uint64_t e = 0;
    is.read(reinterpret_cast<char*>(&e), 8);
    d = static_cast<long>(e);
  }
  if (!is) throw std::runtime_error("atns: truncated header");
  Tensor t = make_tensor(shape, dt);
  if (dt == DType::F64)
    is.read(reinterpret_cast<char*>(t.mutable_data<double>()), t.numel() * 8);
  else
    is.read(reinterpret_cast<char*>(t.mutable_data<float>()), t.numel() * 4);
  if (!is) throw std::runtime_error("atns: truncated payload");
  return t;
}

void save_atns(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("atns: cannot open " + path + " for writing");
  write_atns(f, t);
}

Tensor load_atns(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("atns: cannot open " + path);
  return read_atns(f);
}

}  // namespace vdiff
