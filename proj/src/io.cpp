#include "udepth/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "udepth/error.hpp"

namespace udepth {

namespace {
constexpr char kRasterMagic[4] = {'U', 'D', 'T', '1'};
constexpr std::uint32_t kMaxDims = 8;
}  // namespace

void write_u16_le(std::ostream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void write_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_f32_le(std::ostream& os, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  write_u32_le(os, u);
}

std::uint16_t read_u16_le(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  if (!is) throw FormatError("unexpected end of stream");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t read_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw FormatError("unexpected end of stream");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

float read_f32_le(std::istream& is) {
  const std::uint32_t u = read_u32_le(is);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

void write_raster(std::ostream& os, const Tensor& t) {
  os.write(kRasterMagic, 4);
  write_u32_le(os, static_cast<std::uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) write_u32_le(os, static_cast<std::uint32_t>(t.dim(i)));
  // payload written in one pass; host is little-endian in practice but the
  // per-value path keeps the format well-defined regardless
  const float* p = t.data();
  for (std::int64_t i = 0; i < t.size(); ++i) write_f32_le(os, p[i]);
}

Tensor read_raster(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kRasterMagic, 4) != 0)
    throw FormatError("bad raster magic (expected UDT1)");
  const std::uint32_t ndim = read_u32_le(is);
  if (ndim == 0 || ndim > kMaxDims) throw FormatError("raster ndim out of range: " + std::to_string(ndim));
  std::vector<int> shape(ndim);
  for (auto& d : shape) {
    const std::uint32_t v = read_u32_le(is);
    if (v == 0 || v > (1u << 24)) throw FormatError("raster dimension out of range");
    d = static_cast<int>(v);
  }
  const std::int64_t n = shape_size(shape);
  std::vector<float> data(static_cast<size_t>(n));
  for (auto& v : data) v = read_f32_le(is);
  return Tensor(std::move(shape), std::move(data));
}

void save_raster(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  write_raster(os, t);
  if (!os) throw IoError("write failed: " + path);
}

Tensor load_raster(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  try {
    return read_raster(is);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::map<std::string, std::string> parse_key_values(std::istream& is, const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    size_t a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos) continue;
    size_t b = line.find_last_not_of(" \t\r");
    line = line.substr(a, b - a + 1);
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      size_t i = s.find_first_not_of(" \t");
      size_t j = s.find_last_not_of(" \t");
      s = (i == std::string::npos) ? std::string() : s.substr(i, j - i + 1);
    };
    trim(key);
    trim(val);
    if (key.empty()) throw ParseError(origin + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = val;
  }
  return kv;
}

std::map<std::string, std::string> read_key_values(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  return parse_key_values(is, path);
}

double kv_get(const std::map<std::string, std::string>& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseError("key '" + key + "' has non-numeric value '" + it->second + "'");
  }
}

std::string kv_get(const std::map<std::string, std::string>& kv, const std::string& key,
                   const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

}  // namespace udepth
