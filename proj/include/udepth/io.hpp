#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>

#include "udepth/tensor.hpp"

namespace udepth {

// Raster file: magic "UDT1", u32 LE ndim, ndim x u32 LE dims,
// then f32 LE payload, row-major.
void save_raster(const std::string& path, const Tensor& t);
Tensor load_raster(const std::string& path);
void write_raster(std::ostream& os, const Tensor& t);
Tensor read_raster(std::istream& is);

void write_u16_le(std::ostream& os, std::uint16_t v);
void write_u32_le(std::ostream& os, std::uint32_t v);
void write_f32_le(std::ostream& os, float v);
std::uint16_t read_u16_le(std::istream& is);
std::uint32_t read_u32_le(std::istream& is);
float read_f32_le(std::istream& is);

// key=value config files: one pair per line, '#' starts a comment,
// blank lines ignored. Later keys override earlier ones.
std::map<std::string, std::string> read_key_values(const std::string& path);
std::map<std::string, std::string> parse_key_values(std::istream& is, const std::string& origin);

double kv_get(const std::map<std::string, std::string>& kv, const std::string& key, double fallback);
std::string kv_get(const std::map<std::string, std::string>& kv, const std::string& key,
                   const std::string& fallback);

}  // namespace udepth
