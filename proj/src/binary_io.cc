// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "tsasr/binary_io.h"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>

namespace tsasr {

void write_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64_le(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw FormatError("unexpected end of file reading u64");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

void write_f64_le(std::ostream& os, std::span<const double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double v : values) write_u64_le(os, std::bit_cast<std::uint64_t>(v));
  }
}

void read_f64_le(std::istream& is, std::span<double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    if (!is.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(double))))
      throw FormatError("unexpected end of file reading float64 block");
  } else {
    for (double& v : values) v = std::bit_cast<double>(read_u64_le(is));
  }
}

void write_audio(const std::string& path, std::span<const double> samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write audio file " + path);
  write_u64_le(out, samples.size());
  write_f64_le(out, samples);
  if (!out) throw FormatError("write failed: " + path);
}

std::vector<double> read_audio(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open audio file " + path);
  const std::uint64_t n = read_u64_le(in);
  const auto bytes = std::filesystem::file_size(path);
  if (bytes != 8 + n * sizeof(double))
    throw FormatError("audio file " + path + ": header says " +
                      std::to_string(n) + " samples but file has " +
                      std::to_string(bytes) + " bytes");
  std::vector<double> samples(n);
  read_f64_le(in, samples);
  return samples;
}

std::vector<std::string> read_header_lines(std::istream& is,
                                           const std::string& terminator,
                                           const std::string& what) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (line == terminator) return lines;
    lines.push_back(line);
    if (lines.size() > 100000)
      throw FormatError(what + ": header terminator not found");
  }
  throw FormatError(what + ": truncated header (no '" + terminator + "')");
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FormatError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      out.close();
      std::remove(tmp.c_str());
      throw FormatError("write failed: " + path);
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace tsasr
