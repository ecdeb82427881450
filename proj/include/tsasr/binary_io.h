// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary helpers and the raw audio container (8-byte sample
// count followed by float64 samples).

#ifndef TSASR_BINARY_IO_H_
#define TSASR_BINARY_IO_H_

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsasr {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_u64_le(std::ostream& os, std::uint64_t v);
std::uint64_t read_u64_le(std::istream& is);
void write_f64_le(std::ostream& os, std::span<const double> values);
void read_f64_le(std::istream& is, std::span<double> values);

void write_audio(const std::string& path, std::span<const double> samples);
std::vector<double> read_audio(const std::string& path);

// Reads "\n"-terminated header lines up to and including the terminator
// line; the stream is left positioned at the first binary byte.
std::vector<std::string> read_header_lines(std::istream& is,
                                           const std::string& terminator,
                                           const std::string& what);

// Writes via a temporary sibling and renames, so a failed run never leaves
// a truncated file behind.
void write_file_atomic(const std::string& path, const std::string& bytes);

}  // namespace tsasr

#endif  // TSASR_BINARY_IO_H_
