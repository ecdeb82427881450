// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Small helpers shared by the unit tests.

#ifndef TSASR_TESTS_TEST_UTIL_H_
#define TSASR_TESTS_TEST_UTIL_H_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "tsasr/autodiff.h"
#include "tsasr/objectives.h"
#include "tsasr/rng.h"

namespace tsasr::testing {

inline ad::Array random_array(Rng& rng, ad::Shape shape, double lo = -2.0,
                              double hi = 2.0) {
  ad::Array a(std::move(shape));
  for (auto& v : a.values()) v = rng.uniform(lo, hi);
  return a;
}

inline double max_abs_diff(const ad::Array& a, const ad::Array& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff_row(const ad::Array& a, const ad::Array& b,
                               std::size_t row) {
  double m = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c)
    m = std::max(m, std::abs(a.at(row, c) - b.at(row, c)));
  return m;
}

// Row-wise log-softmax of a T x V array, computed directly.
inline ad::Array log_softmax_array(const ad::Array& x) {
  ad::Array out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double m = -INFINITY;
    for (std::size_t c = 0; c < x.cols(); ++c) m = std::max(m, x.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) z += std::exp(x.at(r, c) - m);
    for (std::size_t c = 0; c < x.cols(); ++c)
      out.at(r, c) = x.at(r, c) - m - std::log(z);
  }
  return out;
}

inline ad::Array random_lattice(Rng& rng, std::size_t T, std::size_t V) {
  return log_softmax_array(random_array(rng, {T, V}, -2.0, 2.0));
}

inline TokenSeq random_tokens(Rng& rng, std::size_t n, std::size_t V) {
  TokenSeq t(n);
  for (auto& v : t) v = static_cast<int>(rng.uniform_int(1, static_cast<std::int64_t>(V) - 1));
  return t;
}

// Fresh, empty scratch directory under the build tree.
inline std::string scratch_dir(const std::string& name) {
  namespace fs = std::filesystem;
  fs::path p = fs::temp_directory_path() / ("tsasr_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

}  // namespace tsasr::testing

#endif  // TSASR_TESTS_TEST_UTIL_H_
