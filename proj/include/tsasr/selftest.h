// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Oracle suites shared by the unit tests, the acceptance binary and the
// `selftest` subcommand.

#ifndef TSASR_SELFTEST_H_
#define TSASR_SELFTEST_H_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tsasr/autodiff.h"
#include "tsasr/model.h"
#include "tsasr/rng.h"

namespace tsasr::selftest {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

// One differentiable primitive: random input shapes and the op itself.
struct PrimitiveCase {
  std::string name;
  std::function<std::vector<ad::Shape>(Rng&)> shapes;
  std::function<ad::Var(ad::Tape&, std::vector<ad::Var>&)> op;
  double lo = -2.0, hi = 2.0;  // input value range
};

std::vector<PrimitiveCase> primitive_cases();
// Grad-check of sum(w * op(inputs)) for random inputs and weights.
double primitive_grad_error(const PrimitiveCase& c, Rng& rng);

// Toy model (T = 5 from 22 samples, D = 8, |V| = 4, d = 6).
ModelConfig toy_model_config(HeadKind head, FusionKind fusion);
// Full-model grad-check over every parameter and the embeddings.
double model_grad_error(const ModelConfig& cfg, std::uint64_t seed);

SuiteResult primitive_gradients(std::uint64_t seed, std::size_t cases_per_op);
SuiteResult model_gradients(std::uint64_t seed);
SuiteResult ctc_brute_force_suite(std::uint64_t seed, std::size_t n);
SuiteResult cpwer_suite(std::uint64_t seed, std::size_t n);
SuiteResult pit_suite(std::uint64_t seed, std::size_t n);

std::vector<SuiteResult> run_all(std::uint64_t seed);

// Plain Levenshtein distance (oracle for the aligner).
std::size_t levenshtein(const std::vector<int>& a, const std::vector<int>& b);

}  // namespace tsasr::selftest

#endif  // TSASR_SELFTEST_H_
