// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Minimal define-by-run reverse-mode differentiation over dense double
// arrays. A Tape records every primitive applied during one forward pass;
// Tape::backward() replays the recorded rules in reverse.

#ifndef TSASR_AUTODIFF_H_
#define TSASR_AUTODIFF_H_

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsasr::ad {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense row-major array. Rank 0 is a scalar. Matrix views treat every
// leading axis as rows and the last axis as columns.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> values);

  static Array scalar(double v);
  static Array vector(std::vector<double> values);
  static Array matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::vector<double>& storage() noexcept { return values_; }
  const std::vector<double>& storage() const noexcept { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const {
    return values_[r * cols() + c];
  }

  void fill(double v);
  Array reshaped(Shape shape) const;

 private:
  Shape shape_;
  std::vector<double> values_;
};

// A trainable (or externally supplied) array with its gradient slot.
struct Parameter {
  std::string path;
  Array value;
  Array grad;
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string p, Array v);
  void zero_grad();
};

// Parameters keyed by a stable path; std::map keeps addresses stable and
// iteration path-sorted.
class ParameterStore {
 public:
  Parameter& add(const std::string& path, Array value);
  Parameter& get(const std::string& path);
  const Parameter& get(const std::string& path) const;
  bool has(const std::string& path) const { return params_.count(path) != 0; }
  std::size_t size() const { return params_.size(); }
  std::size_t num_values() const;
  void zero_grad();
  std::map<std::string, Parameter>& all() { return params_; }
  const std::map<std::string, Parameter>& all() const { return params_; }

 private:
  std::map<std::string, Parameter> params_;
};

class Tape;

// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;

  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  bool valid() const noexcept { return tape_ != nullptr; }
  int id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Arguments handed to a recorded backward rule. in_grads[i] is null when
// input i does not require a gradient.
struct BackwardArgs {
  const Array& out_value;
  const Array& out_grad;
  std::span<const Array* const> in_values;
  std::span<Array* const> in_grads;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Array value);
  // Leaf that receives a gradient but is not bound to a Parameter.
  Var input(Array value);
  // Leaf bound to p; backward() accumulates into p.grad unless p is frozen.
  Var parameter(Parameter& p);
  Var record(Array value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Array value, std::span<const Var> inputs, BackwardFn fn);

  // Requires a single-element loss recorded on this tape. Node gradients are
  // recomputed from scratch; bound parameter gradients accumulate unless
  // accumulation was switched off, in which case the caller collects them
  // through parameter_grads() (used for per-worker tapes).
  void backward(Var loss);
  void set_accumulate_params(bool on) { accumulate_params_ = on; }
  std::vector<std::pair<Parameter*, const Array*>> parameter_grads() const;

  const Array& value(Var v) const;
  // Gradient of a node after backward(); empty when it was never reached.
  const Array& grad(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Array value;
    Array grad;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  void check_owned(Var v) const;

  std::deque<Node> nodes_;  // deque: node references stay valid on growth
  bool accumulate_params_ = true;
};

// Binds store parameters onto a tape once per path.
class Binder {
 public:
  Binder(Tape& tape, ParameterStore& store) : tape_(tape), store_(store) {}
  Var operator()(const std::string& path);
  Tape& tape() { return tape_; }
  ParameterStore& store() { return store_; }

 private:
  Tape& tape_;
  ParameterStore& store_;
  std::map<std::string, Var> bound_;
};

// ---- primitives -----------------------------------------------------------
// Rank-1 arrays act as 1 x n rows. Every primitive validates shapes and
// throws ShapeError naming the offending shapes.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var reshape(Var a, Shape shape);
// x[r, :] + v and x[r, :] * v for every row r; v.size() == x.cols().
Var add_row(Var x, Var v);
Var mul_row(Var x, Var v);
// x[r, :] - c[r] and x[r, :] / c[r]; c holds one value per row.
Var sub_col(Var x, Var c);
Var div_col(Var x, Var c);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var slice_rows(Var x, std::size_t begin, std::size_t end);
// Valid 1-D convolution over rows (time). x: L x Cin,
// weight: (kernel * Cin) x Cout with tap-major rows, bias: Cout.
// Output rows = (L - kernel) / stride + 1.
Var conv1d(Var x, Var weight, Var bias, std::size_t kernel,
           std::size_t stride);
Var gelu(Var x);
Var softmax_rows(Var x);
Var log_softmax_rows(Var x);
// Per-row mean and population standard deviation sqrt(var + eps).
Var row_mean(Var x);
Var row_std(Var x, double eps);
Var sum(Var x);
Var log_sum_exp(Var x);

// ---- verification --------------------------------------------------------

struct GradCheckOptions {
  double eps = 1e-5;
  // 0 checks every coordinate; otherwise an evenly spaced subset per array.
  std::size_t max_coords_per_param = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_coordinate;
  std::size_t coordinates_checked = 0;
};

// Compares backward() against central differences for every coordinate of
// params. Relative error is |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const std::function<Var(Tape&)>& f,
                           std::span<Parameter* const> params,
                           const GradCheckOptions& options = {});

}  // namespace tsasr::ad

#endif  // TSASR_AUTODIFF_H_
