// Copyright 2026 The tsasr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "tsasr/autodiff.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace tsasr::ad {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

[[noreturn]] void fail(const std::string& op, const std::string& what,
                       const Shape& a) {
  throw ShapeError(op + ": " + what + " (shape " + shape_string(a) + ")");
}

[[noreturn]] void fail(const std::string& op, const std::string& what,
                       const Shape& a, const Shape& b) {
  throw ShapeError(op + ": " + what + " (shapes " + shape_string(a) + " and " +
                   shape_string(b) + ")");
}

void check_nonzero(const std::string& op, const Shape& shape) {
  for (auto d : shape)
    if (d == 0) fail(op, "zero-size axis", shape);
}

// C[m x n] += A[m x k] * B[k x n] with row strides lda, ldb, ldc.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double* c,
             std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * ldc;
    const double* ai = a + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n].
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double* c,
             std::size_t ldc) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * lda;
    const double* bp = b + p * ldb;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = ap[i];
      double* ci = c + i * ldc;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double* c,
             std::size_t ldc) {
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * ldb + p];
  gemm_nn(m, n, k, a, lda, bt.data(), n, c, ldc);
}

Shape matrix_shape(std::size_t r, std::size_t c) { return {r, c}; }

}  // namespace

// ---- Array ----------------------------------------------------------------

Array::Array(Shape shape, double fill)
    : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

Array::Array(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != shape_size(shape_))
    throw ShapeError("Array: " + std::to_string(values_.size()) +
                     " values do not fill shape " + shape_string(shape_));
}

Array Array::scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }

Array Array::vector(std::vector<double> values) {
  Shape s{values.size()};
  return Array(std::move(s), std::move(values));
}

Array Array::matrix(std::size_t rows, std::size_t cols,
                    std::vector<double> values) {
  return Array(Shape{rows, cols}, std::move(values));
}

std::size_t Array::cols() const {
  return shape_.empty() ? 1 : shape_.back();
}

std::size_t Array::rows() const {
  const std::size_t c = cols();
  return c == 0 ? 0 : values_.size() / c;
}

void Array::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

Array Array::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size())
    fail("reshape", "element count differs", shape_, shape);
  return Array(std::move(shape), values_);
}

Parameter::Parameter(std::string p, Array v)
    : path(std::move(p)), value(std::move(v)), grad(value.shape()) {}

void Parameter::zero_grad() {
  if (grad.shape() != value.shape())
    grad = Array(value.shape());
  else
    grad.fill(0.0);
}

Parameter& ParameterStore::add(const std::string& path, Array value) {
  auto [it, inserted] = params_.try_emplace(path, path, std::move(value));
  if (!inserted) throw std::logic_error("duplicate parameter path " + path);
  return it->second;
}

Parameter& ParameterStore::get(const std::string& path) {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::out_of_range("no parameter " + path);
  return it->second;
}

const Parameter& ParameterStore::get(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::out_of_range("no parameter " + path);
  return it->second;
}

std::size_t ParameterStore::num_values() const {
  std::size_t n = 0;
  for (const auto& [k, p] : params_) n += p.value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [k, p] : params_) p.zero_grad();
}

Var Binder::operator()(const std::string& path) {
  auto it = bound_.find(path);
  if (it != bound_.end()) return it->second;
  Var v = tape_.parameter(store_.get(path));
  bound_.emplace(path, v);
  return v;
}

// ---- Var / Tape -----------------------------------------------------------

const Array& Var::value() const {
  if (!tape_) throw std::logic_error("Var: use of an unbound variable");
  return tape_->value(*this);
}

bool Var::requires_grad() const {
  return tape_ != nullptr && tape_->requires_grad(*this);
}

void Tape::check_owned(Var v) const {
  if (v.tape_ != this || v.id_ < 0 ||
      static_cast<std::size_t>(v.id_) >= nodes_.size())
    throw std::logic_error("Tape: variable belongs to a different tape");
}

Var Tape::constant(Array value) {
  check_nonzero("constant", value.shape());
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::input(Array value) {
  check_nonzero("input", value.shape());
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::parameter(Parameter& p) {
  check_nonzero("parameter " + p.path, p.value.shape());
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = !p.frozen;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Array value, std::initializer_list<Var> inputs,
                 BackwardFn fn) {
  return record(std::move(value),
                std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(Array value, std::span<const Var> inputs, BackwardFn fn) {
  check_nonzero("record", value.shape());
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    check_owned(v);
    n.inputs.push_back(v.id_);
    if (nodes_[v.id_].requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Array& Tape::value(Var v) const {
  check_owned(v);
  return nodes_[v.id_].value;
}

const Array& Tape::grad(Var v) const {
  check_owned(v);
  return nodes_[v.id_].grad;
}

bool Tape::requires_grad(Var v) const {
  check_owned(v);
  return nodes_[v.id_].requires_grad;
}

void Tape::backward(Var loss) {
  check_owned(loss);
  if (nodes_[loss.id_].value.size() != 1)
    fail("backward", "loss must have exactly one element",
         nodes_[loss.id_].value.shape());
  for (auto& n : nodes_) n.grad = Array();
  if (!nodes_[loss.id_].requires_grad) return;
  nodes_[loss.id_].grad = Array(nodes_[loss.id_].value.shape(), 1.0);

  std::vector<const Array*> in_values;
  std::vector<Array*> in_grads;
  for (int i = loss.id_; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.backward) continue;
    in_values.clear();
    in_grads.clear();
    for (int j : n.inputs) {
      Node& in = nodes_[j];
      in_values.push_back(&in.value);
      if (in.requires_grad) {
        if (in.grad.empty()) in.grad = Array(in.value.shape());
        in_grads.push_back(&in.grad);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    n.backward(BackwardArgs{n.value, n.grad, in_values, in_grads});
  }
  if (!accumulate_params_) return;
  for (auto& n : nodes_) {
    if (!n.param || n.param->frozen || n.grad.empty()) continue;
    Parameter& p = *n.param;
    if (p.grad.shape() != p.value.shape()) p.grad = Array(p.value.shape());
    for (std::size_t k = 0; k < p.grad.size(); ++k) p.grad[k] += n.grad[k];
  }
}

std::vector<std::pair<Parameter*, const Array*>> Tape::parameter_grads()
    const {
  std::vector<std::pair<Parameter*, const Array*>> out;
  for (const auto& n : nodes_)
    if (n.param && !n.param->frozen && !n.grad.empty())
      out.emplace_back(n.param, &n.grad);
  return out;
}

// ---- primitives -----------------------------------------------------------

namespace {

Tape& same_tape(const std::string& op, Var a, Var b) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape())
    throw std::logic_error(op + ": operands are not on the same tape");
  return *a.tape();
}

Tape& tape_of(const std::string& op, Var a) {
  if (!a.valid()) throw std::logic_error(op + ": unbound operand");
  return *a.tape();
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape("matmul", a, b);
  const Array& av = a.value();
  const Array& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) fail("matmul", "inner dimensions differ", av.shape(),
                           bv.shape());
  Array out(matrix_shape(m, n));
  gemm_nn(m, n, k, av.data(), k, bv.data(), n, out.data(), n);
  return t.record(std::move(out), {a, b}, [m, n, k](const BackwardArgs& g) {
    const Array& A = *g.in_values[0];
    const Array& B = *g.in_values[1];
    if (g.in_grads[0])
      gemm_nt(m, k, n, g.out_grad.data(), n, B.data(), n,
              g.in_grads[0]->data(), k);
    if (g.in_grads[1])
      gemm_tn(k, n, m, A.data(), k, g.out_grad.data(), n,
              g.in_grads[1]->data(), n);
  });
}

Var transpose(Var a) {
  Tape& t = tape_of("transpose", a);
  const Array& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Array out(matrix_shape(c, r));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return t.record(std::move(out), {a}, [r, c](const BackwardArgs& g) {
    Array& ga = *g.in_grads[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g.out_grad[j * r + i];
  });
}

namespace {

enum class Elem { kAdd, kSub, kMul };

Var elementwise(const char* name, Elem kind, Var a, Var b) {
  Tape& t = same_tape(name, a, b);
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.shape() != bv.shape())
    fail(name, "shapes must match", av.shape(), bv.shape());
  Array out(av.shape());
  const std::size_t n = av.size();
  for (std::size_t i = 0; i < n; ++i) {
    switch (kind) {
      case Elem::kAdd: out[i] = av[i] + bv[i]; break;
      case Elem::kSub: out[i] = av[i] - bv[i]; break;
      case Elem::kMul: out[i] = av[i] * bv[i]; break;
    }
  }
  return t.record(std::move(out), {a, b}, [kind, n](const BackwardArgs& g) {
    const Array& go = g.out_grad;
    Array* ga = g.in_grads[0];
    Array* gb = g.in_grads[1];
    if (kind == Elem::kMul) {
      const Array& A = *g.in_values[0];
      const Array& B = *g.in_values[1];
      if (ga) for (std::size_t i = 0; i < n; ++i) (*ga)[i] += go[i] * B[i];
      if (gb) for (std::size_t i = 0; i < n; ++i) (*gb)[i] += go[i] * A[i];
      return;
    }
    const double sb = kind == Elem::kSub ? -1.0 : 1.0;
    if (ga) for (std::size_t i = 0; i < n; ++i) (*ga)[i] += go[i];
    if (gb) for (std::size_t i = 0; i < n; ++i) (*gb)[i] += sb * go[i];
  });
}

}  // namespace

Var add(Var a, Var b) { return elementwise("add", Elem::kAdd, a, b); }
Var sub(Var a, Var b) { return elementwise("sub", Elem::kSub, a, b); }
Var mul(Var a, Var b) { return elementwise("mul", Elem::kMul, a, b); }

Var scale(Var a, double s) {
  Tape& t = tape_of("scale", a);
  Array out = a.value();
  for (auto& v : out.values()) v *= s;
  return t.record(std::move(out), {a}, [s](const BackwardArgs& g) {
    Array& ga = *g.in_grads[0];
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * g.out_grad[i];
  });
}

Var reshape(Var a, Shape shape) {
  Tape& t = tape_of("reshape", a);
  Array out = a.value().reshaped(std::move(shape));
  return t.record(std::move(out), {a}, [](const BackwardArgs& g) {
    Array& ga = *g.in_grads[0];
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g.out_grad[i];
  });
}

Var add_row(Var x, Var v) {
  Tape& t = same_tape("add_row", x, v);
  const Array& xv = x.value();
  const Array& vv = v.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (vv.size() != c)
    fail("add_row", "row vector length must equal column count", xv.shape(),
         vv.shape());
  Array out(xv.shape());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] + vv[j];
  return t.record(std::move(out), {x, v}, [r, c](const BackwardArgs& g) {
    if (Array* gx = g.in_grads[0])
      for (std::size_t i = 0; i < r * c; ++i) (*gx)[i] += g.out_grad[i];
    if (Array* gv = g.in_grads[1])
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gv)[j] += g.out_grad[i * c + j];
  });
}

Var mul_row(Var x, Var v) {
  Tape& t = same_tape("mul_row", x, v);
  const Array& xv = x.value();
  const Array& vv = v.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (vv.size() != c)
    fail("mul_row", "row vector length must equal column count", xv.shape(),
         vv.shape());
  Array out(xv.shape());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] * vv[j];
  return t.record(std::move(out), {x, v}, [r, c](const BackwardArgs& g) {
    const Array& X = *g.in_values[0];
    const Array& V = *g.in_values[1];
    if (Array* gx = g.in_grads[0])
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
          (*gx)[i * c + j] += g.out_grad[i * c + j] * V[j];
    if (Array* gv = g.in_grads[1])
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
          (*gv)[j] += g.out_grad[i * c + j] * X[i * c + j];
  });
}

Var sub_col(Var x, Var cvar) {
  Tape& t = same_tape("sub_col", x, cvar);
  const Array& xv = x.value();
  const Array& cv = cvar.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (cv.size() != r)
    fail("sub_col", "column vector length must equal row count", xv.shape(),
         cv.shape());
  Array out(xv.shape());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] - cv[i];
  return t.record(std::move(out), {x, cvar}, [r, c](const BackwardArgs& g) {
    if (Array* gx = g.in_grads[0])
      for (std::size_t i = 0; i < r * c; ++i) (*gx)[i] += g.out_grad[i];
    if (Array* gc = g.in_grads[1])
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gc)[i] -= g.out_grad[i * c + j];
  });
}

Var div_col(Var x, Var cvar) {
  Tape& t = same_tape("div_col", x, cvar);
  const Array& xv = x.value();
  const Array& cv = cvar.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (cv.size() != r)
    fail("div_col", "column vector length must equal row count", xv.shape(),
         cv.shape());
  Array out(xv.shape());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] / cv[i];
  return t.record(std::move(out), {x, cvar}, [r, c](const BackwardArgs& g) {
    const Array& C = *g.in_values[1];
    const Array& Y = g.out_value;
    if (Array* gx = g.in_grads[0])
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
          (*gx)[i * c + j] += g.out_grad[i * c + j] / C[i];
    if (Array* gc = g.in_grads[1])
      for (std::size_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j)
          acc += g.out_grad[i * c + j] * Y[i * c + j];
        (*gc)[i] -= acc / C[i];
      }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  Tape& t = tape_of("concat_cols", parts[0]);
  const std::size_t r = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t)
      throw std::logic_error("concat_cols: operands are not on the same tape");
    if (p.value().rows() != r)
      fail("concat_cols", "row counts differ", parts[0].shape(), p.shape());
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Array out(matrix_shape(r, total));
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Array& pv = parts[k].value();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(pv.data() + i * widths[k], widths[k],
                  out.data() + i * total + off);
    off += widths[k];
  }
  return t.record(std::move(out), parts,
                  [r, total, widths](const BackwardArgs& g) {
                    std::size_t off = 0;
                    for (std::size_t k = 0; k < widths.size(); ++k) {
                      if (Array* gp = g.in_grads[k])
                        for (std::size_t i = 0; i < r; ++i)
                          for (std::size_t j = 0; j < widths[k]; ++j)
                            (*gp)[i * widths[k] + j] +=
                                g.out_grad[i * total + off + j];
                      off += widths[k];
                    }
                  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  Tape& t = tape_of("slice_cols", x);
  const Array& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (begin >= end || end > c)
    fail("slice_cols",
         "bad column range [" + std::to_string(begin) + ", " +
             std::to_string(end) + ")",
         xv.shape());
  const std::size_t w = end - begin;
  Array out(matrix_shape(r, w));
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(xv.data() + i * c + begin, w, out.data() + i * w);
  return t.record(std::move(out), {x}, [r, c, w, begin](const BackwardArgs& g) {
    Array& gx = *g.in_grads[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j)
        gx[i * c + begin + j] += g.out_grad[i * w + j];
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  Tape& t = tape_of("slice_rows", x);
  const Array& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (begin >= end || end > r)
    fail("slice_rows",
         "bad row range [" + std::to_string(begin) + ", " +
             std::to_string(end) + ")",
         xv.shape());
  Array out(matrix_shape(end - begin, c));
  std::copy(xv.data() + begin * c, xv.data() + end * c, out.data());
  return t.record(std::move(out), {x}, [c, begin](const BackwardArgs& g) {
    Array& gx = *g.in_grads[0];
    for (std::size_t i = 0; i < g.out_grad.size(); ++i)
      gx[begin * c + i] += g.out_grad[i];
  });
}

Var conv1d(Var x, Var weight, Var bias, std::size_t kernel,
           std::size_t stride) {
  Tape& t = same_tape("conv1d", x, weight);
  if (bias.tape() != &t)
    throw std::logic_error("conv1d: operands are not on the same tape");
  const Array& xv = x.value();
  const Array& wv = weight.value();
  const Array& bv = bias.value();
  const std::size_t len = xv.rows(), cin = xv.cols(), cout = wv.cols();
  if (kernel == 0 || stride == 0)
    throw ShapeError("conv1d: kernel and stride must be positive");
  if (wv.rows() != kernel * cin)
    fail("conv1d", "weight rows must equal kernel * input channels",
         xv.shape(), wv.shape());
  if (bv.size() != cout)
    fail("conv1d", "bias length must equal output channels", wv.shape(),
         bv.shape());
  if (len < kernel)
    fail("conv1d",
         "input shorter than kernel " + std::to_string(kernel), xv.shape());
  const std::size_t frames = (len - kernel) / stride + 1;
  const std::size_t kc = kernel * cin, ld = stride * cin;
  Array out(matrix_shape(frames, cout));
  for (std::size_t i = 0; i < frames; ++i)
    std::copy_n(bv.data(), cout, out.data() + i * cout);
  // Row i of the im2col matrix is the contiguous block starting at i * ld.
  gemm_nn(frames, cout, kc, xv.data(), ld, wv.data(), cout, out.data(), cout);
  return t.record(
      std::move(out), {x, weight, bias},
      [frames, cout, kc, ld](const BackwardArgs& g) {
        const Array& X = *g.in_values[0];
        const Array& W = *g.in_values[1];
        if (Array* gx = g.in_grads[0])
          gemm_nt(frames, kc, cout, g.out_grad.data(), cout, W.data(), cout,
                  gx->data(), ld);
        if (Array* gw = g.in_grads[1])
          gemm_tn(kc, cout, frames, X.data(), ld, g.out_grad.data(), cout,
                  gw->data(), cout);
        if (Array* gb = g.in_grads[2])
          for (std::size_t i = 0; i < frames; ++i)
            for (std::size_t j = 0; j < cout; ++j)
              (*gb)[j] += g.out_grad[i * cout + j];
      });
}

Var gelu(Var x) {
  Tape& t = tape_of("gelu", x);
  const Array& xv = x.value();
  Array out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i)
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * M_SQRT1_2));
  return t.record(std::move(out), {x}, [](const BackwardArgs& g) {
    const Array& X = *g.in_values[0];
    Array& gx = *g.in_grads[0];
    const double inv_sqrt_2pi = 0.5 * M_2_SQRTPI * M_SQRT1_2;
    for (std::size_t i = 0; i < X.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(X[i] * M_SQRT1_2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * X[i] * X[i]);
      gx[i] += g.out_grad[i] * (cdf + X[i] * pdf);
    }
  });
}

Var softmax_rows(Var x) {
  Tape& t = tape_of("softmax_rows", x);
  const Array& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  Array out(xv.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = xv.data() + i * c;
    double* yi = out.data() + i * c;
    const double mx = *std::max_element(xi, xi + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (yi[j] = std::exp(xi[j] - mx));
    for (std::size_t j = 0; j < c; ++j) yi[j] /= z;
  }
  return t.record(std::move(out), {x}, [r, c](const BackwardArgs& g) {
    const Array& Y = g.out_value;
    Array& gx = *g.in_grads[0];
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j)
        dot += g.out_grad[i * c + j] * Y[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        gx[i * c + j] += Y[i * c + j] * (g.out_grad[i * c + j] - dot);
    }
  });
}

Var log_softmax_rows(Var x) {
  Tape& t = tape_of("log_softmax_rows", x);
  const Array& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  Array out(xv.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = xv.data() + i * c;
    const double mx = *std::max_element(xi, xi + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(xi[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xi[j] - lse;
  }
  return t.record(std::move(out), {x}, [r, c](const BackwardArgs& g) {
    const Array& Y = g.out_value;
    Array& gx = *g.in_grads[0];
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += g.out_grad[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        gx[i * c + j] += g.out_grad[i * c + j] - std::exp(Y[i * c + j]) * s;
    }
  });
}

Var row_mean(Var x) {
  Tape& t = tape_of("row_mean", x);
  const Array& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  Array out(Shape{r});
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += xv[i * c + j];
    out[i] = s / static_cast<double>(c);
  }
  return t.record(std::move(out), {x}, [r, c](const BackwardArgs& g) {
    Array& gx = *g.in_grads[0];
    for (std::size_t i = 0; i < r; ++i) {
      const double d = g.out_grad[i] / static_cast<double>(c);
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += d;
    }
  });
}

Var row_std(Var x, double eps) {
  Tape& t = tape_of("row_std", x);
  const Array& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  Array out(Shape{r});
  std::vector<double> means(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += xv[i * c + j];
    const double mu = s / static_cast<double>(c);
    double v = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xv[i * c + j] - mu;
      v += d * d;
    }
    means[i] = mu;
    out[i] = std::sqrt(v / static_cast<double>(c) + eps);
  }
  return t.record(std::move(out), {x},
                  [r, c, means = std::move(means)](const BackwardArgs& g) {
                    const Array& X = *g.in_values[0];
                    Array& gx = *g.in_grads[0];
                    for (std::size_t i = 0; i < r; ++i) {
                      const double f = g.out_grad[i] /
                                       (static_cast<double>(c) * g.out_value[i]);
                      for (std::size_t j = 0; j < c; ++j)
                        gx[i * c + j] += f * (X[i * c + j] - means[i]);
                    }
                  });
}

Var sum(Var x) {
  Tape& t = tape_of("sum", x);
  const Array& xv = x.value();
  const double s = std::accumulate(xv.values().begin(), xv.values().end(), 0.0);
  return t.record(Array::scalar(s), {x}, [](const BackwardArgs& g) {
    Array& gx = *g.in_grads[0];
    const double d = g.out_grad[0];
    for (auto& v : gx.values()) v += d;
  });
}

Var log_sum_exp(Var x) {
  Tape& t = tape_of("log_sum_exp", x);
  const Array& xv = x.value();
  const double mx = *std::max_element(xv.values().begin(), xv.values().end());
  double z = 0.0;
  for (double v : xv.values()) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  return t.record(Array::scalar(lse), {x}, [](const BackwardArgs& g) {
    const Array& X = *g.in_values[0];
    Array& gx = *g.in_grads[0];
    const double l = g.out_value[0], d = g.out_grad[0];
    for (std::size_t i = 0; i < X.size(); ++i) gx[i] += d * std::exp(X[i] - l);
  });
}

// ---- grad check -----------------------------------------------------------

GradCheckResult grad_check(const std::function<Var(Tape&)>& f,
                           std::span<Parameter* const> params,
                           const GradCheckOptions& options) {
  if (!(options.eps > 0.0 && options.eps <= 1e-3))
    throw std::invalid_argument("grad_check: step must be in (0, 1e-3]");
  // Unfreezes for the duration of the check and restores on every exit.
  struct Restore {
    std::span<Parameter* const> params;
    std::vector<bool> frozen;
    Parameter* perturbed = nullptr;
    std::size_t index = 0;
    double orig = 0.0;
    ~Restore() {
      if (perturbed) perturbed->value[index] = orig;
      for (std::size_t i = 0; i < params.size(); ++i)
        params[i]->frozen = frozen[i];
    }
  } restore{params, {}};
  for (Parameter* p : params) {
    restore.frozen.push_back(p->frozen);
    p->frozen = false;
    p->zero_grad();
  }
  auto eval = [&](const std::string& where) {
    Tape t;
    Var y = f(t);
    const double v = y.value()[0];
    if (!std::isfinite(v))
      throw std::domain_error("grad_check: f is not finite (" +
                              std::to_string(v) + ") at " + where);
    return v;
  };
  {
    Tape t;
    Var y = f(t);
    if (!std::isfinite(y.value()[0]))
      throw std::domain_error("grad_check: f is not finite at the base point");
    t.backward(y);
  }
  GradCheckResult res;
  for (Parameter* p : params) {
    const std::size_t n = p->value.size();
    std::size_t step = 1;
    if (options.max_coords_per_param > 0 && n > options.max_coords_per_param)
      step = (n + options.max_coords_per_param - 1) /
             options.max_coords_per_param;
    for (std::size_t k = 0; k < n; k += step) {
      const double orig = p->value[k];
      restore.perturbed = p;
      restore.index = k;
      restore.orig = orig;
      const std::string where = p->path + "[" + std::to_string(k) + "]";
      p->value[k] = orig + options.eps;
      const double up = eval(where + " + eps");
      p->value[k] = orig - options.eps;
      const double down = eval(where + " - eps");
      p->value[k] = orig;
      restore.perturbed = nullptr;
      const double num = (up - down) / (2.0 * options.eps);
      const double ana = p->grad[k];
      const double rel = std::abs(ana - num) /
                         std::max({std::abs(ana), std::abs(num), 1e-8});
      ++res.coordinates_checked;
      if (!(rel <= res.max_rel_error)) {
        res.max_rel_error = rel;
        std::ostringstream os;
        os << p->path << '[' << k << "] analytic=" << ana
           << " numeric=" << num;
        res.worst_coordinate = os.str();
      }
    }
  }
  return res;
}

}  // namespace tsasr::ad
