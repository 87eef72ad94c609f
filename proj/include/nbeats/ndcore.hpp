#pragma once

// Dense 64-bit kernel used by every N-BEATS layer: row-major matrices,
// the affine/ReLU operator pair with their adjoints, a portable seeded RNG
// and a central-difference gradient checker.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nbeats {

/// Raised for any shape disagreement between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t len, double fill = 0.0) : data_(len, fill) {}
  Vector(std::initializer_list<double> values) : data_(values) {}
  explicit Vector(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t len() const { return data_.size(); }
  std::size_t size() const { return data_.size(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  const std::vector<double>& values() const { return data_; }
  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  bool operator==(const Vector&) const = default;

 private:
  std::vector<double> data_;
};

/// Row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void fill(double v);
  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_string(const Matrix& m);

/// xoshiro256** seeded through splitmix64. The sequence depends only on the
/// seed, never on the platform or standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (no cached second value).
  double normal();

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
};

/// splitmix64 finalizer; used for stable seed derivation.
std::uint64_t mix64(std::uint64_t x);

// Single-sample kernels.
Vector affine_forward(const Matrix& w, const Vector& b, const Vector& x);

struct AffineGrads {
  Matrix grad_w;
  Vector grad_b;
  Vector grad_x;
};
AffineGrads affine_backward(const Matrix& w, const Vector& x, const Vector& grad_out);

Vector relu(const Vector& x);
Vector relu_backward(const Vector& x, const Vector& grad_out);

// Batched kernels: rows of X are samples. Y = X Wᵀ + 1 bᵀ.
Matrix affine_forward_batch(const Matrix& w, const Vector* b, const Matrix& x);
/// Accumulates into grad_w / grad_b (when non-null); returns grad wrt X
/// when want_grad_x is set, otherwise an empty matrix.
Matrix affine_backward_batch(const Matrix& w, const Matrix& x, const Matrix& grad_out,
                             Matrix& grad_w, Vector* grad_b, bool want_grad_x);
/// Y = X Bᵀ for a fixed basis B (rows = output length).
Matrix project_batch(const Matrix& basis, const Matrix& coeffs);
/// grad wrt coeffs of project_batch: G B.
Matrix project_backward_batch(const Matrix& basis, const Matrix& grad_out);
void relu_inplace(Matrix& x);
/// Zeroes grad entries where the post-activation output is not positive.
void relu_backward_inplace(const Matrix& activated, Matrix& grad);

// Gradient checking ---------------------------------------------------------

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  /// Denominator floor for the relative error.
  double abs_floor = 1e-8;
};

struct CoordCheck {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
  bool skipped = false;
};

struct GradCheckReport {
  std::vector<CoordCheck> coords;
  double max_rel_err = 0.0;
  std::size_t skipped = 0;
  bool passed = true;
  std::optional<std::string> failure;
};

/// relative error used throughout: |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

/// Central-difference check of `analytic` (gradient of f wrt params).
/// `f` is re-evaluated after each in-place perturbation of params. When
/// `smooth` is given and returns false for a perturbed point, that
/// coordinate is skipped (non-differentiable crossing). `indices` restricts
/// the checked coordinates; empty means all.
GradCheckReport grad_check(std::span<double> params, std::span<const double> analytic,
                           const std::function<double()>& f, const GradCheckOptions& opts,
                           const std::function<bool()>& smooth = {},
                           std::span<const std::size_t> indices = {});

}  // namespace nbeats
