#include "nbeats/ndcore.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace nbeats {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;

CMapMat view(const Matrix& m) { return CMapMat(m.data(), m.rows(), m.cols()); }
MapMat view(Matrix& m) { return MapMat(m.data(), m.rows(), m.cols()); }
CMapVec view(const Vector& v) { return CMapVec(v.data(), static_cast<Eigen::Index>(v.len())); }
MapVec view(Vector& v) { return MapVec(v.data(), static_cast<Eigen::Index>(v.len())); }

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": shape mismatch, " + detail);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    shape_fail("Matrix", "data length " + std::to_string(data_.size()) + " for " +
                             std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) shape_fail("Matrix", "ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string shape_string(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// --- Rng ---------------------------------------------------------------------

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t z = seed;
  for (auto& s : s_) {
    z += 0x9E3779B97F4A7C15ULL;
    std::uint64_t v = z;
    v = (v ^ (v >> 30)) * 0xBF58476D1CE4E5B9ULL;
    v = (v ^ (v >> 27)) * 0x94D049BB133111EBULL;
    s = v ^ (v >> 31);
  }
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
  // rejection keeps the draw unbiased
  const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// --- single-sample kernels ---------------------------------------------------

Vector affine_forward(const Matrix& w, const Vector& b, const Vector& x) {
  if (w.cols() != x.len() || w.rows() != b.len()) {
    shape_fail("affine_forward", "W " + shape_string(w) + ", b " + std::to_string(b.len()) +
                                     ", x " + std::to_string(x.len()));
  }
  Vector y(w.rows());
  view(y) = view(w) * view(x) + view(b);
  return y;
}

AffineGrads affine_backward(const Matrix& w, const Vector& x, const Vector& grad_out) {
  if (w.cols() != x.len() || w.rows() != grad_out.len()) {
    shape_fail("affine_backward", "W " + shape_string(w) + ", x " + std::to_string(x.len()) +
                                      ", grad_out " + std::to_string(grad_out.len()));
  }
  AffineGrads g{Matrix(w.rows(), w.cols()), grad_out, Vector(w.cols())};
  view(g.grad_w) = view(grad_out) * view(x).transpose();
  view(g.grad_x) = view(w).transpose() * view(grad_out);
  return g;
}

Vector relu(const Vector& x) {
  Vector y(x.len());
  for (std::size_t i = 0; i < x.len(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Vector relu_backward(const Vector& x, const Vector& grad_out) {
  if (x.len() != grad_out.len()) {
    shape_fail("relu_backward",
               "x " + std::to_string(x.len()) + ", grad_out " + std::to_string(grad_out.len()));
  }
  Vector g(x.len());
  for (std::size_t i = 0; i < x.len(); ++i) g[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
  return g;
}

// --- batched kernels ---------------------------------------------------------

Matrix affine_forward_batch(const Matrix& w, const Vector* b, const Matrix& x) {
  if (w.cols() != x.cols() || (b != nullptr && b->len() != w.rows())) {
    shape_fail("affine_forward_batch", "W " + shape_string(w) + ", X " + shape_string(x) +
                                           (b ? ", b " + std::to_string(b->len()) : ""));
  }
  Matrix y(x.rows(), w.rows());
  auto yv = view(y);
  yv.noalias() = view(x) * view(w).transpose();
  if (b != nullptr) yv.rowwise() += view(*b).transpose();
  return y;
}

Matrix affine_backward_batch(const Matrix& w, const Matrix& x, const Matrix& grad_out,
                             Matrix& grad_w, Vector* grad_b, bool want_grad_x) {
  if (w.cols() != x.cols() || grad_out.cols() != w.rows() || grad_out.rows() != x.rows() ||
      grad_w.rows() != w.rows() || grad_w.cols() != w.cols()) {
    shape_fail("affine_backward_batch", "W " + shape_string(w) + ", X " + shape_string(x) +
                                            ", G " + shape_string(grad_out));
  }
  view(grad_w).noalias() += view(grad_out).transpose() * view(x);
  if (grad_b != nullptr) view(*grad_b) += view(grad_out).colwise().sum().transpose();
  if (!want_grad_x) return {};
  Matrix gx(x.rows(), x.cols());
  view(gx).noalias() = view(grad_out) * view(w);
  return gx;
}

Matrix project_batch(const Matrix& basis, const Matrix& coeffs) {
  if (basis.cols() != coeffs.cols()) {
    shape_fail("project_batch", "basis " + shape_string(basis) + ", coeffs " + shape_string(coeffs));
  }
  Matrix y(coeffs.rows(), basis.rows());
  view(y).noalias() = view(coeffs) * view(basis).transpose();
  return y;
}

Matrix project_backward_batch(const Matrix& basis, const Matrix& grad_out) {
  if (basis.rows() != grad_out.cols()) {
    shape_fail("project_backward_batch",
               "basis " + shape_string(basis) + ", G " + shape_string(grad_out));
  }
  Matrix g(grad_out.rows(), basis.cols());
  view(g).noalias() = view(grad_out) * view(basis);
  return g;
}

void relu_inplace(Matrix& x) {
  for (double& v : x.span()) v = v > 0.0 ? v : 0.0;
}

void relu_backward_inplace(const Matrix& activated, Matrix& grad) {
  if (activated.rows() != grad.rows() || activated.cols() != grad.cols()) {
    shape_fail("relu_backward_inplace", shape_string(activated) + " vs " + shape_string(grad));
  }
  const auto a = activated.span();
  auto g = grad.span();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(a[i] > 0.0)) g[i] = 0.0;
  }
}

// --- gradient check ----------------------------------------------------------

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(std::span<double> params, std::span<const double> analytic,
                           const std::function<double()>& f, const GradCheckOptions& opts,
                           const std::function<bool()>& smooth,
                           std::span<const std::size_t> indices) {
  if (params.size() != analytic.size()) {
    shape_fail("grad_check", "params " + std::to_string(params.size()) + ", analytic " +
                                 std::to_string(analytic.size()));
  }
  std::vector<std::size_t> all;
  if (indices.empty()) {
    all.resize(params.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    indices = all;
  }

  GradCheckReport report;
  report.coords.reserve(indices.size());
  for (std::size_t idx : indices) {
    if (idx >= params.size()) throw std::out_of_range("grad_check: coordinate out of range");
    const double saved = params[idx];
    CoordCheck c;
    c.index = idx;
    c.analytic = analytic[idx];

    params[idx] = saved + opts.step;
    const double f_plus = f();
    const bool smooth_plus = !smooth || smooth();
    params[idx] = saved - opts.step;
    const double f_minus = f();
    const bool smooth_minus = !smooth || smooth();
    params[idx] = saved;

    if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
      report.passed = false;
      report.failure = "non-finite objective at coordinate " + std::to_string(idx);
      report.coords.push_back(c);
      return report;
    }
    c.numeric = (f_plus - f_minus) / (2.0 * opts.step);
    if (!smooth_plus || !smooth_minus) {
      c.skipped = true;
      ++report.skipped;
    } else {
      c.rel_err = relative_error(c.analytic, c.numeric, opts.abs_floor);
      report.max_rel_err = std::max(report.max_rel_err, c.rel_err);
    }
    report.coords.push_back(c);
  }
  report.passed = report.max_rel_err <= opts.tolerance;
  if (!report.passed) {
    for (const auto& c : report.coords) {
      if (!c.skipped && c.rel_err == report.max_rel_err) {
        std::ostringstream os;
        os << "coordinate " << c.index << ": analytic " << c.analytic << " vs numeric "
           << c.numeric << " (rel " << c.rel_err << ")";
        report.failure = os.str();
        break;
      }
    }
  }
  return report;
}

}  // namespace nbeats
