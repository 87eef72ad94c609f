#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

#include "nbeats/train.hpp"

namespace nbeats {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_lengths(std::span<const double> f, std::span<const double> y, std::span<const double> mask,
                   const char* op) {
  if (f.size() != y.size() || f.size() != mask.size()) {
    throw ShapeError(std::string(op) + ": forecast " + std::to_string(f.size()) + ", target " +
                     std::to_string(y.size()) + ", mask " + std::to_string(mask.size()));
  }
}

}  // namespace

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::Smape: return "SMAPE";
    case LossKind::Mape: return "MAPE";
    case LossKind::Mase: return "MASE";
  }
  return "?";
}

LossKind parse_loss(std::string_view text) {
  std::string lower(text);
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "smape") return LossKind::Smape;
  if (lower == "mape") return LossKind::Mape;
  if (lower == "mase") return LossKind::Mase;
  throw std::invalid_argument("unknown loss '" + std::string(text) + "'");
}

LossResult smape_loss(std::span<const double> forecast, std::span<const double> target,
                      std::span<const double> mask) {
  check_lengths(forecast, target, mask, "smape_loss");
  double weight = 0.0;
  for (double m : mask) weight += m;
  if (weight == 0.0) throw std::invalid_argument("smape_loss: every target position is masked");
  const double scale = 200.0 / weight;
  LossResult r{0.0, Vector(forecast.size())};
  for (std::size_t i = 0; i < forecast.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double denom = std::abs(target[i]) + std::abs(forecast[i]);
    if (denom == 0.0) continue;
    const double diff = target[i] - forecast[i];
    r.loss += mask[i] * std::abs(diff) / denom;
    // denominator treated as a constant
    r.grad[i] = -scale * mask[i] * sign(diff) / denom;
  }
  r.loss *= scale;
  return r;
}

LossResult mape_loss(std::span<const double> forecast, std::span<const double> target,
                     std::span<const double> mask) {
  check_lengths(forecast, target, mask, "mape_loss");
  double weight = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] != 0.0) weight += mask[i];
  }
  if (weight == 0.0) throw std::invalid_argument("mape_loss: no unmasked non-zero target positions");
  const double scale = 100.0 / weight;
  LossResult r{0.0, Vector(forecast.size())};
  for (std::size_t i = 0; i < forecast.size(); ++i) {
    if (mask[i] == 0.0 || target[i] == 0.0) continue;
    const double diff = target[i] - forecast[i];
    const double denom = std::abs(target[i]);
    r.loss += mask[i] * std::abs(diff) / denom;
    r.grad[i] = -scale * mask[i] * sign(diff) / denom;
  }
  r.loss *= scale;
  return r;
}

LossResult mase_loss(std::span<const double> forecast, std::span<const double> target,
                     std::span<const double> mask, std::span<const double> history, std::size_t m,
                     Diagnostics* diag) {
  check_lengths(forecast, target, mask, "mase_loss");
  LossResult r{0.0, Vector(forecast.size())};
  if (m < 1) throw std::invalid_argument("mase_loss: periodicity must be >= 1");
  if (history.size() < m + 1) {
    if (diag) ++diag->short_history;
    return r;
  }
  double scale = 0.0;
  for (std::size_t j = m; j < history.size(); ++j) scale += std::abs(history[j] - history[j - m]);
  scale /= static_cast<double>(history.size() - m);
  if (scale <= 1e-12) return r;
  double weight = 0.0;
  for (double v : mask) weight += v;
  if (weight == 0.0) throw std::invalid_argument("mase_loss: every target position is masked");
  const double k = 1.0 / (weight * scale);
  for (std::size_t i = 0; i < forecast.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double diff = target[i] - forecast[i];
    r.loss += mask[i] * std::abs(diff);
    r.grad[i] = -k * mask[i] * sign(diff);
  }
  r.loss *= k;
  return r;
}

double batch_loss(LossKind kind, const Matrix& forecast, const TrainBatch& batch, Matrix& grad, Diagnostics* diag) {
  const std::size_t n = batch.size();
  if (forecast.rows() != n || forecast.cols() != batch.targets.cols()) {
    throw ShapeError("batch_loss: forecast " + shape_string(forecast) + " vs targets " + shape_string(batch.targets));
  }
  grad = Matrix(n, forecast.cols());
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t b = 0; b < n; ++b) {
    const auto f = forecast.row(b);
    const auto y = batch.targets.row(b);
    const auto mask = batch.target_masks.row(b);
    LossResult r;
    switch (kind) {
      case LossKind::Smape: r = smape_loss(f, y, mask); break;
      case LossKind::Mape: r = mape_loss(f, y, mask); break;
      case LossKind::Mase: {
        // observed part of the input window
        const auto in = batch.inputs.row(b);
        const auto in_mask = batch.input_masks.row(b);
        std::size_t first = 0;
        while (first < in.size() && in_mask[first] == 0.0) ++first;
        r = mase_loss(f, y, mask, in.subspan(first), batch.periodicity[b], diag);
        break;
      }
    }
    total += r.loss;
    auto g = grad.row(b);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = r.grad[i] * inv_n;
  }
  return total * inv_n;
}

}  // namespace nbeats
