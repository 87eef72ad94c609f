#pragma once

// N-BEATS network: fully connected blocks that emit basis expansion
// coefficients, arranged into stacks and wired by one of six topologies.
// All computation is batched: rows of an input matrix are samples.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nbeats/ndcore.hpp"

namespace nbeats {

enum class BasisKind { Generic, Trend, Seasonality };

enum class Topology {
  Dress,
  Parallel,
  NoResidual,
  LastForward,
  NoResidualLastForward,
  ResidualInput,
};

std::string_view to_string(BasisKind kind);
std::string_view to_string(Topology topology);
BasisKind parse_basis_kind(std::string_view text);
/// Accepts the upper-case names with either '-' or '_' separators.
Topology parse_topology(std::string_view text);
const std::vector<Topology>& all_topologies();

struct BasisSpec {
  BasisKind kind = BasisKind::Generic;
  int degree = 0;  // trend only
  std::size_t backcast_len = 1;
  std::size_t forecast_len = 1;

  bool operator==(const BasisSpec&) const = default;
};

/// Number of Fourier columns for a grid of `len` points: 2*floor(len/2 - 1) + 1.
std::size_t fourier_dim(std::size_t len);

struct BlockConfig {
  std::size_t width = 512;
  std::size_t fc_layers = 4;
  BasisSpec basis;
  std::size_t theta_f_dim = 0;
  std::size_t theta_b_dim = 0;

  bool operator==(const BlockConfig&) const = default;
};

struct StackConfig {
  std::size_t blocks = 1;
  BlockConfig block;
  bool share_weights = false;

  bool operator==(const StackConfig&) const = default;
};

struct ModelConfig {
  std::vector<StackConfig> stacks;
  Topology topology = Topology::Dress;
  std::size_t lookback_multiple = 2;
  std::size_t horizon = 1;

  std::size_t input_len() const { return lookback_multiple * horizon; }
  std::size_t total_blocks() const;
  /// Recomputes basis lengths and theta sizes from horizon/lookback.
  void rebind();
  ModelConfig with_lookback(std::size_t multiple) const;
  /// Throws std::invalid_argument describing the first violated invariant.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

StackConfig make_stack(BasisKind kind, std::size_t blocks, std::size_t width, std::size_t layers,
                       bool share, int degree = 0);
/// 30 stacks x 1 block, width 512, 4 layers, no sharing unless overridden.
ModelConfig generic_preset(std::size_t horizon, std::size_t lookback_multiple,
                           std::size_t stacks = 30, std::size_t width = 512,
                           std::size_t blocks = 1, std::size_t layers = 4);
/// Trend stack (3 blocks, width 256, degree 2) then seasonality stack
/// (3 blocks, width 2048), weights shared within each stack.
ModelConfig interpretable_preset(std::size_t horizon, std::size_t lookback_multiple,
                                 std::size_t trend_width = 256, std::size_t season_width = 2048,
                                 std::size_t trend_blocks = 3, std::size_t season_blocks = 3,
                                 int trend_degree = 2, std::size_t layers = 4);

std::string serialize_config(const ModelConfig& cfg);
ModelConfig parse_config(std::string_view text);

// --- bases -------------------------------------------------------------------

struct BasisPair {
  Matrix backcast;  // backcast_len x dim
  Matrix forecast;  // H x dim
};

/// Columns [1, t, ..., t^p] on t = [0..len-1]/len for each grid.
BasisPair make_trend_basis(std::size_t backcast_len, std::size_t horizon, int degree);
/// Columns [1, cos(2πkt)..., sin(2πkt)...] for k = 1..floor(len/2 - 1).
BasisPair make_fourier_basis(std::size_t backcast_len, std::size_t horizon);
BasisPair make_basis(const BasisSpec& spec);

// --- parameters --------------------------------------------------------------

struct BlockParams {
  std::vector<Matrix> fc_w;
  std::vector<Vector> fc_b;
  Matrix theta_b_w;
  Matrix theta_f_w;
  // generic basis only
  Matrix basis_b;
  Vector bias_b;
  Matrix basis_f;
  Vector bias_f;

  bool operator==(const BlockParams&) const = default;
};

/// Trainable tensors keyed by (stack, block, layer). A shared stack holds one
/// physical BlockParams that every logical block of the stack resolves to.
class ParamStore {
 public:
  ParamStore() = default;
  /// Zero-filled store shaped for cfg.
  explicit ParamStore(const ModelConfig& cfg);

  std::size_t stack_count() const { return stacks_.size(); }
  std::size_t logical_blocks(std::size_t stack) const { return logical_blocks_.at(stack); }
  std::size_t physical_blocks(std::size_t stack) const { return stacks_.at(stack).size(); }
  bool shared(std::size_t stack) const { return shared_.at(stack); }

  BlockParams& block(std::size_t stack, std::size_t logical_block);
  const BlockParams& block(std::size_t stack, std::size_t logical_block) const;
  BlockParams& physical(std::size_t stack, std::size_t index) { return stacks_.at(stack).at(index); }
  const BlockParams& physical(std::size_t stack, std::size_t index) const {
    return stacks_.at(stack).at(index);
  }

  using TensorVisitor =
      std::function<void(const std::string& name, std::size_t rows, std::size_t cols,
                         std::span<double> data)>;
  using ConstTensorVisitor =
      std::function<void(const std::string& name, std::size_t rows, std::size_t cols,
                         std::span<const double> data)>;
  /// Visits every physical tensor in a fixed order.
  void for_each_tensor(const TensorVisitor& visit);
  void for_each_tensor(const ConstTensorVisitor& visit) const;

  /// Spans over every physical tensor, in for_each_tensor order.
  std::vector<std::span<double>> spans();
  std::vector<std::span<const double>> spans() const;

  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
  void set_zero();

  bool operator==(const ParamStore&) const = default;

 private:
  std::vector<std::vector<BlockParams>> stacks_;
  std::vector<std::size_t> logical_blocks_;
  std::vector<bool> shared_;
};

/// Scaled-uniform fan-in init: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// biases zero.
ParamStore init_params(const ModelConfig& cfg, Rng& rng);

// --- forward/backward --------------------------------------------------------

struct BlockTrace {
  std::size_t stack = 0;
  std::size_t block = 0;  // logical index within the stack
  Matrix input;           // x_l
  std::vector<Matrix> hidden;  // post-ReLU h_1..h_k
  Matrix theta_b;
  Matrix theta_f;
  Matrix backcast;  // x̂_l
  Matrix forecast;  // ŷ_l
  bool contributes = true;
};

struct ForwardTrace {
  Topology topology = Topology::Dress;
  std::vector<BlockTrace> blocks;
  std::vector<Matrix> stack_forecasts;
  Matrix forecast;
  Matrix input;
};

struct BlockOutput {
  Matrix backcast;
  Matrix forecast;
  BlockTrace trace;
};

/// One block on a batch of inputs. `basis` is ignored for generic blocks.
BlockOutput block_forward(const Matrix& x, const BlockParams& params, const BlockConfig& cfg,
                          const BasisPair& basis);

/// Precomputes per-stack bases for one configuration.
class Network {
 public:
  explicit Network(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  const BasisPair& basis(std::size_t stack) const { return bases_.at(stack); }

  ForwardTrace forward(const Matrix& x, const ParamStore& params) const;
  /// Accumulates parameter gradients of <grad_forecast, ŷ> into grads.
  void backward(const ForwardTrace& trace, const Matrix& grad_forecast, const ParamStore& params,
                ParamStore& grads) const;
  /// Forecast only, processed in chunks to bound memory.
  Matrix predict(const Matrix& x, const ParamStore& params, std::size_t chunk = 512) const;

 private:
  ModelConfig cfg_;
  std::vector<BasisPair> bases_;
};

/// DRESS forward on a single input vector.
ForwardTrace model_forward(const Vector& x, const ModelConfig& cfg, const ParamStore& params);
/// Forward for the five non-DRESS topologies.
ForwardTrace topology_forward(const Vector& x, const ModelConfig& cfg, const ParamStore& params);
ParamStore model_backward(const ForwardTrace& trace, const Vector& grad_forecast,
                          const ModelConfig& cfg, const ParamStore& params);

/// Bit pattern of ReLU activity, for detecting kink crossings in gradient checks.
std::vector<bool> activation_pattern(const ForwardTrace& trace);

// --- persistence -------------------------------------------------------------

inline constexpr char kWeightMagic[4] = {'N', 'B', 'T', 'S'};
inline constexpr std::uint32_t kWeightFormatVersion = 1;

void save_params(const ParamStore& store, const ModelConfig& cfg,
                 const std::filesystem::path& path);
std::pair<ModelConfig, ParamStore> load_params(const std::filesystem::path& path);
/// Loads and requires the stored config to equal `expected`.
ParamStore load_params(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace nbeats
