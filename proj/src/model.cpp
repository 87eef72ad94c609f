#include "nbeats/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace nbeats {

namespace {

struct TopologyName {
  Topology topology;
  std::string_view name;
};

constexpr TopologyName kTopologyNames[] = {
    {Topology::Dress, "DRESS"},
    {Topology::Parallel, "PARALLEL"},
    {Topology::NoResidual, "NO-RESIDUAL"},
    {Topology::LastForward, "LAST-FORWARD"},
    {Topology::NoResidualLastForward, "NO-RESIDUAL-LAST-FORWARD"},
    {Topology::ResidualInput, "RESIDUAL-INPUT"},
};

bool last_forward_only(Topology t) {
  return t == Topology::LastForward || t == Topology::NoResidualLastForward;
}

void subtract_inplace(Matrix& a, const Matrix& b) {
  auto av = a.span();
  const auto bv = b.span();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] -= bv[i];
}

void add_inplace(Matrix& a, const Matrix& b) {
  auto av = a.span();
  const auto bv = b.span();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] += bv[i];
}

Matrix negated(const Matrix& a) {
  Matrix out = a;
  for (double& v : out.span()) v = -v;
  return out;
}

Matrix as_row(const Vector& x) { return Matrix(1, x.len(), x.values()); }

}  // namespace

// --- names -------------------------------------------------------------------

std::string_view to_string(BasisKind kind) {
  switch (kind) {
    case BasisKind::Generic: return "generic";
    case BasisKind::Trend: return "trend";
    case BasisKind::Seasonality: return "seasonality";
  }
  return "?";
}

std::string_view to_string(Topology topology) {
  for (const auto& t : kTopologyNames) {
    if (t.topology == topology) return t.name;
  }
  return "?";
}

BasisKind parse_basis_kind(std::string_view text) {
  if (text == "generic") return BasisKind::Generic;
  if (text == "trend") return BasisKind::Trend;
  if (text == "seasonality") return BasisKind::Seasonality;
  throw std::invalid_argument("unknown basis kind '" + std::string(text) + "'");
}

Topology parse_topology(std::string_view text) {
  std::string norm(text);
  for (char& c : norm) {
    if (c == '_') c = '-';
    c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  for (const auto& t : kTopologyNames) {
    if (t.name == norm) return t.topology;
  }
  throw std::invalid_argument("unknown topology '" + std::string(text) + "'");
}

const std::vector<Topology>& all_topologies() {
  static const std::vector<Topology> all = [] {
    std::vector<Topology> v;
    for (const auto& t : kTopologyNames) v.push_back(t.topology);
    return v;
  }();
  return all;
}

// --- config ------------------------------------------------------------------

std::size_t fourier_dim(std::size_t len) {
  // floor(len/2 - 1) for len >= 2
  const std::size_t harmonics = len >= 2 ? len / 2 - 1 : 0;
  return 2 * harmonics + 1;
}

std::size_t ModelConfig::total_blocks() const {
  std::size_t n = 0;
  for (const auto& s : stacks) n += s.blocks;
  return n;
}

void ModelConfig::rebind() {
  const std::size_t backcast = input_len();
  for (auto& s : stacks) {
    auto& b = s.block;
    b.basis.backcast_len = backcast;
    b.basis.forecast_len = horizon;
    switch (b.basis.kind) {
      case BasisKind::Generic:
        b.theta_f_dim = horizon;
        b.theta_b_dim = backcast;
        break;
      case BasisKind::Trend:
        b.theta_f_dim = static_cast<std::size_t>(b.basis.degree) + 1;
        b.theta_b_dim = static_cast<std::size_t>(b.basis.degree) + 1;
        break;
      case BasisKind::Seasonality:
        b.theta_f_dim = fourier_dim(horizon);
        b.theta_b_dim = fourier_dim(backcast);
        break;
    }
  }
}

ModelConfig ModelConfig::with_lookback(std::size_t multiple) const {
  ModelConfig out = *this;
  out.lookback_multiple = multiple;
  out.rebind();
  return out;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (horizon < 1) fail("horizon must be >= 1");
  if (lookback_multiple < 1) fail("lookback multiple must be >= 1");
  if (stacks.empty()) fail("at least one stack required");
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    const auto& s = stacks[i];
    const auto& b = s.block;
    const std::string where = "stack " + std::to_string(i) + ": ";
    if (s.blocks < 1) fail(where + "blocks must be >= 1");
    if (b.fc_layers < 1) fail(where + "fc_layers must be >= 1");
    if (b.width < 1) fail(where + "width must be >= 1");
    if (b.basis.backcast_len != input_len() || b.basis.forecast_len != horizon) {
      fail(where + "basis lengths do not match lookback/horizon (call rebind)");
    }
    if (b.basis.kind == BasisKind::Trend && b.basis.degree < 0) fail(where + "trend degree must be >= 0");
    if (b.basis.kind == BasisKind::Seasonality && horizon < 2) {
      fail(where + "seasonality basis needs horizon >= 2");
    }
    if (b.theta_f_dim < 1 || b.theta_b_dim < 1) fail(where + "theta dims must be positive");
  }
}

StackConfig make_stack(BasisKind kind, std::size_t blocks, std::size_t width, std::size_t layers,
                       bool share, int degree) {
  StackConfig s;
  s.blocks = blocks;
  s.share_weights = share;
  s.block.width = width;
  s.block.fc_layers = layers;
  s.block.basis.kind = kind;
  s.block.basis.degree = kind == BasisKind::Trend ? degree : 0;
  return s;
}

ModelConfig generic_preset(std::size_t horizon, std::size_t lookback_multiple, std::size_t stacks,
                           std::size_t width, std::size_t blocks, std::size_t layers) {
  ModelConfig cfg;
  cfg.horizon = horizon;
  cfg.lookback_multiple = lookback_multiple;
  cfg.stacks.assign(stacks, make_stack(BasisKind::Generic, blocks, width, layers, false));
  cfg.rebind();
  return cfg;
}

ModelConfig interpretable_preset(std::size_t horizon, std::size_t lookback_multiple,
                                 std::size_t trend_width, std::size_t season_width,
                                 std::size_t trend_blocks, std::size_t season_blocks,
                                 int trend_degree, std::size_t layers) {
  ModelConfig cfg;
  cfg.horizon = horizon;
  cfg.lookback_multiple = lookback_multiple;
  cfg.stacks.push_back(make_stack(BasisKind::Trend, trend_blocks, trend_width, layers, true, trend_degree));
  cfg.stacks.push_back(make_stack(BasisKind::Seasonality, season_blocks, season_width, layers, true));
  cfg.rebind();
  return cfg;
}

std::string serialize_config(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "topology=" << to_string(cfg.topology) << "\n";
  os << "horizon=" << cfg.horizon << "\n";
  os << "lookback_multiple=" << cfg.lookback_multiple << "\n";
  for (const auto& s : cfg.stacks) {
    os << "stack=" << to_string(s.block.basis.kind) << " blocks=" << s.blocks
       << " width=" << s.block.width << " layers=" << s.block.fc_layers
       << " degree=" << s.block.basis.degree << " share=" << (s.share_weights ? 1 : 0) << "\n";
  }
  return os.str();
}

ModelConfig parse_config(std::string_view text) {
  ModelConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("model config: bad line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "topology") {
      cfg.topology = parse_topology(value);
    } else if (key == "horizon") {
      cfg.horizon = std::stoul(value);
    } else if (key == "lookback_multiple") {
      cfg.lookback_multiple = std::stoul(value);
    } else if (key == "stack") {
      std::istringstream fields(value);
      std::string kind;
      fields >> kind;
      std::size_t blocks = 0, width = 0, layers = 0;
      int degree = 0, share = 0;
      std::string tok;
      while (fields >> tok) {
        const auto e = tok.find('=');
        if (e == std::string::npos) throw std::invalid_argument("model config: bad stack field '" + tok + "'");
        const std::string k = tok.substr(0, e);
        const std::string v = tok.substr(e + 1);
        if (k == "blocks") blocks = std::stoul(v);
        else if (k == "width") width = std::stoul(v);
        else if (k == "layers") layers = std::stoul(v);
        else if (k == "degree") degree = std::stoi(v);
        else if (k == "share") share = std::stoi(v);
        else throw std::invalid_argument("model config: unknown stack field '" + k + "'");
      }
      cfg.stacks.push_back(make_stack(parse_basis_kind(kind), blocks, width, layers, share != 0, degree));
    } else {
      throw std::invalid_argument("model config: unknown key '" + key + "'");
    }
  }
  cfg.rebind();
  cfg.validate();
  return cfg;
}

// --- bases -------------------------------------------------------------------

namespace {

Matrix trend_grid(std::size_t len, int degree) {
  Matrix m(len, static_cast<std::size_t>(degree) + 1);
  for (std::size_t i = 0; i < len; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(len);
    double power = 1.0;
    for (int k = 0; k <= degree; ++k) {
      m(i, static_cast<std::size_t>(k)) = power;
      power *= t;
    }
  }
  return m;
}

Matrix fourier_grid(std::size_t len) {
  const std::size_t harmonics = len >= 2 ? len / 2 - 1 : 0;
  Matrix m(len, 2 * harmonics + 1);
  for (std::size_t i = 0; i < len; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(len);
    m(i, 0) = 1.0;
    for (std::size_t k = 1; k <= harmonics; ++k) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) * t;
      m(i, k) = std::cos(angle);
      m(i, harmonics + k) = std::sin(angle);
    }
  }
  return m;
}

}  // namespace

BasisPair make_trend_basis(std::size_t backcast_len, std::size_t horizon, int degree) {
  if (degree < 0) throw std::invalid_argument("make_trend_basis: degree must be >= 0");
  if (horizon < 1 || backcast_len < 1) throw std::invalid_argument("make_trend_basis: empty grid");
  return {trend_grid(backcast_len, degree), trend_grid(horizon, degree)};
}

BasisPair make_fourier_basis(std::size_t backcast_len, std::size_t horizon) {
  if (horizon < 2) {
    throw std::invalid_argument("make_fourier_basis: horizon must be >= 2, got " + std::to_string(horizon));
  }
  if (backcast_len < 1) throw std::invalid_argument("make_fourier_basis: empty backcast grid");
  return {fourier_grid(backcast_len), fourier_grid(horizon)};
}

BasisPair make_basis(const BasisSpec& spec) {
  switch (spec.kind) {
    case BasisKind::Trend: return make_trend_basis(spec.backcast_len, spec.forecast_len, spec.degree);
    case BasisKind::Seasonality: return make_fourier_basis(spec.backcast_len, spec.forecast_len);
    case BasisKind::Generic: return {};
  }
  return {};
}

// --- params ------------------------------------------------------------------

namespace {

BlockParams zero_block(const BlockConfig& b) {
  BlockParams p;
  std::size_t fan_in = b.basis.backcast_len;
  for (std::size_t l = 0; l < b.fc_layers; ++l) {
    p.fc_w.emplace_back(b.width, fan_in);
    p.fc_b.emplace_back(b.width);
    fan_in = b.width;
  }
  p.theta_b_w = Matrix(b.theta_b_dim, b.width);
  p.theta_f_w = Matrix(b.theta_f_dim, b.width);
  if (b.basis.kind == BasisKind::Generic) {
    p.basis_b = Matrix(b.basis.backcast_len, b.theta_b_dim);
    p.bias_b = Vector(b.basis.backcast_len);
    p.basis_f = Matrix(b.basis.forecast_len, b.theta_f_dim);
    p.bias_f = Vector(b.basis.forecast_len);
  }
  return p;
}

template <typename Block, typename Visit, typename VecSpan, typename MatSpan>
void visit_block(Block& p, const std::string& prefix, Visit& visit, VecSpan vec_span, MatSpan mat_span) {
  for (std::size_t l = 0; l < p.fc_w.size(); ++l) {
    const std::string layer = prefix + "fc" + std::to_string(l + 1);
    visit(layer + ".weight", p.fc_w[l].rows(), p.fc_w[l].cols(), mat_span(p.fc_w[l]));
    visit(layer + ".bias", p.fc_b[l].len(), 1, vec_span(p.fc_b[l]));
  }
  visit(prefix + "theta_b.weight", p.theta_b_w.rows(), p.theta_b_w.cols(), mat_span(p.theta_b_w));
  visit(prefix + "theta_f.weight", p.theta_f_w.rows(), p.theta_f_w.cols(), mat_span(p.theta_f_w));
  if (p.basis_f.size() > 0) {
    visit(prefix + "basis_b.weight", p.basis_b.rows(), p.basis_b.cols(), mat_span(p.basis_b));
    visit(prefix + "basis_b.bias", p.bias_b.len(), 1, vec_span(p.bias_b));
    visit(prefix + "basis_f.weight", p.basis_f.rows(), p.basis_f.cols(), mat_span(p.basis_f));
    visit(prefix + "basis_f.bias", p.bias_f.len(), 1, vec_span(p.bias_f));
  }
}

std::string block_prefix(std::size_t stack, std::size_t block) {
  return "stack" + std::to_string(stack) + ".block" + std::to_string(block) + ".";
}

}  // namespace

ParamStore::ParamStore(const ModelConfig& cfg) {
  cfg.validate();
  for (const auto& s : cfg.stacks) {
    const std::size_t physical = s.share_weights ? 1 : s.blocks;
    stacks_.emplace_back(physical, zero_block(s.block));
    logical_blocks_.push_back(s.blocks);
    shared_.push_back(s.share_weights);
  }
}

BlockParams& ParamStore::block(std::size_t stack, std::size_t logical_block) {
  if (logical_block >= logical_blocks_.at(stack)) throw std::out_of_range("ParamStore::block");
  return stacks_[stack][shared_[stack] ? 0 : logical_block];
}

const BlockParams& ParamStore::block(std::size_t stack, std::size_t logical_block) const {
  if (logical_block >= logical_blocks_.at(stack)) throw std::out_of_range("ParamStore::block");
  return stacks_[stack][shared_[stack] ? 0 : logical_block];
}

void ParamStore::for_each_tensor(const TensorVisitor& visit) {
  auto vec_span = [](Vector& v) { return v.span(); };
  auto mat_span = [](Matrix& m) { return m.span(); };
  for (std::size_t s = 0; s < stacks_.size(); ++s) {
    for (std::size_t b = 0; b < stacks_[s].size(); ++b) {
      visit_block(stacks_[s][b], block_prefix(s, b), visit, vec_span, mat_span);
    }
  }
}

void ParamStore::for_each_tensor(const ConstTensorVisitor& visit) const {
  auto vec_span = [](const Vector& v) { return v.span(); };
  auto mat_span = [](const Matrix& m) { return m.span(); };
  for (std::size_t s = 0; s < stacks_.size(); ++s) {
    for (std::size_t b = 0; b < stacks_[s].size(); ++b) {
      visit_block(stacks_[s][b], block_prefix(s, b), visit, vec_span, mat_span);
    }
  }
}

std::vector<std::span<double>> ParamStore::spans() {
  std::vector<std::span<double>> out;
  for_each_tensor(TensorVisitor([&](const std::string&, std::size_t, std::size_t, std::span<double> d) {
    out.push_back(d);
  }));
  return out;
}

std::vector<std::span<const double>> ParamStore::spans() const {
  std::vector<std::span<const double>> out;
  for_each_tensor(ConstTensorVisitor([&](const std::string&, std::size_t, std::size_t, std::span<const double> d) {
    out.push_back(d);
  }));
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor(ConstTensorVisitor(
      [&](const std::string&, std::size_t, std::size_t, std::span<const double> d) { n += d.size(); }));
  return n;
}

std::vector<double> ParamStore::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for_each_tensor(ConstTensorVisitor([&](const std::string&, std::size_t, std::size_t,
                                         std::span<const double> d) {
    flat.insert(flat.end(), d.begin(), d.end());
  }));
  return flat;
}

void ParamStore::assign(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw ShapeError("ParamStore::assign: expected " + std::to_string(parameter_count()) +
                     " values, got " + std::to_string(flat.size()));
  }
  std::size_t offset = 0;
  for_each_tensor(TensorVisitor([&](const std::string&, std::size_t, std::size_t, std::span<double> d) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), d.size(), d.begin());
    offset += d.size();
  }));
}

void ParamStore::set_zero() {
  for_each_tensor(TensorVisitor([](const std::string&, std::size_t, std::size_t, std::span<double> d) {
    std::fill(d.begin(), d.end(), 0.0);
  }));
}

ParamStore init_params(const ModelConfig& cfg, Rng& rng) {
  ParamStore store(cfg);
  store.for_each_tensor(ParamStore::TensorVisitor(
      [&](const std::string& name, std::size_t, std::size_t cols, std::span<double> d) {
        if (name.ends_with(".bias")) return;  // biases start at zero
        const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
        for (double& v : d) v = rng.uniform(-bound, bound);
      }));
  return store;
}

// --- forward/backward --------------------------------------------------------

BlockOutput block_forward(const Matrix& x, const BlockParams& params, const BlockConfig& cfg,
                          const BasisPair& basis) {
  if (x.cols() != cfg.basis.backcast_len) {
    throw ShapeError("block_forward: input length " + std::to_string(x.cols()) +
                     " != backcast length " + std::to_string(cfg.basis.backcast_len));
  }
  if (params.fc_w.size() != cfg.fc_layers) {
    throw ShapeError("block_forward: expected " + std::to_string(cfg.fc_layers) + " FC layers, params have " +
                     std::to_string(params.fc_w.size()));
  }
  BlockOutput out;
  auto& tr = out.trace;
  tr.input = x;
  const Matrix* h = &x;
  for (std::size_t l = 0; l < cfg.fc_layers; ++l) {
    Matrix next = affine_forward_batch(params.fc_w[l], &params.fc_b[l], *h);
    relu_inplace(next);
    tr.hidden.push_back(std::move(next));
    h = &tr.hidden.back();
  }
  tr.theta_b = affine_forward_batch(params.theta_b_w, nullptr, *h);
  tr.theta_f = affine_forward_batch(params.theta_f_w, nullptr, *h);
  if (cfg.basis.kind == BasisKind::Generic) {
    tr.backcast = affine_forward_batch(params.basis_b, &params.bias_b, tr.theta_b);
    tr.forecast = affine_forward_batch(params.basis_f, &params.bias_f, tr.theta_f);
  } else {
    tr.backcast = project_batch(basis.backcast, tr.theta_b);
    tr.forecast = project_batch(basis.forecast, tr.theta_f);
  }
  out.backcast = tr.backcast;
  out.forecast = tr.forecast;
  return out;
}

Network::Network(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  for (const auto& s : cfg_.stacks) bases_.push_back(make_basis(s.block.basis));
}

ForwardTrace Network::forward(const Matrix& x, const ParamStore& params) const {
  if (x.cols() != cfg_.input_len()) {
    throw ShapeError("model forward: input length " + std::to_string(x.cols()) + " != " +
                     std::to_string(cfg_.lookback_multiple) + " x " + std::to_string(cfg_.horizon));
  }
  if (params.stack_count() != cfg_.stacks.size()) {
    throw ShapeError("model forward: parameter store has " + std::to_string(params.stack_count()) +
                     " stacks, config has " + std::to_string(cfg_.stacks.size()));
  }
  const Topology topo = cfg_.topology;
  const std::size_t total = cfg_.total_blocks();
  const std::size_t batch = x.rows();

  ForwardTrace trace;
  trace.topology = topo;
  trace.input = x;
  trace.blocks.reserve(total);
  for (std::size_t s = 0; s < cfg_.stacks.size(); ++s) trace.stack_forecasts.emplace_back(batch, cfg_.horizon);

  Matrix current = x;
  std::size_t index = 0;
  for (std::size_t s = 0; s < cfg_.stacks.size(); ++s) {
    const auto& stack = cfg_.stacks[s];
    for (std::size_t b = 0; b < stack.blocks; ++b, ++index) {
      BlockOutput out = block_forward(current, params.block(s, b), stack.block, bases_[s]);
      out.trace.stack = s;
      out.trace.block = b;
      out.trace.contributes = !last_forward_only(topo) || index + 1 == total;
      if (out.trace.contributes) add_inplace(trace.stack_forecasts[s], out.forecast);

      switch (topo) {
        case Topology::Dress:
        case Topology::LastForward:
          subtract_inplace(current, out.backcast);
          break;
        case Topology::Parallel:
          break;  // every block sees x
        case Topology::NoResidual:
        case Topology::NoResidualLastForward:
          current = out.backcast;
          break;
        case Topology::ResidualInput:
          current = x;
          subtract_inplace(current, out.backcast);
          break;
      }
      trace.blocks.push_back(std::move(out.trace));
    }
  }
  trace.forecast = Matrix(batch, cfg_.horizon);
  for (const auto& partial : trace.stack_forecasts) add_inplace(trace.forecast, partial);
  return trace;
}

void Network::backward(const ForwardTrace& trace, const Matrix& grad_forecast, const ParamStore& params,
                       ParamStore& grads) const {
  if (trace.blocks.size() != cfg_.total_blocks() || trace.topology != cfg_.topology) {
    throw std::invalid_argument("model backward: trace does not match configuration");
  }
  if (grad_forecast.rows() != trace.forecast.rows() || grad_forecast.cols() != cfg_.horizon) {
    throw ShapeError("model backward: gradient " + shape_string(grad_forecast) + " vs forecast " +
                     shape_string(trace.forecast));
  }
  const Topology topo = cfg_.topology;
  const std::size_t total = trace.blocks.size();
  const std::size_t batch = grad_forecast.rows();

  // grad wrt the input of block l+1, as seen while processing block l
  Matrix grad_next_input;
  for (std::size_t idx = total; idx-- > 0;) {
    const BlockTrace& tr = trace.blocks[idx];
    const auto& bcfg = cfg_.stacks[tr.stack].block;
    const BlockParams& p = params.block(tr.stack, tr.block);
    BlockParams& g = grads.block(tr.stack, tr.block);
    const BasisPair& basis = bases_[tr.stack];

    Matrix grad_back;
    if (idx + 1 < total && grad_next_input.size() > 0) {
      switch (topo) {
        case Topology::Dress:
        case Topology::LastForward:
        case Topology::ResidualInput:
          grad_back = negated(grad_next_input);
          break;
        case Topology::NoResidual:
        case Topology::NoResidualLastForward:
          grad_back = grad_next_input;
          break;
        case Topology::Parallel:
          break;
      }
    }

    Matrix grad_h(batch, bcfg.width);
    if (tr.contributes) {
      Matrix grad_theta_f;
      if (bcfg.basis.kind == BasisKind::Generic) {
        grad_theta_f = affine_backward_batch(p.basis_f, tr.theta_f, grad_forecast, g.basis_f, &g.bias_f, true);
      } else {
        grad_theta_f = project_backward_batch(basis.forecast, grad_forecast);
      }
      add_inplace(grad_h, affine_backward_batch(p.theta_f_w, tr.hidden.back(), grad_theta_f, g.theta_f_w,
                                                nullptr, true));
    }
    if (grad_back.size() > 0) {
      Matrix grad_theta_b;
      if (bcfg.basis.kind == BasisKind::Generic) {
        grad_theta_b = affine_backward_batch(p.basis_b, tr.theta_b, grad_back, g.basis_b, &g.bias_b, true);
      } else {
        grad_theta_b = project_backward_batch(basis.backcast, grad_back);
      }
      add_inplace(grad_h, affine_backward_batch(p.theta_b_w, tr.hidden.back(), grad_theta_b, g.theta_b_w,
                                                nullptr, true));
    }

    const bool need_input_grad = idx > 0 && topo != Topology::Parallel;
    for (std::size_t l = bcfg.fc_layers; l-- > 0;) {
      relu_backward_inplace(tr.hidden[l], grad_h);
      const Matrix& below = l == 0 ? tr.input : tr.hidden[l - 1];
      const bool want_x = l > 0 || need_input_grad;
      grad_h = affine_backward_batch(p.fc_w[l], below, grad_h, g.fc_w[l], &g.fc_b[l], want_x);
    }

    if (!need_input_grad) {
      grad_next_input = Matrix();
      continue;
    }
    // grad_h now holds d/d(input of this block) through the block itself
    if ((topo == Topology::Dress || topo == Topology::LastForward) && grad_next_input.size() > 0) {
      add_inplace(grad_h, grad_next_input);
    }
    grad_next_input = std::move(grad_h);
  }
}

Matrix Network::predict(const Matrix& x, const ParamStore& params, std::size_t chunk) const {
  Matrix out(x.rows(), cfg_.horizon);
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t start = 0; start < x.rows(); start += chunk) {
    const std::size_t n = std::min(chunk, x.rows() - start);
    Matrix part(n, x.cols());
    std::copy_n(x.row(start).data(), n * x.cols(), part.data());
    const ForwardTrace tr = forward(part, params);
    std::copy_n(tr.forecast.data(), n * cfg_.horizon, out.row(start).data());
  }
  return out;
}

ForwardTrace model_forward(const Vector& x, const ModelConfig& cfg, const ParamStore& params) {
  if (cfg.topology != Topology::Dress) {
    throw std::invalid_argument("model_forward: topology must be DRESS, got " + std::string(to_string(cfg.topology)));
  }
  return Network(cfg).forward(as_row(x), params);
}

ForwardTrace topology_forward(const Vector& x, const ModelConfig& cfg, const ParamStore& params) {
  if (cfg.topology == Topology::Dress) {
    throw std::invalid_argument("topology_forward: use model_forward for DRESS");
  }
  return Network(cfg).forward(as_row(x), params);
}

ParamStore model_backward(const ForwardTrace& trace, const Vector& grad_forecast, const ModelConfig& cfg,
                          const ParamStore& params) {
  ParamStore grads(cfg);
  Network(cfg).backward(trace, as_row(grad_forecast), params, grads);
  return grads;
}

std::vector<bool> activation_pattern(const ForwardTrace& trace) {
  std::vector<bool> bits;
  for (const auto& b : trace.blocks) {
    for (const auto& h : b.hidden) {
      for (double v : h.span()) bits.push_back(v > 0.0);
    }
  }
  return bits;
}

}  // namespace nbeats
