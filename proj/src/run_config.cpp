#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "nbeats/cli.hpp"

namespace nbeats {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> split_list(const std::string& value, std::string_view seps) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : value) {
    if (seps.find(c) != std::string_view::npos) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  out.erase(std::remove(out.begin(), out.end(), std::string()), out.end());
  return out;
}

template <class T>
T parse_integer(const std::string& key, const std::string& text) {
  T v{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || text.empty()) {
    throw std::invalid_argument("config: " + key + ": expected an integer, got '" + text + "'");
  }
  return v;
}

std::size_t parse_count(const std::string& key, const std::string& text) {
  // "15K" style counts
  if (!text.empty() && (text.back() == 'K' || text.back() == 'k')) {
    return parse_integer<std::size_t>(key, trim(text.substr(0, text.size() - 1))) * 1000;
  }
  return parse_integer<std::size_t>(key, text);
}

double parse_real(const std::string& key, const std::string& text) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || text.empty()) {
    throw std::invalid_argument("config: " + key + ": expected a number, got '" + text + "'");
  }
  return v;
}

bool parse_flag(const std::string& key, const std::string& text) {
  const std::string v = lower(text);
  if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
  if (v == "false" || v == "no" || v == "0" || v == "off") return false;
  throw std::invalid_argument("config: " + key + ": expected true/false, got '" + text + "'");
}

bool parse_sharing(const std::string& key, const std::string& text) {
  const std::string v = lower(text);
  if (v == "stack level" || v == "stack-level" || v == "stack_level" || v == "stack") return true;
  return parse_flag(key, text);
}

std::size_t parse_lookback(const std::string& key, std::string text) {
  if (!text.empty() && (text.back() == 'H' || text.back() == 'h')) text.pop_back();
  return parse_integer<std::size_t>(key, trim(text));
}

template <class T, class F>
std::vector<T> parse_vector(const std::string& key, const std::string& value, std::string_view seps, F&& item) {
  std::vector<T> out;
  for (const auto& cell : split_list(value, seps)) out.push_back(item(key, cell));
  if (out.empty()) throw std::invalid_argument("config: " + key + ": empty list");
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& items, std::string_view sep, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += sep;
    out += fmt(items[i]);
  }
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;
using Getter = std::function<std::optional<std::string>(const RunConfig&)>;

struct Field {
  std::string name;
  Setter set;
  Getter get;
};

template <class T>
Field count_field(std::string name, T RunConfig::*member) {
  return {name, [member](RunConfig& c, const std::string& k, const std::string& v) { c.*member = parse_count(k, v); },
          [member](const RunConfig& c) -> std::optional<std::string> { return std::to_string(c.*member); }};
}

Field string_field(std::string name, std::string RunConfig::*member) {
  return {name, [member](RunConfig& c, const std::string&, const std::string& v) { c.*member = v; },
          [member](const RunConfig& c) -> std::optional<std::string> { return c.*member; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(string_field("train", &RunConfig::train));
    f.push_back(string_field("test", &RunConfig::test));
    f.push_back(string_field("meta", &RunConfig::meta));
    f.push_back(string_field("frequency", &RunConfig::frequency));
    f.push_back({"preset", [](RunConfig& c, const std::string&, const std::string& v) { c.preset = parse_preset(v); },
                 [](const RunConfig& c) -> std::optional<std::string> { return std::string(to_string(c.preset)); }});
    f.push_back({"topology",
                 [](RunConfig& c, const std::string&, const std::string& v) { c.topology = parse_topology(v); },
                 [](const RunConfig& c) -> std::optional<std::string> { return std::string(to_string(c.topology)); }});
    f.push_back({"L_H", [](RunConfig& c, const std::string& k, const std::string& v) { c.lh = parse_real(k, v); },
                 [](const RunConfig& c) -> std::optional<std::string> { return format_double(c.lh); }});
    f.push_back(count_field("Iterations", &RunConfig::iterations));
    f.push_back({"Losses",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.losses = parse_vector<LossKind>(k, v, "/,",
                                                     [](const std::string&, const std::string& s) { return parse_loss(s); });
                 },
                 [](const RunConfig& c) -> std::optional<std::string> {
                   return join(c.losses, "/", [](LossKind l) { return std::string(to_string(l)); });
                 }});
    f.push_back({"Lookback period",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.lookbacks = parse_vector<std::size_t>(k, v, ",", parse_lookback);
                 },
                 [](const RunConfig& c) -> std::optional<std::string> {
                   return join(c.lookbacks, ", ", [](std::size_t l) { return std::to_string(l) + "H"; });
                 }});
    f.push_back(count_field("Batch", &RunConfig::batch));
    f.push_back(count_field("repeats", &RunConfig::repeats));
    f.push_back(count_field("S-width", &RunConfig::s_width));
    f.push_back(count_field("S-blocks", &RunConfig::s_blocks));
    f.push_back(count_field("S-block-layers", &RunConfig::s_block_layers));
    f.push_back(count_field("T-width", &RunConfig::t_width));
    f.push_back({"T-degree",
                 [](RunConfig& c, const std::string& k, const std::string& v) { c.t_degree = parse_integer<int>(k, v); },
                 [](const RunConfig& c) -> std::optional<std::string> { return std::to_string(c.t_degree); }});
    f.push_back(count_field("T-blocks", &RunConfig::t_blocks));
    f.push_back(count_field("T-block-layers", &RunConfig::t_block_layers));
    f.push_back(count_field("Width", &RunConfig::width));
    f.push_back(count_field("Blocks", &RunConfig::blocks));
    f.push_back(count_field("Block-layers", &RunConfig::block_layers));
    f.push_back(count_field("Stacks", &RunConfig::stacks));
    f.push_back({"Sharing",
                 [](RunConfig& c, const std::string& k, const std::string& v) { c.sharing = parse_sharing(k, v); },
                 [](const RunConfig& c) -> std::optional<std::string> {
                   if (!c.sharing) return std::nullopt;
                   return std::string(*c.sharing ? "STACK LEVEL" : "NO");
                 }});
    f.push_back({"validate",
                 [](RunConfig& c, const std::string& k, const std::string& v) { c.validate = parse_flag(k, v); },
                 [](const RunConfig& c) -> std::optional<std::string> {
                   return std::string(c.validate ? "true" : "false");
                 }});
    f.push_back(count_field("patience", &RunConfig::patience));
    f.push_back(count_field("cadence", &RunConfig::cadence));
    f.push_back({"seed",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.seed = parse_integer<std::uint64_t>(k, v);
                 },
                 [](const RunConfig& c) -> std::optional<std::string> { return std::to_string(c.seed); }});
    f.push_back(string_field("out", &RunConfig::out));
    f.push_back({"ablate.stacks",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.ablate_stacks = parse_vector<std::size_t>(k, v, ",", parse_count);
                 },
                 [](const RunConfig& c) -> std::optional<std::string> {
                   return join(c.ablate_stacks, ", ", [](std::size_t n) { return std::to_string(n); });
                 }});
    f.push_back({"ablate.basis",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.ablate_basis = parse_vector<std::pair<std::size_t, std::size_t>>(
                       k, v, ",", [](const std::string& key, const std::string& cell) {
                         const auto colon = cell.find(':');
                         if (colon == std::string::npos) {
                           throw std::invalid_argument("config: " + key + ": expected trend:seasonality, got '" +
                                                       cell + "'");
                         }
                         return std::pair{parse_count(key, trim(cell.substr(0, colon))),
                                          parse_count(key, trim(cell.substr(colon + 1)))};
                       });
                 },
                 [](const RunConfig& c) -> std::optional<std::string> {
                   return join(c.ablate_basis, ", ", [](const auto& p) {
                     return std::to_string(p.first) + ":" + std::to_string(p.second);
                   });
                 }});
    f.push_back({"ablate.topology",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.ablate_topology = parse_vector<Topology>(
                       k, v, ",", [](const std::string&, const std::string& s) { return parse_topology(s); });
                 },
                 [](const RunConfig& c) -> std::optional<std::string> {
                   return join(c.ablate_topology, ", ", [](Topology t) { return std::string(to_string(t)); });
                 }});
    f.push_back({"ablate.ensemble_size",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   c.ablate_ensemble_size = parse_vector<std::size_t>(k, v, ",", parse_count);
                 },
                 [](const RunConfig& c) -> std::optional<std::string> {
                   return join(c.ablate_ensemble_size, ", ", [](std::size_t n) { return std::to_string(n); });
                 }});
    return f;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  std::string k = lower(key);
  if (k == "lookback" || k == "lookbacks") k = "lookback period";
  for (const auto& f : fields()) {
    if (lower(f.name) == k) return &f;
  }
  return nullptr;
}

}  // namespace

std::string_view to_string(Preset preset) { return preset == Preset::Generic ? "generic" : "interpretable"; }

Preset parse_preset(std::string_view text) {
  const std::string v = lower(text);
  if (v == "generic" || v == "g") return Preset::Generic;
  if (v == "interpretable" || v == "i") return Preset::Interpretable;
  throw std::invalid_argument("unknown preset '" + std::string(text) + "' (expected generic or interpretable)");
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> unknown;
  std::set<const Field*> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    const Field* f = find_field(key);
    if (f == nullptr) {
      unknown.push_back(key);
      continue;
    }
    if (!seen.insert(f).second) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    f->set(cfg, f->name, value);
  }
  if (!unknown.empty()) {
    throw std::invalid_argument("config: unknown keys: " + join(unknown, ", ", [](const std::string& s) { return s; }));
  }
  return cfg;
}

std::string serialize_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) {
    if (auto v = f.get(cfg)) out += f.name + " = " + *v + "\n";
  }
  return out;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  RunConfig cfg = parse_run_config(text.str());
  cfg.resolve_paths(path.parent_path());
  return cfg;
}

void RunConfig::resolve_paths(const std::filesystem::path& base) {
  for (std::string* p : {&train, &test, &meta}) {
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  }
}

ModelConfig RunConfig::model_config(std::size_t horizon) const {
  if (lookbacks.empty()) throw std::invalid_argument("config: no lookback multiples");
  ModelConfig cfg;
  cfg.horizon = horizon;
  cfg.lookback_multiple = lookbacks.front();
  cfg.topology = topology;
  const bool share = sharing_or_default();
  if (preset == Preset::Generic) {
    cfg.stacks.assign(stacks, make_stack(BasisKind::Generic, blocks, width, block_layers, share));
  } else {
    if (t_blocks + s_blocks == 0) throw std::invalid_argument("config: T-blocks and S-blocks are both zero");
    if (t_blocks > 0) {
      cfg.stacks.push_back(make_stack(BasisKind::Trend, t_blocks, t_width, t_block_layers, share, t_degree));
    }
    if (s_blocks > 0) cfg.stacks.push_back(make_stack(BasisKind::Seasonality, s_blocks, s_width, s_block_layers, share));
  }
  cfg.rebind();
  cfg.validate();
  return cfg;
}

TrainPlan RunConfig::train_plan() const {
  TrainPlan plan;
  plan.iterations = iterations;
  plan.batch_size = batch;
  plan.lh = lh;
  plan.loss = losses.empty() ? LossKind::Smape : losses.front();
  plan.lookback_multiple = lookbacks.empty() ? 2 : lookbacks.front();
  plan.patience = patience;
  plan.cadence = cadence;
  plan.seed = seed;
  plan.validate = validate;
  plan.validate_plan();
  return plan;
}

EnsembleSpec RunConfig::ensemble_spec(std::size_t horizon) const {
  EnsembleSpec spec;
  spec.losses = losses;
  spec.lookbacks = lookbacks;
  spec.repeats = repeats;
  spec.base = model_config(horizon);
  spec.plan = train_plan();
  return spec;
}

SeriesSet load_run_dataset(const RunConfig& cfg) {
  if (cfg.train.empty() || cfg.test.empty() || cfg.meta.empty()) {
    throw std::invalid_argument("config: train, test and meta paths are required");
  }
  for (const std::string& p : {cfg.train, cfg.test, cfg.meta}) {
    if (!std::filesystem::exists(p)) throw std::runtime_error("file not found: " + p);
  }
  SeriesSet set = load_dataset(cfg.train, cfg.test, std::filesystem::path(cfg.meta));
  if (!cfg.frequency.empty()) set = set.subset(cfg.frequency);
  return set;
}

}  // namespace nbeats
