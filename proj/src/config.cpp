#include "cplab/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <variant>

namespace cplab {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (horizon < 1) fail("horizon must be >= 1");
  if (window <= horizon + 1) fail("window must exceed horizon + 1");
  if (batch < 2) fail("batch must be >= 2");
  if (negatives < 1 || negatives > batch - 1) fail("negatives must lie in [1, batch - 1]");
  for (double w : {lr, entropy_weight, diversity_weight, pred_weight, nce_weight, variance_weight})
    if (!(w >= 0.0) || !std::isfinite(w)) fail("weights and learning rate must be finite and >= 0");
  if (!(variance_floor > 0.0)) fail("variance_floor must be > 0");
  if (!(tau_start >= 0.0) || !(tau_decay > 0.0 && tau_decay <= 1.0) || !(tau_floor >= 0.0))
    fail("temperature schedule out of range");
  if (buffer_episodes < 1 || refresh_every < 1) fail("buffer_episodes and refresh_every must be >= 1");
  if (episode_length < static_cast<std::size_t>(window)) fail("episode_length must be >= window");
  if (!(readout_momentum >= 0.0 && readout_momentum < 1.0)) fail("readout_momentum must lie in [0, 1)");
}

double TrainConfig::tau_at(std::uint64_t step) const {
  return std::max(tau_floor, tau_start * std::pow(tau_decay, static_cast<double>(step)));
}

void EvalConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("eval config: " + m); };
  if (episodes < 1 || episode_length < 2) fail("episodes and episode_length must be positive");
  if (!(probe_train_fraction > 0.0 && probe_train_fraction < 1.0)) fail("probe_train_fraction must lie in (0, 1)");
  if (mi_bins < 2) fail("mi_bins must be >= 2");
  if (baseline_rollouts < 1 || baseline_batch < 1) fail("baseline sizes must be positive");
}

void RunConfig::sync() { model.obs_dim = env.obs_dim(); }

void RunConfig::validate() const {
  env.validate();
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (model.obs_dim != env.obs_dim()) throw ConfigError("model obs_dim does not match the environment");
  train.validate();
  eval.validate();
  if (train.planted_slot >= static_cast<int>(model.slots)) throw ConfigError("train.planted_slot out of range");
  if (eval.episode_length <= static_cast<std::size_t>(train.window))
    throw ConfigError("eval.episode_length must exceed train.window");
}

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>);
using Field = std::variant<int*, std::size_t*, double*, bool*>;

std::vector<std::pair<std::string, Field>> fields(RunConfig& c) {
  return {
      {"env.grid", &c.env.grid},
      {"env.piles", &c.env.piles},
      {"env.max_height", &c.env.max_height},
      {"env.offset_bound", &c.env.offset_bound},
      {"env.fall_threshold", &c.env.fall_threshold},
      {"env.nudge_minus", &c.env.nudge_probs[0]},
      {"env.nudge_zero", &c.env.nudge_probs[1]},
      {"env.nudge_plus", &c.env.nudge_probs[2]},
      {"env.distractors", &c.env.distractors},
      {"env.colors", &c.env.colors},
      {"env.scatter_steps", &c.env.scatter_steps},
      {"env.lean_threshold", &c.env.lean_threshold},
      {"model.slots", &c.model.slots},
      {"model.width", &c.model.width},
      {"model.key_dim", &c.model.key_dim},
      {"model.b_count", &c.model.b_count},
      {"model.bins", &c.model.bins},
      {"model.enc_hidden", &c.model.enc_hidden},
      {"model.enc_out", &c.model.enc_out},
      {"model.score_hidden", &c.model.score_hidden},
      {"model.pred_hidden", &c.model.pred_hidden},
      {"model.verify_hidden", &c.model.verify_hidden},
      {"train.horizon", &c.train.horizon},
      {"train.window", &c.train.window},
      {"train.batch", &c.train.batch},
      {"train.negatives", &c.train.negatives},
      {"train.temporal_negatives", &c.train.temporal_negatives},
      {"train.lr", &c.train.lr},
      {"train.entropy_weight", &c.train.entropy_weight},
      {"train.diversity_weight", &c.train.diversity_weight},
      {"train.pred_weight", &c.train.pred_weight},
      {"train.nce_weight", &c.train.nce_weight},
      {"train.variance_weight", &c.train.variance_weight},
      {"train.variance_floor", &c.train.variance_floor},
      {"train.steps", &c.train.steps},
      {"train.seed", &c.train.seed},
      {"train.tau_start", &c.train.tau_start},
      {"train.tau_decay", &c.train.tau_decay},
      {"train.tau_floor", &c.train.tau_floor},
      {"train.buffer_episodes", &c.train.buffer_episodes},
      {"train.episode_length", &c.train.episode_length},
      {"train.refresh_every", &c.train.refresh_every},
      {"train.checkpoint_every", &c.train.checkpoint_every},
      {"train.eval_every", &c.train.eval_every},
      {"train.adapt_readout_range", &c.train.adapt_readout_range},
      {"train.readout_momentum", &c.train.readout_momentum},
      {"train.planted_slot", &c.train.planted_slot},
      {"train.planted_value", &c.train.planted_value},
      {"eval.episodes", &c.eval.episodes},
      {"eval.episode_length", &c.eval.episode_length},
      {"eval.seed_offset", &c.eval.seed_offset},
      {"eval.probe_epochs", &c.eval.probe_epochs},
      {"eval.probe_lr", &c.eval.probe_lr},
      {"eval.probe_l2", &c.eval.probe_l2},
      {"eval.probe_train_fraction", &c.eval.probe_train_fraction},
      {"eval.mi_bins", &c.eval.mi_bins},
      {"eval.baseline_hidden", &c.eval.baseline_hidden},
      {"eval.baseline_steps", &c.eval.baseline_steps},
      {"eval.baseline_batch", &c.eval.baseline_batch},
      {"eval.baseline_rollouts", &c.eval.baseline_rollouts},
      {"eval.baseline_lr", &c.eval.baseline_lr},
  };
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: bad value '" + v + "' for " + key);
  return out;
}

std::string format_double(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

}  // namespace

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& raw) {
  std::string value = trim(raw);
  if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
  for (auto& [name, field] : fields(cfg)) {
    if (name != key) continue;
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, bool>) {
            if (value == "true") *p = true;
            else if (value == "false") *p = false;
            else throw ConfigError("config: " + key + " expects true or false, got '" + value + "'");
          } else if constexpr (std::is_unsigned_v<T>) {
            if (!value.empty() && value[0] == '-') throw ConfigError("config: " + key + " must be non-negative");
            *p = parse_number<T>(key, value);
          } else {
            *p = parse_number<T>(key, value);
          }
        },
        field);
    return;
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  cfg.sync();
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string RunConfig::to_text() const {
  RunConfig copy = *this;
  std::ostringstream os;
  for (auto& [name, field] : fields(copy)) {
    os << name << " = ";
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, bool>) os << (*p ? "true" : "false");
          else if constexpr (std::is_same_v<T, double>) os << format_double(*p);
          else os << *p;
        },
        field);
    os << '\n';
  }
  return os.str();
}

}  // namespace cplab
