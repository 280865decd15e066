#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "cplab/config.hpp"
#include "cplab/harness.hpp"
#include "cplab/training.hpp"

#ifndef CPLAB_VERSION
#define CPLAB_VERSION "unknown"
#endif

using namespace cplab;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kNumerical = 3 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> steps;
  std::string out;
  std::vector<std::string> sets;
  std::string checkpoint;
  std::string baseline;
  bool no_baseline = false;
  std::size_t states = 20;
  std::optional<int> horizon;
};

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return os.str();
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = load_config(c.config);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (c.seed) cfg.train.seed = *c.seed;
  if (c.steps) cfg.train.steps = *c.steps;
  cfg.sync();
  cfg.validate();
  return cfg;
}

void write_manifest(const fs::path& out, const std::string& command, const RunConfig& cfg,
                    const std::vector<std::string>& argv) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["argv"] = argv;
  std::string line;
  for (const auto& a : argv) line += (line.empty() ? "" : " ") + a;
  j["command_line"] = line;
  j["seed"] = cfg.train.seed;
  j["version"] = CPLAB_VERSION;
  j["config"] = cfg.to_text();
  std::ofstream(out / "manifest.json") << j.dump(2) << "\n";
}

BaselineModel load_baseline(const RunConfig& cfg, const fs::path& path) {
  SeededRng rng(0);
  BaselineModel m = init_baseline(cfg, rng);
  m.params = load_checkpoint(path);
  return m;
}

ParameterStore need_checkpoint(const Common& c) {
  if (c.checkpoint.empty()) throw CLI::RequiredError("--checkpoint");
  return load_checkpoint(c.checkpoint);
}

int run_train(const Common& c, const RunConfig& cfg, const fs::path& out) {
  const auto outputs = train(cfg, out, {.on_eval = {}, .on_step = [](std::uint64_t step, const LossBreakdown& l) {
                               if (step % 500 == 0)
                                 std::printf("step %llu total %.4f nce %.4f pred %.4f\n",
                                             static_cast<unsigned long long>(step), l.total, l.nce, l.pred);
                             }});
  (void)c;
  std::printf("final checkpoint %s\n", outputs.final_checkpoint.c_str());
  return kOk;
}

int run_eval(const Common& c, const RunConfig& cfg, const fs::path& out) {
  const ParameterStore store = need_checkpoint(c);
  EvalOptions opt;
  opt.baseline = !c.no_baseline;
  if (opt.baseline && !c.baseline.empty()) opt.trained_baseline = load_baseline(cfg, c.baseline);
  EvalData data;
  const std::vector<EvalReport> reports = {evaluate(store, cfg, cfg.train.seed, opt, &data)};
  write_report(out, reports, data.statements);
  const EvalReport& r = reports[0];
  std::printf("conscious %.4f full_h %.4f random_k %.4f oracle %.4f baseline %.4f verifier %.4f\n", r.conscious.auc,
              r.full_h.auc, r.random_k.auc, r.oracle.auc, opt.baseline ? r.baseline.auc : 0.0, r.statements.auc);
  return kOk;
}

int run_probe(const Common& c, const RunConfig& cfg, const fs::path& out) {
  const ParameterStore store = need_checkpoint(c);
  const EvalReport r = evaluate(store, cfg, cfg.train.seed, {.baseline = false, .trained_baseline = {}});
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& p : r.probes) {
    j.push_back(p.to_json());
    std::printf("%s pile %d auc %.4f acc %.4f n_test %zu\n", p.source.c_str(), p.pile, p.auc, p.accuracy, p.n_test);
  }
  std::ofstream(out / "probes.json") << j.dump(2) << "\n";
  return kOk;
}

int run_statements(const Common& c, const RunConfig& cfg, const fs::path& out) {
  const ParameterStore store = need_checkpoint(c);
  const EvalData data = collect_eval(store, cfg, cfg.train.seed);
  std::ofstream tsv(out / "statements.tsv");
  for (const auto& s : data.statements) tsv << s.tsv() << "\n";
  const auto res = resolve_statements(data.statements);
  std::printf("verifier auc %.4f resolved %zu skipped %zu correct %zu\n", res.auc, res.resolved, res.skipped,
              res.correct);
  return kOk;
}

int run_gradcheck(const RunConfig& cfg, const fs::path& out) {
  const auto entries = gradient_suite(cfg.model, cfg.train.seed);
  double worst = 0.0;
  bool ok = true;
  std::ofstream csv(out / "gradcheck.csv");
  csv << "name,composite,points,max_error,pass\n";
  for (const auto& e : entries) {
    worst = std::max(worst, e.max_error);
    ok = ok && e.pass();
    csv << e.name << "," << e.composite << "," << e.points << "," << e.max_error << "," << e.pass() << "\n";
    std::printf("%-40s %.3e %s\n", e.name.c_str(), e.max_error, e.pass() ? "ok" : "FAIL");
  }
  std::printf("max error %.3e\n", worst);
  return ok ? kOk : kNumerical;
}

int run_oracle(const Common& c, const RunConfig& cfg, const fs::path& out) {
  const int horizon = c.horizon.value_or(cfg.train.horizon);
  SeededRng rng = SeededRng(cfg.train.seed).fork("oracle-states");
  std::ofstream csv(out / "oracle.csv");
  const std::string header = "state_id,pile,K,probability";
  csv << header << "\n";
  std::printf("%s\n", header.c_str());
  for (std::size_t id = 0; id < c.states; ++id) {
    WorldState s = reset(cfg.env, rng);
    for (std::uint64_t n = rng.below(8); n > 0; --n) s = step(cfg.env, s, rng).state;
    for (int p = 0; p < cfg.env.piles; ++p) {
      const double prob = oracle_fall_prob(cfg.env, s, p, horizon);
      std::ostringstream row;
      row << id << "," << p << "," << horizon << "," << std::setprecision(17) << prob;
      csv << row.str() << "\n";
      std::printf("%s\n", row.str().c_str());
    }
  }
  return kOk;
}

int run_baseline(const RunConfig& cfg, const fs::path& out) {
  SeededRng init = SeededRng(cfg.train.seed).fork("baseline-init");
  BaselineModel m = init_baseline(cfg, init);
  const auto losses = train_baseline(m, cfg);
  save_checkpoint(m.params, out / "baseline.bin");
  std::ofstream csv(out / "baseline_loss.csv");
  csv << "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) csv << i << "," << losses[i] << "\n";
  // Event rows come from the evaluation stream; the conscious parameters only
  // shape the unused statement fields.
  const EvalData data = collect_eval(initial_params(cfg), cfg, cfg.train.seed);
  const SourceAuc a = baseline_auc(m, data, cfg, cfg.train.seed);
  nlohmann::ordered_json j;
  j["auc"] = a.auc;
  j["per_pile"] = a.per_pile;
  j["n"] = a.n;
  j["final_loss"] = losses.empty() ? 0.0 : losses.back();
  std::ofstream(out / "baseline.json") << j.dump(2) << "\n";
  std::printf("baseline auc %.4f final loss %.4f\n", a.auc, losses.empty() ? 0.0 : losses.back());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse conscious-state model on a block-pile world"};
  app.require_subcommand(1);
  Common c;
  const std::vector<std::string> args(argv, argv + argc);

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", c.config, "Config file (key = value)")->required();
    sub->add_option("--seed", c.seed, "Overrides train.seed");
    sub->add_option("--out", c.out, "Output directory (default ./runs/<timestamp>)");
    sub->add_option("--steps", c.steps, "Overrides train.steps");
    sub->add_option("--set", c.sets, "Extra key=value overrides");
  };
  auto* train_cmd = app.add_subcommand("train", "Train the conscious model");
  auto* eval_cmd = app.add_subcommand("eval", "Full evaluation report for a checkpoint");
  auto* oracle_cmd = app.add_subcommand("oracle", "Exact fall probabilities for random world states");
  auto* probe_cmd = app.add_subcommand("probe", "Linear probes on a checkpoint");
  auto* stmt_cmd = app.add_subcommand("statements", "Dump and resolve statements for a checkpoint");
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  auto* base_cmd = app.add_subcommand("baseline", "Train and score the pixel baseline");
  for (auto* sub : {train_cmd, eval_cmd, oracle_cmd, probe_cmd, stmt_cmd, grad_cmd, base_cmd}) add_common(sub);
  for (auto* sub : {eval_cmd, probe_cmd, stmt_cmd})
    sub->add_option("--checkpoint", c.checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
  eval_cmd->add_option("--baseline", c.baseline, "Trained baseline checkpoint")->check(CLI::ExistingFile);
  eval_cmd->add_flag("--no-baseline", c.no_baseline, "Skip the pixel baseline");
  oracle_cmd->add_option("--states", c.states, "Number of random world states");
  oracle_cmd->add_option("--horizon", c.horizon, "Horizon K (default train.horizon)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  RunConfig cfg;
  try {
    cfg = resolve_config(c);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  }

  const fs::path out = c.out.empty() ? fs::path("runs") / timestamp() : fs::path(c.out);
  try {
    fs::create_directories(out);
    write_manifest(out, command, cfg, args);
    if (command == "train") return run_train(c, cfg, out);
    if (command == "eval") return run_eval(c, cfg, out);
    if (command == "probe") return run_probe(c, cfg, out);
    if (command == "statements") return run_statements(c, cfg, out);
    if (command == "gradcheck") return run_gradcheck(cfg, out);
    if (command == "oracle") return run_oracle(c, cfg, out);
    if (command == "baseline") return run_baseline(cfg, out);
  } catch (const NumericalAbort& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kNumerical;
  } catch (const CLI::RequiredError& e) {
    std::cerr << e.what() << "\n" << sub->help();
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
