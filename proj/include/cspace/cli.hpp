#pragma once

// Command-line front end. Subcommands print machine-readable output on
// stdout and diagnostics on stderr. Exit codes: 0 ok, 1 usage, 2 infeasible
// or insufficient data.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cspace/arm_config.hpp"
#include "cspace/learning.hpp"
#include "cspace/projection.hpp"
#include "cspace/queries.hpp"
#include "cspace/service.hpp"

#include "CLI11.hpp"

namespace cspace {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitInfeasible = 2;

/// Comma-separated doubles, e.g. "0,0.5,-1".
inline std::vector<double> parse_csv_doubles(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    tok = detail::trim(tok);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (tok.empty() || used != tok.size() || !std::isfinite(v)) {
      throw ContractViolation(what + ": '" + s + "' is not a comma-separated list of numbers");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ContractViolation(what + ": empty list");
  return out;
}

inline Configuration to_config(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// Joint by name, or by 0-based index.
inline int joint_index(const Arm& arm, const std::string& token) {
  const auto names = arm_joint_names(arm);
  for (int i = 0; i < static_cast<int>(names.size()); ++i) {
    if (names[i] == token) return i;
  }
  if (!token.empty() && token.find_first_not_of("0123456789") == std::string::npos) {
    const int i = std::stoi(token);
    if (i < static_cast<int>(names.size())) return i;
  }
  std::string known;
  for (const auto& n : names) known += (known.empty() ? "" : ", ") + n;
  throw ContractViolation("unknown joint '" + token + "' (joints: " + known + ")");
}

/// `euclidean`, `cheap:<joint>`, `expensive:<joint>`, `corr:<i>,<j>,<rho>`,
/// joined with '+' to compose (diagonal terms first, then couplings), or a
/// path to a metric file (text or .json).
inline Metric parse_metric_spec(const std::string& spec, const Arm& arm) {
  const int d = arm_dof(arm);
  if (std::filesystem::exists(spec)) {
    std::ifstream in(spec);
    if (spec.size() > 5 && spec.substr(spec.size() - 5) == ".json") {
      try {
        return metric_from_json(nlohmann::json::parse(in));
      } catch (const nlohmann::json::exception& e) {
        throw ParseError("metric file '" + spec + "': " + e.what());
      }
    }
    const Metric m = parse_metric(in);
    require(m.dim() == d, "metric file '" + spec + "' has dimension " + std::to_string(m.dim()) + ", arm has " +
                              std::to_string(d));
    return m;
  }
  Eigen::VectorXd w = Eigen::VectorXd::Ones(d);
  std::vector<Coupling> pairs;
  std::stringstream ss(spec);
  for (std::string term; std::getline(ss, term, '+');) {
    const auto colon = term.find(':');
    const std::string kind = term.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : term.substr(colon + 1);
    if (kind == "euclidean" && arg.empty()) continue;
    if (kind == "cheap") {
      w[joint_index(arm, arg)] *= kCheapWeight;
    } else if (kind == "expensive") {
      w[joint_index(arm, arg)] *= kExpensiveWeight;
    } else if (kind == "corr") {
      std::vector<std::string> parts;
      std::stringstream as(arg);
      for (std::string p; std::getline(as, p, ',');) parts.push_back(p);
      if (parts.size() != 3) throw ContractViolation("corr preset needs <i>,<j>,<rho>, got '" + arg + "'");
      pairs.push_back({joint_index(arm, parts[0]), joint_index(arm, parts[1]),
                       parse_csv_doubles(parts[2], "corr rho").front()});
    } else {
      throw ContractViolation("unknown metric '" + spec + "': not a file and not a preset");
    }
  }
  return make_correlated(make_weighted(w), pairs);
}

inline Arm load_arm_or_default(const std::string& path) {
  if (path.empty()) return PlanarArm{};
  return load_arm(path);
}

inline std::vector<Query> read_battery_file(const std::string& path) {
  auto b = load_battery(path);
  return std::move(*b);
}

struct CliStreams {
  std::ostream& out;
  std::ostream& err;
};

namespace cli_detail {

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ContractViolation("cannot write '" + path + "'");
  f << text;
}

inline Constraint target_constraint(const Arm& arm, const std::vector<double>& target, std::optional<double> height) {
  if (height) return Constraint::from_target(TaskTarget::height(*height));
  if (target.size() == 2) return Constraint::from_target(TaskTarget::point2(target[0], target[1]));
  if (target.size() == 3) return Constraint::from_target(TaskTarget::point3(target[0], target[1], target[2]));
  (void)arm;
  throw ContractViolation("target must have 2 (planar) or 3 (chain) coordinates, or use --height");
}

}  // namespace cli_detail

/// Parses argv and runs one subcommand.
inline int run_cli(int argc, const char* const* argv, CliStreams io) {
  CLI::App app{"Configuration-space metric toolkit"};
  app.set_config("--config", "", "INI/TOML file with option overrides");
  app.require_subcommand(1);

  std::string arm_path, metric_spec = "euclidean", start_s, target_s, solver_s, out_path, format = "json";
  std::optional<double> height;
  int n = 3600, restarts = 32;
  std::uint64_t seed = 0;
  double delta = 0.05;

  auto* project = app.add_subcommand("project", "Project a start configuration onto a task manifold");
  project->add_option("--arm", arm_path, "arm config file (default: planar 1-1-1)");
  project->add_option("--metric", metric_spec, "metric preset or file");
  project->add_option("--start", start_s, "start configuration, comma-separated")->required();
  project->add_option("--target", target_s, "end-effector target x,y or x,y,z");
  project->add_option("--height", height, "end-effector height target (chain arms)");
  project->add_option("--solver", solver_s, "sweep | multistart (default: sweep for planar points)")
      ->check(CLI::IsMember({"sweep", "multistart"}));
  project->add_option("--n", n, "sweep resolution")->check(CLI::Range(8, 100000000));
  project->add_option("--restarts", restarts, "multistart restarts")->check(CLI::Range(1, 100000));
  project->add_option("--seed", seed, "multistart seed");

  auto* sweep = app.add_subcommand("sweep", "Cost profile along a planar manifold plus sublevel report");
  sweep->add_option("--arm", arm_path, "planar arm config file");
  sweep->add_option("--metric", metric_spec, "metric preset or file");
  sweep->add_option("--start", start_s, "start configuration")->required();
  sweep->add_option("--target", target_s, "target x,y")->required();
  sweep->add_option("--n", n, "sweep resolution")->check(CLI::Range(8, 100000000));
  sweep->add_option("--delta", delta, "relative sublevel threshold")->check(CLI::Range(0.0, 0.999999));
  sweep->add_option("--out", out_path, "CSV path; the sublevel report goes to <out>.sublevel.json and stdout");
  sweep->add_option("--format", format, "stdout format without --out: json (sublevel report) | csv")
      ->check(CLI::IsMember({"json", "csv"}));

  BatterySpec bspec;
  std::vector<double> radius;
  auto* gen = app.add_subcommand("gen", "Generate a query battery");
  gen->add_option("--arm", arm_path, "planar arm config file");
  gen->add_option("--seed", seed, "battery seed")->required();
  gen->add_option("--contraction", bspec.contraction, "contraction queries")->check(CLI::NonNegativeNumber);
  gen->add_option("--expansion", bspec.expansion, "expansion queries")->check(CLI::NonNegativeNumber);
  gen->add_option("--m", bspec.m, "candidates per query")->check(CLI::Range(2, 1000));
  gen->add_option("--radius", radius, "target radius band lo hi")->expected(2);
  gen->add_option("--n", bspec.resolution, "manifold sampling resolution")->check(CLI::Range(8, 100000000));
  gen->add_option("--out", out_path, "battery JSON path (default stdout)");

  std::string battery_path, mode = "exact", criterion_s = "naturalness", task_type_s;
  int respondents = 23;
  auto* synth = app.add_subcommand("synth", "Synthesize answers from a ground-truth metric");
  synth->add_option("--battery", battery_path, "battery JSON")->required();
  synth->add_option("--arm", arm_path, "arm config (for joint names)");
  synth->add_option("--metric", metric_spec, "ground-truth metric, scaled to unit Frobenius norm")->required();
  synth->add_option("--mode", mode, "exact | sampled")->check(CLI::IsMember({"exact", "sampled"}));
  synth->add_option("--respondents", respondents, "simulated respondents per query (sampled mode)");
  synth->add_option("--seed", seed, "sampling seed");
  synth->add_option("--criterion", criterion_s, "criterion tag for the answers");
  synth->add_option("--out", out_path, "dataset JSONL path (default stdout)");

  std::string dataset_path, param = "full", metric_out;
  LearnOptions lopts;
  auto* learn_cmd = app.add_subcommand("learn", "Learn a metric from a preference dataset");
  learn_cmd->add_option("--dataset", dataset_path, "dataset JSONL")->required();
  learn_cmd->add_option("--criterion", criterion_s, "criterion to learn");
  learn_cmd->add_option("--task-type", task_type_s, "contraction | expansion (default: both)");
  learn_cmd->add_option("--parameterization", param, "full | diagonal")->check(CLI::IsMember({"full", "diagonal"}));
  learn_cmd->add_option("--max-iters", lopts.max_iters, "iteration cap per start")->check(CLI::PositiveNumber);
  learn_cmd->add_option("--tolerance", lopts.tolerance, "stop when the objective improves by less");
  learn_cmd->add_option("--seed", seed, "seed for random starts");
  learn_cmd->add_option("--out", metric_out, "learned metric text file");
  learn_cmd->add_option("--report", out_path, "report JSON path (also printed on stdout)");

  std::string host = "0.0.0.0", log_path, static_dir;
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Run the preference-study HTTP service");
  serve->add_option("--arm", arm_path, "planar arm config (link lengths sent to the UI)");
  serve->add_option("--battery", battery_path, "battery JSON");
  serve->add_option("--log-path", log_path, "append-only answer log (JSON Lines)");
  serve->add_option("--static-dir", static_dir, "directory of UI assets served at /");
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "TCP port")->check(CLI::Range(0, 65535));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    io.out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    io.out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*project) {
      const Arm arm = load_arm_or_default(arm_path);
      const Metric metric = parse_metric_spec(metric_spec, arm);
      const Configuration q0 = to_config(parse_csv_doubles(start_s, "--start"));
      require(q0.size() == arm_dof(arm), "--start needs " + std::to_string(arm_dof(arm)) + " joint angles");
      const std::vector<double> tgt = target_s.empty() ? std::vector<double>{} : parse_csv_doubles(target_s, "--target");
      if (!height && tgt.empty()) throw ContractViolation("give --target or --height");
      const Constraint c = cli_detail::target_constraint(arm, tgt, height);
      MultistartOptions mo;
      mo.restarts = restarts;
      mo.seed = seed;
      ProjectionResult r;
      if (const auto* pa = std::get_if<PlanarArm>(&arm)) {
        const bool use_sweep = solver_s.empty() ? c.kind == Constraint::Kind::Point2 : solver_s == "sweep";
        if (use_sweep) {
          require(c.kind == Constraint::Kind::Point2, "the sweep solver needs a planar point target");
          r = project_sweep(*pa, q0, c.value.head<2>(), metric, n);
        } else {
          r = project_multistart(*pa, q0, c, metric, mo);
        }
      } else {
        require(solver_s != "sweep", "the sweep solver handles planar arms only");
        r = project_multistart(std::get<ChainArm>(arm), q0, c, metric, mo);
      }
      io.out << to_json(r).dump() << "\n";
      return kExitOk;
    }

    if (*sweep) {
      const Arm arm = load_arm_or_default(arm_path);
      const auto* pa = std::get_if<PlanarArm>(&arm);
      require(pa != nullptr, "sweep needs a planar arm");
      const Metric metric = parse_metric_spec(metric_spec, arm);
      const Configuration q0 = to_config(parse_csv_doubles(start_s, "--start"));
      require(q0.size() == 3, "--start needs 3 joint angles");
      const auto tv = parse_csv_doubles(target_s, "--target");
      require(tv.size() == 2, "--target needs x,y");
      const Eigen::Vector2d t(tv[0], tv[1]);
      const SublevelReport rep = sublevel_components(*pa, q0, t, metric, delta, n);
      if (!out_path.empty()) {
        std::ostringstream csv;
        write_cost_profile_csv(csv, *pa, q0, t, metric, n);
        cli_detail::write_text(out_path, csv.str());
        cli_detail::write_text(out_path + ".sublevel.json", to_json(rep).dump() + "\n");
        io.out << to_json(rep).dump() << "\n";
      } else if (format == "csv") {
        write_cost_profile_csv(io.out, *pa, q0, t, metric, n);
      } else {
        io.out << to_json(rep).dump() << "\n";
      }
      return kExitOk;
    }

    if (*gen) {
      const Arm arm = load_arm_or_default(arm_path);
      const auto* pa = std::get_if<PlanarArm>(&arm);
      require(pa != nullptr, "query batteries are generated for planar arms");
      if (!radius.empty()) {
        bspec.radius_lo = radius[0];
        bspec.radius_hi = radius[1];
      }
      const std::string text = battery_to_json(generate_battery(*pa, bspec, seed)).dump() + "\n";
      if (out_path.empty()) {
        io.out << text;
      } else {
        cli_detail::write_text(out_path, text);
      }
      return kExitOk;
    }

    if (*synth) {
      const auto battery = read_battery_file(battery_path);
      require(!battery.empty(), "battery is empty");
      const Arm arm = arm_path.empty() ? Arm(PlanarArm{}) : load_arm(arm_path);
      const Metric truth = frobenius_normalize(parse_metric_spec(metric_spec, arm));
      const auto ds = synth_answers(truth, battery, mode == "exact" ? SynthMode::Exact : SynthMode::Sampled, seed,
                                    respondents, criterion_from_string(criterion_s));
      std::ostringstream s;
      write_dataset_jsonl(s, ds);
      if (out_path.empty()) {
        io.out << s.str();
      } else {
        cli_detail::write_text(out_path, s.str());
      }
      return kExitOk;
    }

    if (*learn_cmd) {
      std::ifstream in(dataset_path);
      if (!in) throw ContractViolation("cannot read dataset '" + dataset_path + "'");
      const PreferenceDataset all = read_dataset_jsonl(in);
      const Criterion crit = criterion_from_string(criterion_s);
      std::optional<TaskType> type;
      if (!task_type_s.empty()) type = task_type_from_string(task_type_s);
      PreferenceDataset ds;
      ds.arm = all.arm;
      ds.task_type = type;
      for (const auto& it : all.items) {
        if (it.dist.criterion == crit && (!type || it.query.task_type == *type)) ds.items.push_back(it);
      }
      if (ds.empty()) {
        io.err << "error: dataset '" << dataset_path << "' has no answers for criterion " << to_string(crit)
               << (type ? std::string(" and task type ") + to_string(*type) : std::string()) << "\n";
        return kExitInfeasible;
      }
      lopts.parameterization = parameterization_from_string(param);
      lopts.seed = seed;
      const nlohmann::json rep = learn_and_report(ds, crit, type, lopts);
      const std::string text = rep.dump() + "\n";
      if (!metric_out.empty()) cli_detail::write_text(metric_out, format_metric(metric_from_json(rep["metric"])));
      if (!out_path.empty()) cli_detail::write_text(out_path, text);
      io.out << text;
      return kExitOk;
    }

    if (*serve) {
      ServiceOptions so;
      const Arm arm = load_arm_or_default(arm_path);
      const auto* pa = std::get_if<PlanarArm>(&arm);
      require(pa != nullptr, "the study service drives planar arms");
      so.arm = *pa;
      if (!battery_path.empty()) so.battery = read_battery_file(battery_path);
      so.log_path = log_path;
      so.static_dir = static_dir;
      StudyService svc(std::move(so));
      io.err << "listening on " << host << ":" << port << "\n";
      if (!svc.listen(host, port)) {
        io.err << "error: cannot listen on " << host << ":" << port << "\n";
        return kExitUsage;
      }
      return kExitOk;
    }
  } catch (const Unreachable& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const Infeasible& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const InsufficientDiversity& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace cspace
