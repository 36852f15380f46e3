// Command-line front end: validate, simulate, moments, chain, constants,
// triangulate, dissipation. Exit 0 on success, 1 on a failed check or a
// numerical/model error, 2 on malformed input.

#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "shellsde/errors.hpp"
#include "shellsde/experiments.hpp"

using namespace shellsde;

namespace {

struct Overrides {
  std::string config_path;
  std::string model;
  std::string system, scheme, boundary, grid, forward_mode, out;
  std::optional<int> shells, paths, replicates, max_level, threads, grid_count, visit_shells,
      compare_shells;
  std::optional<double> dt, horizon, energy, grid_min;
  std::optional<long> max_jumps;
  std::optional<std::uint64_t> seed;
  std::vector<double> initial, record_times;
  std::vector<int> dissipation_shells;
};

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c;
  if (!o.config_path.empty()) c = config_from_json(read_json_file(o.config_path));
  if (!o.model.empty()) {
    // Inline JSON, preset string or path.
    if (o.model.front() == '{')
      c.model = parse_json_text(o.model, "--model");
    else
      c.model = o.model;
  }
  if (!o.system.empty()) c.system = parse_system(o.system);
  if (!o.scheme.empty()) c.scheme = parse_scheme(o.scheme);
  if (!o.boundary.empty()) c.boundary = parse_boundary(o.boundary);
  if (!o.forward_mode.empty()) c.forward_mode = parse_forward_mode(o.forward_mode);
  if (!o.grid.empty()) {
    if (o.grid != "geometric" && o.grid != "uniform")
      throw ParseError("--grid must be geometric or uniform", 0, 0);
    c.grid = o.grid;
  }
  if (!o.out.empty()) c.out = o.out;
  if (o.shells) c.shells = *o.shells;
  if (o.paths) c.paths = *o.paths;
  if (o.replicates) c.replicates = *o.replicates;
  if (o.max_level) c.max_level = *o.max_level;
  if (o.max_jumps) c.max_jumps = *o.max_jumps;
  if (o.threads) c.threads = *o.threads;
  if (o.grid_count) c.grid_count = *o.grid_count;
  if (o.grid_min) c.grid_min = *o.grid_min;
  if (o.visit_shells) c.visit_shells = *o.visit_shells;
  if (o.compare_shells) c.compare_shells = *o.compare_shells;
  if (o.dt) c.dt = *o.dt;
  if (o.horizon) c.horizon = *o.horizon;
  if (o.energy) c.energy = *o.energy;
  if (o.seed) c.seed = *o.seed;
  if (!o.initial.empty()) c.initial = o.initial;
  if (!o.record_times.empty()) c.record_times = o.record_times;
  if (!o.dissipation_shells.empty()) c.dissipation_shells = o.dissipation_shells;
  return c;
}

void summarize(const std::string& name, const CommandResult& r) {
  std::cout << name << ": " << (r.exit_code == 0 ? "ok" : "FAILED") << "\n";
  for (const auto& f : r.files) std::cout << "  wrote " << f << "\n";
  if (name == "validate" && r.report.contains("checks"))
    for (const auto& c : r.report["checks"])
      std::cout << "  " << (c["passed"].get<bool>() ? "pass " : "FAIL ")
                << c["name"].get<std::string>()
                << (c.contains("detail") && !c["detail"].get<std::string>().empty()
                        ? ": " + c["detail"].get<std::string>()
                        : "")
                << "\n";
  if (r.report.contains("warnings"))
    for (const auto& w : r.report["warnings"]) std::cout << "  warning: " << w.get<std::string>() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic shell model toolkit"};
  app.require_subcommand(1);
  Overrides o;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"validate", "check a model against the structural requirements"},
      {"simulate", "Monte Carlo ensemble of the truncated SDE"},
      {"moments", "solve the closed second-moment equation"},
      {"chain", "simulate the shell-hopping jump chain"},
      {"constants", "compute the decay constants"},
      {"triangulate", "compare SDE, moment equation and jump chain"},
      {"dissipation", "anomalous dissipation diagnostics"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config_path, "JSON config file (or a previous result file)");
    sub->add_option("--model", o.model, "preset string, model file, or inline JSON");
    sub->add_option("--seed", o.seed);
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--threads", o.threads);
    sub->add_option("--shells", o.shells, "truncation level N");
    sub->add_option("--initial", o.initial, "flattened initial condition")->delimiter(',');
    sub->add_option("--times", o.record_times, "report times")->delimiter(',');
    if (name == "simulate" || name == "triangulate" || name == "dissipation") {
      sub->add_option("--system", o.system, "nonlinear | linear");
      sub->add_option("--scheme", o.scheme, "em | conservative | exponential");
      sub->add_option("--boundary", o.boundary, "conservative | absorbing");
      sub->add_option("--dt", o.dt);
      sub->add_option("--paths", o.paths);
    }
    if (name != "validate" && name != "constants") sub->add_option("--horizon", o.horizon);
    if (name == "moments" || name == "chain" || name == "dissipation") {
      sub->add_option("--grid", o.grid, "geometric | uniform");
      sub->add_option("--grid-min", o.grid_min);
      sub->add_option("--grid-count", o.grid_count);
    }
    if (name == "moments" || name == "triangulate" || name == "dissipation")
      sub->add_option("--forward", o.forward_mode, "auto | spectral | expm | implicit");
    if (name == "chain" || name == "triangulate") {
      sub->add_option("--replicates", o.replicates);
      sub->add_option("--max-jumps", o.max_jumps);
    }
    if (name == "chain") sub->add_option("--max-level", o.max_level);
    if (name == "triangulate") sub->add_option("--compare-shells", o.compare_shells);
    if (name == "constants" || name == "dissipation") {
      sub->add_option("--energy", o.energy, "||x||^2");
      sub->add_option("--visit-shells", o.visit_shells);
    }
    if (name == "dissipation")
      sub->add_option("--levels", o.dissipation_shells, "truncation levels")->delimiter(',');
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    const auto config = resolve(o);
    CommandResult r;
    if (name == "validate") r = cmd_validate(config);
    else if (name == "simulate") r = cmd_simulate(config);
    else if (name == "moments") r = cmd_moments(config);
    else if (name == "chain") r = cmd_chain(config);
    else if (name == "constants") r = cmd_constants(config);
    else if (name == "triangulate") r = cmd_triangulate(config);
    else r = cmd_dissipation(config);
    summarize(name, r);
    return r.exit_code;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const StructuralError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ModelError& e) {
    std::cerr << "model error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
