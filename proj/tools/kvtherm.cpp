// kvtherm: batch front end. Exit codes: 0 all certificates passed, 1 a certificate failed,
// 2 invalid configuration, 3 the run itself failed.

#include "CLI11.hpp"
#include "kvt/cli_io.hpp"
#include "kvt/errors.hpp"

#include <iostream>

namespace {

kvt::RunConfig load(const std::string& path) { return kvt::parse_config(kvt::load_config_text(path)); }

/// Re-validates a config after command line overrides.
kvt::RunConfig revalidate(const kvt::RunConfig& c) { return kvt::parse_config(kvt::serialize_config(c)); }

int report(const kvt::CommandResult& r) {
  for (const auto& c : r.certificates)
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
  std::cout << (r.exit_code == 0 ? "all certificates passed" : "some certificates failed") << "\n";
  return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Staggered solver for large-strain thermoviscoelasticity with a certificate suite"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress progress messages");

  std::string sim_cfg, sim_out;
  double sim_tau = 0.0, sim_eps = -1.0;
  bool sim_iso = false, sim_resume = false;
  auto* sim = app.add_subcommand("simulate", "run one trajectory and write its diagnostics");
  sim->add_option("config", sim_cfg, "configuration file or preset name")->required();
  sim->add_option("--tau", sim_tau, "time step");
  sim->add_option("--eps", sim_eps, "regularization parameter");
  sim->add_flag("--isothermal", sim_iso, "drop the thermal coupling");
  sim->add_option("--out", sim_out, "output directory");
  sim->add_flag("--resume", sim_resume, "continue from the checkpoint in the output directory");

  std::string ref_cfg, ref_out;
  std::vector<double> ref_taus, ref_eps;
  auto* ref = app.add_subcommand("refine", "run a (tau, eps) refinement study");
  ref->add_option("config", ref_cfg, "configuration file or preset name")->required();
  ref->add_option("--tau-list", ref_taus, "decreasing time steps")->delimiter(',');
  ref->add_option("--eps-list", ref_eps, "decreasing regularization parameters")->delimiter(',');
  ref->add_option("--out", ref_out, "output directory");

  std::string val_cfg;
  bool val_print = false;
  auto* val = app.add_subcommand("validate", "check a configuration and list every problem");
  val->add_option("config", val_cfg, "configuration file or preset name")->required();
  val->add_flag("--print", val_print, "print the canonical form of a valid configuration");

  CLI11_PARSE(app, argc, argv);

  const kvt::Logger log = [quiet](const std::string& s) {
    if (!quiet) std::cerr << "[kvtherm] " << s << "\n";
  };

  try {
    if (*val) {
      const auto errs = kvt::config_violations(kvt::load_config_text(val_cfg));
      if (!errs.empty()) {
        for (const auto& e : errs) std::cout << "error: " << e << "\n";
        return 2;
      }
      const auto c = load(val_cfg);
      std::cout << "valid\n";
      if (val_print) std::cout << kvt::serialize_config(c);
      return 0;
    }
    if (*sim) {
      auto c = load(sim_cfg);
      if (sim_tau > 0.0) c.tau = sim_tau;
      if (sim_eps >= 0.0) c.eps = sim_eps;
      if (sim_iso) c.spec.isothermal = true;
      if (!sim_out.empty()) c.out_dir = sim_out;
      c = revalidate(c);
      return report(kvt::simulate(c, log, sim_resume));
    }
    if (*ref) {
      auto c = load(ref_cfg);
      if (!ref_taus.empty()) c.tau_list = ref_taus;
      if (!ref_eps.empty()) c.eps_list = ref_eps;
      if (!ref_out.empty()) c.out_dir = ref_out;
      c = revalidate(c);
      return report(kvt::refine(c, log));
    }
  } catch (const kvt::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
