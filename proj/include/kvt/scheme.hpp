#pragma once

#include "kvt/grid.hpp"
#include "kvt/heat_step.hpp"
#include "kvt/material.hpp"
#include "kvt/mech_step.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace kvt {

/// Plain-data description of loads and thermal data; amplitude(t) multiplies the constant vectors.
struct LoadSpec {
  std::string profile = "constant";  // constant | sin2_pulse | ramp | table
  double pulse_time = 0.5;           // sin2_pulse: amp = sin^2(pi t / pulse_time) on [0, pulse_time], 0 after; ramp: min(t / pulse_time, 1)
  std::vector<std::pair<double, double>> table;  // (t, amplitude) knots, piecewise linear, constant outside
  std::vector<double> bulk;                      // body force g (Dim entries, empty = none)
  std::vector<double> traction;                  // surface load f (Dim entries, empty = none)
  std::vector<std::string> traction_faces = {"x+"};
  double theta_b = 0.5;  // boundary temperature
  double theta0 = 0.5;   // initial temperature
};

/// Plain-data scenario; make_scenario turns it into evaluable fields.
struct ScenarioSpec {
  std::string name = "custom";
  int dim = 2;
  std::vector<int> cells = {16, 16};
  std::vector<double> lengths = {1.0, 1.0};
  std::vector<std::string> dirichlet = {"x-"};
  MaterialParams material;
  double T = 1.0;
  LoadSpec loads;
  bool isothermal = false;
};

/// "x-", "y+", "z-", ... to a Face.
Face parse_face(const std::string& s);
std::string face_name(const Face& f);

/// Load amplitude of a LoadSpec at time t.
double load_amplitude(const LoadSpec& ls, double t);

template <int Dim>
struct Scenario {
  std::string name;
  std::shared_ptr<const StructuredGrid<Dim>> grid;
  MaterialModel material;
  double T = 1.0;
  std::function<Vec<Dim>(double, const Vec<Dim>&)> bulk;                   // may be empty
  std::function<Vec<Dim>(double, const Vec<Dim>&, const Face&)> traction;  // may be empty; Dirichlet faces ignored
  std::vector<double> load_knots;  // nonempty: loads are piecewise linear in time between these knots
  std::function<double(double, const Vec<Dim>&)> theta_b;
  NodalField y0;      // empty: identity
  NodalField theta0;  // scalar coefficients
  bool isothermal = false;

  /// Throws ConfigError listing every violated data requirement.
  void validate() const;
};

template <int Dim>
Scenario<Dim> make_scenario(const ScenarioSpec& spec);

/// Snapshot of the discrete solution at one time level.
struct State {
  double t = 0.0;
  NodalField y;
  NodalField theta;
  std::vector<double> w;  // at cell quadrature points
};

/// Data and solver reports of one (sub)step.
struct SubstepRecord {
  double t0 = 0.0;
  double tau = 0.0;
  NodalField load;              // L with <l, y> = L . y, averaged over the substep
  std::vector<double> theta_b;  // averaged regularized boundary temperature at boundary quadrature points
  int mech_iterations = 0;
  double mech_residual = 0.0;
  double mech_initial_residual = 0.0;
  double functional_prev = 0.0;
  double functional_value = 0.0;
  double min_accepted_det = 0.0;
  int heat_iterations = 0;
  double heat_residual = 0.0;
  double min_theta = 0.0;
  double clamp = 0.0;
};

/// One nominal step; more than one substep after local rejection. inner holds the intermediate states.
struct StepRecord {
  std::vector<SubstepRecord> sub;
  std::vector<State> inner;
};

template <int Dim>
struct Trajectory {
  std::shared_ptr<const Scenario<Dim>> scenario;
  double tau = 0.0;
  double eps = 0.0;
  std::vector<State> snapshots;  // k = 0 ... N
  std::vector<StepRecord> steps;  // k = 1 ... N stored at index k - 1

  [[nodiscard]] int num_steps() const { return static_cast<int>(steps.size()); }
  [[nodiscard]] const StructuredGrid<Dim>& grid() const { return *scenario->grid; }
  [[nodiscard]] const MaterialModel& material() const { return scenario->material; }
  [[nodiscard]] bool isothermal() const { return scenario->isothermal; }
  [[nodiscard]] bool complete() const;
};

/// A substep viewed as (previous state, next state, record).
struct Segment {
  const State* prev;
  const State* next;
  const SubstepRecord* rec;
};

/// Substeps making up nominal step k (1-based).
template <int Dim>
std::vector<Segment> step_segments(const Trajectory<Dim>& traj, int k);

struct RunOptions {
  double tau = 0.01;
  double eps = 0.01;
  NewtonOptions mech;
  HeatOptions heat;
  int max_halvings = 4;
  std::function<void(const std::string&)> log;  // warnings and rejections; may be empty
  std::string checkpoint_path;                   // written every checkpoint_every steps when nonempty
  int checkpoint_every = 0;
  std::uint64_t config_hash = 0;
};

/// Initial state and empty step list.
template <int Dim>
Trajectory<Dim> start(std::shared_ptr<const Scenario<Dim>> scenario, double tau, double eps);

/// Runs the staggered scheme from the last snapshot of traj up to T.
template <int Dim>
void advance(Trajectory<Dim>& traj, const RunOptions& opt);

template <int Dim>
Trajectory<Dim> run(std::shared_ptr<const Scenario<Dim>> scenario, const RunOptions& opt);

/// Step-averaged load coefficients and boundary temperature over [t0, t0 + dt].
template <int Dim>
NodalField averaged_load(const Scenario<Dim>& sc, double t0, double dt);
template <int Dim>
std::vector<double> averaged_boundary_temperature(const Scenario<Dim>& sc, double t0, double dt, double eps);
/// Coefficients of theta / (1 + eps theta) (chain rule on the Hermite derivative coefficients).
template <int Dim>
NodalField regularize_temperature(const StructuredGrid<Dim>& grid, const NodalField& theta, double eps);

struct Interpolants {
  State left;    // value of snapshot k on ](k-1) tau, k tau]
  State right;   // value of snapshot k-1 on [(k-1) tau, k tau[
  State affine;  // piecewise affine
};

template <int Dim>
Interpolants interpolants(const Trajectory<Dim>& traj, double t);

struct RefinementCell {
  double tau = 0.0;
  double eps = 0.0;
  int steps = 0;
  int rejected_steps = 0;
  double dissipation = 0.0;       // integral over Q of xi
  double reg_dissipation = 0.0;   // integral over Q of xi_reg
  double eps_rate = 0.0;          // eps |grad ydot|^2_{L^2(Q)}
  double xi_gap = 0.0;            // |xi - xi_reg|_{L^1(Q)}
  double max_theta = 0.0;
  double min_det = 0.0;
};

struct CauchyEntry {
  double coarse = 0.0;  // tau (tau sequence) or eps (eps sequence)
  double fine = 0.0;
  double other = 0.0;   // the fixed parameter
  double dF = 0.0;      // |grad y_a - grad y_b|_{L^2(Q)}
  double dtheta = 0.0;  // |theta_a - theta_b|_{L^2(Q)}
};

struct RefinementReport {
  std::vector<RefinementCell> cells;
  std::vector<CauchyEntry> tau_cauchy;  // successive taus at each eps
  std::vector<CauchyEntry> eps_cauchy;  // successive eps at each tau
};

/// Scalar regularization quantities of a trajectory.
template <int Dim>
RefinementCell summarize(const Trajectory<Dim>& traj);

/// L^2(Q) distances of grad y and theta between two trajectories on the same grid whose partitions nest.
template <int Dim>
std::pair<double, double> trajectory_distance(const Trajectory<Dim>& a, const Trajectory<Dim>& b);

/// Runs every (tau, eps) pair; lists must be sorted decreasing. cell_hook sees every finished trajectory.
template <int Dim>
RefinementReport refinement_study(std::shared_ptr<const Scenario<Dim>> scenario, const std::vector<double>& taus,
                                  const std::vector<double>& eps_list, const RunOptions& opt,
                                  const std::function<void(const Trajectory<Dim>&)>& cell_hook = {});

/// Checkpoint: textual header followed by a little-endian float64 payload of the full trajectory.
template <int Dim>
void save_checkpoint(const std::string& path, const Trajectory<Dim>& traj, std::uint64_t config_hash);
/// Restores a trajectory written by save_checkpoint; the hash must match.
template <int Dim>
Trajectory<Dim> load_checkpoint(const std::string& path, std::shared_ptr<const Scenario<Dim>> scenario,
                                std::uint64_t config_hash);

std::uint64_t fnv1a(const std::string& s);

/// Named scenario with its recommended discretization parameters.
struct Preset {
  ScenarioSpec spec;
  double tau = 0.01;
  double eps = 0.01;
  std::vector<double> tau_list;
  std::vector<double> eps_list;
};

/// steady, shear_pulse, isothermal_creep, refine_tau, refine_eps, insulated_pulse. Throws ConfigError.
Preset preset(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace kvt
