#include "kvt/scheme.hpp"

#include "kvt/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace kvt {

namespace {

// 3-point Gauss rule on [0, 1]
constexpr double kG3x[3] = {0.5 - 0.3872983346207417, 0.5, 0.5 + 0.3872983346207417};
constexpr double kG3w[3] = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};

void log_msg(const RunOptions& opt, const std::string& s) {
  if (opt.log) opt.log(s);
}

/// Time nodes and weights averaging over [t0, t0 + dt]: Gauss for smooth data, trapezoid on knots otherwise.
std::vector<std::pair<double, double>> time_rule(const std::vector<double>& knots, double t0, double dt) {
  std::vector<std::pair<double, double>> r;
  if (knots.empty()) {
    for (int i = 0; i < 3; ++i) r.emplace_back(t0 + kG3x[i] * dt, kG3w[i]);
    return r;
  }
  std::vector<double> ts{t0};
  for (double k : knots)
    if (k > t0 && k < t0 + dt) ts.push_back(k);
  ts.push_back(t0 + dt);
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    const double w = 0.5 * (ts[i + 1] - ts[i]) / dt;
    r.emplace_back(ts[i], w);
    r.emplace_back(ts[i + 1], w);
  }
  return r;
}

/// Set partitions of a bitmask, each partition a list of blocks.
void partitions(int S, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
  if (S == 0) {
    out.push_back(cur);
    return;
  }
  const int low = S & -S;
  const int rest = S & ~low;
  // every subset B of rest, block = low | B
  for (int B = rest;; B = (B - 1) & rest) {
    cur.push_back(low | B);
    partitions(S & ~(low | B), cur, out);
    cur.pop_back();
    if (B == 0) break;
  }
}

double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

template <int Dim>
void write_state(std::ostream& os, const State& s);
template <int Dim>
State read_state(std::istream& is, Eigen::Index ny, Eigen::Index nt, std::size_t nq);

void put(std::ostream& os, double v) {
  static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void put(std::ostream& os, const Eigen::VectorXd& v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}
void put(std::ostream& os, const std::vector<double>& v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}
double get(std::istream& is) {
  double v;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
void get(std::istream& is, Eigen::VectorXd& v, Eigen::Index n) {
  v.resize(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
}
void get(std::istream& is, std::vector<double>& v, std::size_t n) {
  v.resize(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
}

template <int Dim>
void write_state(std::ostream& os, const State& s) {
  put(os, s.t);
  put(os, s.y);
  put(os, s.theta);
  put(os, s.w);
}

template <int Dim>
State read_state(std::istream& is, Eigen::Index ny, Eigen::Index nt, std::size_t nq) {
  State s;
  s.t = get(is);
  get(is, s.y, ny);
  get(is, s.theta, nt);
  get(is, s.w, nq);
  return s;
}

constexpr int kRecordScalars = 13;

void write_record(std::ostream& os, const SubstepRecord& r) {
  for (double v : {r.t0, r.tau, static_cast<double>(r.mech_iterations), r.mech_residual, r.mech_initial_residual,
                   r.functional_prev, r.functional_value, r.min_accepted_det, static_cast<double>(r.heat_iterations),
                   r.heat_residual, r.min_theta, r.clamp, 0.0})
    put(os, v);
  put(os, r.load);
  put(os, r.theta_b);
}

SubstepRecord read_record(std::istream& is, Eigen::Index ny, std::size_t nf) {
  double v[kRecordScalars];
  for (double& x : v) x = get(is);
  SubstepRecord r;
  r.t0 = v[0];
  r.tau = v[1];
  r.mech_iterations = static_cast<int>(v[2]);
  r.mech_residual = v[3];
  r.mech_initial_residual = v[4];
  r.functional_prev = v[5];
  r.functional_value = v[6];
  r.min_accepted_det = v[7];
  r.heat_iterations = static_cast<int>(v[8]);
  r.heat_residual = v[9];
  r.min_theta = v[10];
  r.clamp = v[11];
  get(is, r.load, ny);
  get(is, r.theta_b, nf);
  return r;
}

int step_count(double T, double tau) {
  const double n = T / tau;
  const double r = std::round(n);
  if (!(tau > 0) || r < 1 || std::abs(n - r) > 1e-9 * std::max(1.0, n)) {
    std::ostringstream os;
    os << "T / tau must be a positive integer (T = " << T << ", tau = " << tau << ")";
    throw ConfigError(os.str());
  }
  return static_cast<int>(r);
}

template <int Dim>
std::pair<State, SubstepRecord> substep(const Scenario<Dim>& sc, const State& s, double t0, double dt, double t1,
                                        double eps, const RunOptions& opt) {
  const auto& g = *sc.grid;
  SubstepRecord rec;
  rec.t0 = t0;
  rec.tau = dt;
  rec.load = averaged_load(sc, t0, dt);
  rec.theta_b = averaged_boundary_temperature(sc, t0, dt, eps);

  MechIncrement<Dim> mi;
  mi.grid = &g;
  mi.material = &sc.material;
  mi.y_prev = s.y;
  mi.theta_prev = s.theta;
  mi.tau = dt;
  mi.eps = eps;
  mi.load = rec.load;
  mi.coupled = !sc.isothermal;
  const auto mr = solve_mech(mi, opt.mech);
  rec.mech_iterations = mr.iterations;
  rec.mech_residual = mr.residual_norm;
  rec.mech_initial_residual = mr.initial_residual;
  rec.functional_prev = mr.functional_prev;
  rec.functional_value = mr.functional_value;
  rec.min_accepted_det = mr.min_accepted_det;

  State nx;
  nx.t = t1;
  nx.y = mr.y_new;
  if (sc.isothermal) {
    nx.theta = s.theta;
    nx.w = enthalpy_field(g, sc.material, nx.y, nx.theta);
    rec.min_theta = min_scalar(g, nx.theta);
  } else {
    HeatIncrement<Dim> hi;
    hi.grid = &g;
    hi.material = &sc.material;
    hi.y_prev = s.y;
    hi.y_new = nx.y;
    hi.theta_prev = s.theta;
    hi.w_prev = s.w;
    hi.tau = dt;
    hi.eps = eps;
    hi.theta_b = rec.theta_b;
    auto hr = solve_heat(hi, opt.heat);
    rec.heat_iterations = hr.iterations;
    rec.heat_residual = hr.residual_norm;
    rec.min_theta = hr.min_theta;
    rec.clamp = hr.clamp;
    if (!hr.positive) {
      std::ostringstream os;
      os << "t = " << t1 << ": temperature minimum " << hr.min_theta << " below -tol_pos; consumers clamp to 0";
      log_msg(opt, os.str());
    }
    nx.theta = std::move(hr.theta_new);
    nx.w = std::move(hr.w_new);
  }
  return {std::move(nx), std::move(rec)};
}

}  // namespace

Face parse_face(const std::string& s) {
  if (s.size() != 2 || (s[1] != '-' && s[1] != '+') || s[0] < 'x' || s[0] > 'z')
    throw ConfigError("invalid face name '" + s + "' (expected x-, x+, y-, y+, z-, z+)");
  return Face{s[0] - 'x', s[1] == '+' ? 1 : 0};
}

std::string face_name(const Face& f) {
  return std::string(1, static_cast<char>('x' + f.axis)) + (f.side ? "+" : "-");
}

double load_amplitude(const LoadSpec& ls, double t) {
  if (ls.profile == "constant") return 1.0;
  if (ls.profile == "sin2_pulse") {
    if (t >= ls.pulse_time) return 0.0;
    const double s = std::sin(M_PI * t / ls.pulse_time);
    return s * s;
  }
  if (ls.profile == "ramp") return std::min(t / ls.pulse_time, 1.0);
  if (ls.profile == "table") {
    const auto& tb = ls.table;
    if (tb.empty()) return 0.0;
    if (t <= tb.front().first) return tb.front().second;
    if (t >= tb.back().first) return tb.back().second;
    for (std::size_t i = 0; i + 1 < tb.size(); ++i)
      if (t <= tb[i + 1].first) {
        const double s = (t - tb[i].first) / (tb[i + 1].first - tb[i].first);
        return (1 - s) * tb[i].second + s * tb[i + 1].second;
      }
    return tb.back().second;
  }
  throw ConfigError("unknown load profile '" + ls.profile + "'");
}

template <int Dim>
void Scenario<Dim>::validate() const {
  std::vector<std::string> errs;
  if (!grid) throw ConfigError("scenario has no grid");
  const auto& g = *grid;
  if (!(T > 0)) errs.push_back("T > 0 violated");
  for (const auto& e : check_params(material.params(), Dim)) errs.push_back(e);
  if (theta0.size() != g.ndofs(1)) {
    errs.push_back("theta0 has the wrong size");
  } else if (min_scalar(g, theta0) < 0.0) {
    errs.push_back("theta0 >= 0 violated");
  }
  if (theta_b) {
    double mn = 0.0;
    const int nt = 11;
    for (int i = 0; i < nt; ++i) {
      const double t = T * i / (nt - 1);
      for (const auto& bf : g.boundary_faces())
        for (int q = 0; q < StructuredGrid<Dim>::kFaceQP; ++q) mn = std::min(mn, theta_b(t, g.face_qp_coord(bf, q)));
    }
    if (mn < 0.0) errs.push_back("theta_b >= 0 violated");
  } else {
    errs.push_back("theta_b is required");
  }
  const NodalField y = y0.size() ? y0 : g.identity();
  if (y.size() != g.ndofs(Dim)) {
    errs.push_back("y0 has the wrong size");
  } else {
    if (g.dirichlet_defect(y) > 0.0) errs.push_back("y0 = identity on the Dirichlet boundary violated");
    if (!std::isfinite(mechanical_energy(g, material, y))) errs.push_back("y0 has det grad y0 <= 0 somewhere");
  }
  if (!errs.empty()) {
    std::string m = "scenario '" + name + "' is invalid:";
    for (const auto& e : errs) m += "\n  " + e;
    throw ConfigError(m);
  }
}

template <int Dim>
Scenario<Dim> make_scenario(const ScenarioSpec& spec) {
  std::vector<std::string> errs;
  if (spec.dim != Dim) errs.push_back("dimension mismatch");
  if (static_cast<int>(spec.cells.size()) != Dim) errs.push_back("grid.cells needs " + std::to_string(Dim) + " entries");
  if (static_cast<int>(spec.lengths.size()) != Dim)
    errs.push_back("grid.lengths needs " + std::to_string(Dim) + " entries");
  const auto& ls = spec.loads;
  if (!ls.bulk.empty() && static_cast<int>(ls.bulk.size()) != Dim)
    errs.push_back("loads.bulk needs " + std::to_string(Dim) + " entries");
  if (!ls.traction.empty() && static_cast<int>(ls.traction.size()) != Dim)
    errs.push_back("loads.traction needs " + std::to_string(Dim) + " entries");
  if (!errs.empty()) {
    std::string m = "scenario '" + spec.name + "' is invalid:";
    for (const auto& e : errs) m += "\n  " + e;
    throw ConfigError(m);
  }
  std::array<int, Dim> cells;
  std::array<double, Dim> lengths;
  for (int k = 0; k < Dim; ++k) {
    cells[k] = spec.cells[k];
    lengths[k] = spec.lengths[k];
    if (cells[k] < 1 || !(lengths[k] > 0)) throw ConfigError("grid cells and lengths must be positive");
  }
  std::vector<Face> dir;
  for (const auto& f : spec.dirichlet) {
    Face fc = parse_face(f);
    if (fc.axis >= Dim) throw ConfigError("face '" + f + "' does not exist in " + std::to_string(Dim) + "D");
    dir.push_back(fc);
  }
  Scenario<Dim> sc;
  sc.name = spec.name;
  sc.grid = std::make_shared<StructuredGrid<Dim>>(cells, lengths, dir);
  sc.material = MaterialModel(spec.material);
  sc.T = spec.T;
  sc.isothermal = spec.isothermal;
  // validates the profile name
  load_amplitude(ls, 0.0);
  if (ls.profile == "table")
    for (const auto& kv : ls.table) sc.load_knots.push_back(kv.first);
  if (!ls.bulk.empty()) {
    Vec<Dim> b;
    for (int k = 0; k < Dim; ++k) b(k) = ls.bulk[k];
    sc.bulk = [ls, b](double t, const Vec<Dim>&) -> Vec<Dim> { return load_amplitude(ls, t) * b; };
  }
  if (!ls.traction.empty()) {
    Vec<Dim> f;
    for (int k = 0; k < Dim; ++k) f(k) = ls.traction[k];
    std::vector<Face> faces;
    for (const auto& s : ls.traction_faces) {
      Face fc = parse_face(s);
      if (fc.axis >= Dim) throw ConfigError("face '" + s + "' does not exist in " + std::to_string(Dim) + "D");
      faces.push_back(fc);
    }
    sc.traction = [ls, f, faces](double t, const Vec<Dim>&, const Face& fc) -> Vec<Dim> {
      for (const auto& x : faces)
        if (x == fc) return load_amplitude(ls, t) * f;
      return Vec<Dim>::Zero();
    };
  }
  const double tb = ls.theta_b;
  sc.theta_b = [tb](double, const Vec<Dim>&) { return tb; };
  sc.theta0 = sc.grid->constant_scalar(ls.theta0);
  sc.validate();
  return sc;
}

template <int Dim>
bool Trajectory<Dim>::complete() const {
  return !snapshots.empty() && static_cast<int>(steps.size()) == step_count(scenario->T, tau);
}

template <int Dim>
std::vector<Segment> step_segments(const Trajectory<Dim>& traj, int k) {
  if (k < 1 || k > traj.num_steps()) throw ContractViolation("step_segments: step index out of range");
  const auto& st = traj.steps[k - 1];
  std::vector<Segment> segs;
  const State* prev = &traj.snapshots[k - 1];
  for (std::size_t i = 0; i < st.sub.size(); ++i) {
    const State* next = (i + 1 == st.sub.size()) ? &traj.snapshots[k] : &st.inner[i];
    segs.push_back({prev, next, &st.sub[i]});
    prev = next;
  }
  return segs;
}

template <int Dim>
NodalField averaged_load(const Scenario<Dim>& sc, double t0, double dt) {
  const auto& g = *sc.grid;
  if (!sc.bulk && !sc.traction) return NodalField::Zero(g.ndofs(Dim));
  const auto rule = time_rule(sc.load_knots, t0, dt);
  std::vector<Vec<Dim>> bulk, trac;
  if (sc.bulk) {
    bulk.assign(g.num_qp(), Vec<Dim>::Zero());
    for (int c = 0; c < g.num_cells(); ++c)
      for (int q = 0; q < StructuredGrid<Dim>::kCellQP; ++q) {
        const Vec<Dim> x = g.qp_coord(c, q);
        for (const auto& [t, w] : rule) bulk[c * StructuredGrid<Dim>::kCellQP + q] += w * sc.bulk(t, x);
      }
  }
  if (sc.traction) {
    trac.assign(g.num_face_qp(), Vec<Dim>::Zero());
    const auto& bfs = g.boundary_faces();
    for (std::size_t f = 0; f < bfs.size(); ++f)
      for (int q = 0; q < StructuredGrid<Dim>::kFaceQP; ++q) {
        const Vec<Dim> x = g.face_qp_coord(bfs[f], q);
        for (const auto& [t, w] : rule) trac[f * StructuredGrid<Dim>::kFaceQP + q] += w * sc.traction(t, x, bfs[f].face);
      }
  }
  return g.assemble_load(bulk, trac);
}

template <int Dim>
std::vector<double> averaged_boundary_temperature(const Scenario<Dim>& sc, double t0, double dt, double eps) {
  const auto& g = *sc.grid;
  const auto rule = time_rule({}, t0, dt);
  std::vector<double> out(g.num_face_qp(), 0.0);
  const auto& bfs = g.boundary_faces();
  for (std::size_t f = 0; f < bfs.size(); ++f)
    for (int q = 0; q < StructuredGrid<Dim>::kFaceQP; ++q) {
      const Vec<Dim> x = g.face_qp_coord(bfs[f], q);
      double s = 0.0;
      for (const auto& [t, w] : rule) s += w * MaterialModel::regularize(sc.theta_b(t, x), eps);
      out[f * StructuredGrid<Dim>::kFaceQP + q] = s;
    }
  return out;
}

template <int Dim>
NodalField regularize_temperature(const StructuredGrid<Dim>& grid, const NodalField& theta, double eps) {
  constexpr int nd = StructuredGrid<Dim>::kNodeDofs;
  std::vector<std::vector<std::vector<int>>> parts(nd);
  for (int S = 1; S < nd; ++S) {
    std::vector<int> cur;
    partitions(S, cur, parts[S]);
  }
  NodalField r(theta.size());
  for (int n = 0; n < grid.num_nodes(); ++n) {
    const double u = theta(n * nd);
    const double z = 1.0 + eps * u;
    // n-th derivative of u / (1 + eps u)
    auto dg = [&](int k) { return std::pow(-eps, k - 1) * factorial(k) / std::pow(z, k + 1); };
    r(n * nd) = u / z;
    for (int S = 1; S < nd; ++S) {
      double v = 0.0;
      for (const auto& p : parts[S]) {
        double prod = dg(static_cast<int>(p.size()));
        for (int B : p) prod *= theta(n * nd + B);
        v += prod;
      }
      r(n * nd + S) = v;
    }
  }
  return r;
}

template <int Dim>
Trajectory<Dim> start(std::shared_ptr<const Scenario<Dim>> scenario, double tau, double eps) {
  if (!scenario) throw ContractViolation("start: scenario is required");
  scenario->validate();
  if (!(eps >= 0)) throw ConfigError("eps >= 0 violated");
  step_count(scenario->T, tau);
  Trajectory<Dim> tr;
  tr.scenario = scenario;
  tr.tau = tau;
  tr.eps = eps;
  const auto& g = *scenario->grid;
  State s0;
  s0.t = 0.0;
  s0.y = scenario->y0.size() ? scenario->y0 : g.identity();
  s0.theta = regularize_temperature(g, scenario->theta0, eps);
  s0.w = enthalpy_field(g, scenario->material, s0.y, s0.theta);
  tr.snapshots.push_back(std::move(s0));
  return tr;
}

template <int Dim>
void advance(Trajectory<Dim>& traj, const RunOptions& opt) {
  const auto& sc = *traj.scenario;
  const int N = step_count(sc.T, traj.tau);
  const double tau = traj.tau;
  for (int k = traj.num_steps() + 1; k <= N; ++k) {
    const double t0 = (k - 1) * tau;
    const double t1 = k * tau;
    bool done = false;
    std::string last_error;
    for (int m = 0; m <= opt.max_halvings && !done; ++m) {
      const int n = 1 << m;
      const double dt = tau / n;
      StepRecord rec;
      State cur = traj.snapshots.back();
      try {
        for (int i = 0; i < n; ++i) {
          const double a = t0 + i * dt;
          const double b = (i + 1 == n) ? t1 : t0 + (i + 1) * dt;
          auto [nx, r] = substep(sc, cur, a, dt, b, traj.eps, opt);
          rec.sub.push_back(std::move(r));
          if (i + 1 < n) rec.inner.push_back(nx);
          cur = std::move(nx);
        }
        traj.snapshots.push_back(std::move(cur));
        traj.steps.push_back(std::move(rec));
        done = true;
      } catch (const StepRejected& e) {
        last_error = e.what();
      } catch (const NonphysicalState& e) {
        last_error = e.what();
      } catch (const DomainError& e) {
        last_error = e.what();
      }
      if (!done) {
        std::ostringstream os;
        os << "step " << k << " rejected with " << n << " substep(s): " << last_error;
        log_msg(opt, os.str());
      }
    }
    if (!done) {
      std::ostringstream os;
      os << "step " << k << " failed after " << opt.max_halvings << " halvings: " << last_error;
      throw StepRejected(os.str(), k);
    }
    if (!opt.checkpoint_path.empty() && opt.checkpoint_every > 0 && (k % opt.checkpoint_every == 0 || k == N))
      save_checkpoint(opt.checkpoint_path, traj, opt.config_hash);
  }
}

template <int Dim>
Trajectory<Dim> run(std::shared_ptr<const Scenario<Dim>> scenario, const RunOptions& opt) {
  auto tr = start(std::move(scenario), opt.tau, opt.eps);
  advance(tr, opt);
  return tr;
}

template <int Dim>
Interpolants interpolants(const Trajectory<Dim>& traj, double t) {
  const int N = traj.num_steps();
  const double T = N * traj.tau;
  if (!(t >= -1e-12 * std::max(1.0, T) && t <= T * (1 + 1e-12)))
    throw DomainError("interpolants: t outside [0, T]");
  const double lam = std::clamp(t / traj.tau, 0.0, static_cast<double>(N));
  const double r = std::round(lam);
  Interpolants out;
  if (std::abs(lam - r) <= 1e-12 * std::max(1.0, lam)) {
    const auto& s = traj.snapshots[static_cast<std::size_t>(r)];
    out.left = out.right = out.affine = s;
    return out;
  }
  const int k = static_cast<int>(std::ceil(lam));
  const auto& a = traj.snapshots[k - 1];
  const auto& b = traj.snapshots[k];
  const double s = lam - (k - 1);
  out.left = b;
  out.right = a;
  out.affine.t = t;
  out.affine.y = (1 - s) * a.y + s * b.y;
  out.affine.theta = (1 - s) * a.theta + s * b.theta;
  out.affine.w.resize(a.w.size());
  for (std::size_t i = 0; i < a.w.size(); ++i) out.affine.w[i] = (1 - s) * a.w[i] + s * b.w[i];
  return out;
}

template <int Dim>
RefinementCell summarize(const Trajectory<Dim>& traj) {
  const auto& g = traj.grid();
  const MaterialModel& m = traj.material();
  RefinementCell c;
  c.tau = traj.tau;
  c.eps = traj.eps;
  c.steps = traj.num_steps();
  c.min_det = g.eval_kinematics(traj.snapshots[0].y).min_det();
  for (const auto& s : traj.snapshots) {
    const auto th = g.eval_scalar(s.theta);
    c.max_theta = std::max(c.max_theta, *std::max_element(th.value.begin(), th.value.end()));
  }
  for (int k = 1; k <= traj.num_steps(); ++k) {
    if (traj.steps[k - 1].sub.size() > 1) ++c.rejected_steps;
    for (const auto& seg : step_segments(traj, k)) {
      const double dt = seg.rec->tau;
      const auto kp = g.eval_kinematics(seg.prev->y);
      const auto kn = g.eval_kinematics(seg.next->y);
      c.min_det = std::min(c.min_det, kn.min_det());
      const auto th = g.eval_scalar(seg.prev->theta);
      std::vector<double> xi(g.num_qp()), xr(g.num_qp()), er(g.num_qp());
      for (int q = 0; q < g.num_qp(); ++q) {
        const Tensor2<Dim> dF = (kn.F[q] - kp.F[q]) / dt;
        xi[q] = m.dissipation_rate<Dim>(kp.F[q], dF, std::max(th.value[q], 0.0));
        xr[q] = MaterialModel::regularize(xi[q], traj.eps);
        er[q] = traj.eps * dF.squaredNorm();
      }
      const double I = g.assemble_scalar(xi), Ir = g.assemble_scalar(xr);
      c.dissipation += dt * I;
      c.reg_dissipation += dt * Ir;
      c.eps_rate += dt * g.assemble_scalar(er);
      c.xi_gap += dt * (I - Ir);
    }
  }
  return c;
}

template <int Dim>
std::pair<double, double> trajectory_distance(const Trajectory<Dim>& a, const Trajectory<Dim>& b) {
  const Trajectory<Dim>* fine = &a;
  const Trajectory<Dim>* coarse = &b;
  if (a.num_steps() < b.num_steps()) std::swap(fine, coarse);
  const int Nf = fine->num_steps(), Nc = coarse->num_steps();
  if (Nc == 0 || Nf % Nc != 0 || std::abs(Nf * fine->tau - Nc * coarse->tau) > 1e-9 * Nf * fine->tau)
    throw ContractViolation("trajectory_distance: partitions do not nest");
  const auto& g = fine->grid();
  if (g.cells() != coarse->grid().cells() || g.lengths() != coarse->grid().lengths())
    throw ContractViolation("trajectory_distance: trajectories live on different grids");
  const int r = Nf / Nc;
  struct Cache {
    int idx = -1;
    std::vector<Tensor2<Dim>> F;
    std::vector<double> th;
  };
  auto load = [&](const Trajectory<Dim>& tr, int i, Cache& c) {
    if (c.idx == i) return;
    c.F = g.eval_kinematics(tr.snapshots[i].y).F;
    c.th = g.eval_scalar(tr.snapshots[i].theta).value;
    c.idx = i;
  };
  Cache f0, f1, c0, c1;
  const double gx[2] = {0.5 - 0.5 / std::sqrt(3.0), 0.5 + 0.5 / std::sqrt(3.0)};
  double dF = 0.0, dth = 0.0;
  const double dt = fine->tau;
  for (int j = 0; j < Nf; ++j) {
    const int kc = j / r;
    load(*fine, j, f0);
    load(*fine, j + 1, f1);
    load(*coarse, kc, c0);
    load(*coarse, kc + 1, c1);
    for (double s : gx) {
      const double sc = (j % r + s) / r;  // local coordinate in the coarse interval
      std::vector<double> e1(g.num_qp()), e2(g.num_qp());
      for (int q = 0; q < g.num_qp(); ++q) {
        const Tensor2<Dim> Ff = (1 - s) * f0.F[q] + s * f1.F[q];
        const Tensor2<Dim> Fc = (1 - sc) * c0.F[q] + sc * c1.F[q];
        e1[q] = (Ff - Fc).squaredNorm();
        const double tf = (1 - s) * f0.th[q] + s * f1.th[q];
        const double tc = (1 - sc) * c0.th[q] + sc * c1.th[q];
        e2[q] = (tf - tc) * (tf - tc);
      }
      dF += 0.5 * dt * g.assemble_scalar(e1);
      dth += 0.5 * dt * g.assemble_scalar(e2);
    }
  }
  return {std::sqrt(dF), std::sqrt(dth)};
}

template <int Dim>
RefinementReport refinement_study(std::shared_ptr<const Scenario<Dim>> scenario, const std::vector<double>& taus,
                                  const std::vector<double>& eps_list, const RunOptions& opt,
                                  const std::function<void(const Trajectory<Dim>&)>& cell_hook) {
  if (taus.empty() || eps_list.empty()) throw ConfigError("refinement lists must be nonempty");
  if (!std::is_sorted(taus.rbegin(), taus.rend()) || !std::is_sorted(eps_list.rbegin(), eps_list.rend()))
    throw ConfigError("refinement lists must be sorted decreasing");
  RefinementReport rep;
  std::vector<Trajectory<Dim>> prev_row;
  for (double eps : eps_list) {
    std::vector<Trajectory<Dim>> row;
    for (std::size_t i = 0; i < taus.size(); ++i) {
      RunOptions o = opt;
      o.tau = taus[i];
      o.eps = eps;
      o.checkpoint_path.clear();
      auto tr = run(scenario, o);
      rep.cells.push_back(summarize(tr));
      if (cell_hook) cell_hook(tr);
      if (i > 0) {
        const auto [a, b] = trajectory_distance(row.back(), tr);
        rep.tau_cauchy.push_back({taus[i - 1], taus[i], eps, a, b});
      }
      if (!prev_row.empty()) {
        const auto [a, b] = trajectory_distance(prev_row[i], tr);
        rep.eps_cauchy.push_back({prev_row[i].eps, eps, taus[i], a, b});
        // the previous row entry is no longer needed
        prev_row[i] = Trajectory<Dim>{};
      }
      row.push_back(std::move(tr));
    }
    prev_row = std::move(row);
  }
  return rep;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

template <int Dim>
void save_checkpoint(const std::string& path, const Trajectory<Dim>& traj, std::uint64_t config_hash) {
  const auto& g = traj.grid();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + tmp);
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash));
    char buf[64];
    os << "kvtherm-checkpoint 1\n";
    os << "dim " << Dim << "\n";
    os << "config_hash " << hash << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", traj.tau);
    os << "tau " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", traj.eps);
    os << "eps " << buf << "\n";
    os << "steps_done " << traj.num_steps() << "\n";
    os << "ndofs_y " << g.ndofs(Dim) << "\n";
    os << "ndofs_theta " << g.ndofs(1) << "\n";
    os << "nqp " << g.num_qp() << "\n";
    os << "nfaceqp " << g.num_face_qp() << "\n";
    os << "byte_order little\n";
    os << "dtype float64\n";
    os << "end_header\n";
    for (const auto& s : traj.snapshots) write_state<Dim>(os, s);
    for (const auto& st : traj.steps) {
      put(os, static_cast<double>(st.sub.size()));
      for (const auto& r : st.sub) write_record(os, r);
      for (const auto& s : st.inner) write_state<Dim>(os, s);
    }
    if (!os) throw std::runtime_error("write error on checkpoint " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot rename checkpoint to " + path);
}

template <int Dim>
Trajectory<Dim> load_checkpoint(const std::string& path, std::shared_ptr<const Scenario<Dim>> scenario,
                                std::uint64_t config_hash) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  std::string line;
  std::getline(is, line);
  if (line != "kvtherm-checkpoint 1") throw ConfigError(path + ": not a version 1 checkpoint");
  std::map<std::string, std::string> hdr;
  while (std::getline(is, line) && line != "end_header") {
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw ConfigError(path + ": malformed header line '" + line + "'");
    hdr[line.substr(0, sp)] = line.substr(sp + 1);
  }
  auto field = [&](const std::string& k) {
    auto it = hdr.find(k);
    if (it == hdr.end()) throw ConfigError(path + ": header lacks '" + k + "'");
    return it->second;
  };
  const auto& g = *scenario->grid;
  if (std::stoi(field("dim")) != Dim) throw ConfigError(path + ": dimension mismatch");
  if (std::stoull(field("config_hash"), nullptr, 16) != config_hash)
    throw ConfigError(path + ": configuration hash mismatch (checkpoint written for a different configuration)");
  if (field("byte_order") != "little" || field("dtype") != "float64") throw ConfigError(path + ": unsupported payload");
  const Eigen::Index ny = std::stol(field("ndofs_y")), nt = std::stol(field("ndofs_theta"));
  const std::size_t nq = std::stoul(field("nqp")), nf = std::stoul(field("nfaceqp"));
  if (ny != g.ndofs(Dim) || nt != g.ndofs(1) || nq != static_cast<std::size_t>(g.num_qp()) ||
      nf != static_cast<std::size_t>(g.num_face_qp()))
    throw ConfigError(path + ": grid size mismatch");
  Trajectory<Dim> tr;
  tr.scenario = scenario;
  tr.tau = std::stod(field("tau"));
  tr.eps = std::stod(field("eps"));
  const int n = std::stoi(field("steps_done"));
  for (int k = 0; k <= n; ++k) tr.snapshots.push_back(read_state<Dim>(is, ny, nt, nq));
  for (int k = 0; k < n; ++k) {
    StepRecord st;
    const int ns = static_cast<int>(get(is));
    for (int i = 0; i < ns; ++i) st.sub.push_back(read_record(is, ny, nf));
    for (int i = 0; i + 1 < ns; ++i) st.inner.push_back(read_state<Dim>(is, ny, nt, nq));
    tr.steps.push_back(std::move(st));
  }
  if (!is) throw ConfigError(path + ": truncated payload");
  return tr;
}

namespace {

Preset base_preset(const std::string& name) {
  Preset p;
  p.spec.name = name;
  p.tau = 0.01;
  p.eps = 0.01;
  return p;
}

}  // namespace

Preset preset(const std::string& name) {
  Preset p = base_preset(name);
  auto& s = p.spec;
  auto& l = s.loads;
  if (name == "steady") {
    l.theta0 = l.theta_b = 0.5;
  } else if (name == "shear_pulse" || name == "insulated_pulse") {
    l.profile = "sin2_pulse";
    l.pulse_time = 0.5;
    l.traction = {0.0, 0.5};
    l.theta0 = l.theta_b = 0.1;
    p.tau_list = {0.05, 0.025, 0.0125, 0.00625};
    p.eps_list = {0.1, 0.01, 0.001};
    if (name == "insulated_pulse") s.material.kappa = 1e-8;
  } else if (name == "isothermal_creep") {
    l.profile = "constant";
    l.traction = {0.0, 0.2};
    l.theta0 = l.theta_b = 0.5;
    s.isothermal = true;
    p.eps = 0.0;
  } else if (name == "refine_tau") {
    l.profile = "sin2_pulse";
    l.pulse_time = 0.5;
    l.traction = {0.0, 0.5};
    l.theta0 = l.theta_b = 0.1;
    s.T = 0.5;
    p.tau_list = {0.05, 0.025, 0.0125, 0.00625};
    p.eps_list = {0.01};
  } else if (name == "refine_eps") {
    l.profile = "sin2_pulse";
    l.pulse_time = 0.5;
    l.traction = {0.5, 0.0};
    l.theta0 = l.theta_b = 0.1;
    s.T = 0.5;
    p.tau_list = {0.01};
    p.eps_list = {0.1, 0.01, 0.001};
  } else {
    std::string m = "unknown scenario preset '" + name + "' (known:";
    for (const auto& n : preset_names()) m += " " + n;
    throw ConfigError(m + ")");
  }
  if (p.tau_list.empty()) p.tau_list = {p.tau};
  if (p.eps_list.empty()) p.eps_list = {p.eps};
  return p;
}

std::vector<std::string> preset_names() {
  return {"steady", "shear_pulse", "isothermal_creep", "refine_tau", "refine_eps", "insulated_pulse"};
}

#define KVT_INSTANTIATE(D)                                                                                        \
  template struct Scenario<D>;                                                                                    \
  template struct Trajectory<D>;                                                                                  \
  template Scenario<D> make_scenario<D>(const ScenarioSpec&);                                                     \
  template std::vector<Segment> step_segments<D>(const Trajectory<D>&, int);                                      \
  template Trajectory<D> start<D>(std::shared_ptr<const Scenario<D>>, double, double);                            \
  template void advance<D>(Trajectory<D>&, const RunOptions&);                                                    \
  template Trajectory<D> run<D>(std::shared_ptr<const Scenario<D>>, const RunOptions&);                           \
  template NodalField averaged_load<D>(const Scenario<D>&, double, double);                                       \
  template std::vector<double> averaged_boundary_temperature<D>(const Scenario<D>&, double, double, double);      \
  template NodalField regularize_temperature<D>(const StructuredGrid<D>&, const NodalField&, double);             \
  template Interpolants interpolants<D>(const Trajectory<D>&, double);                                            \
  template RefinementCell summarize<D>(const Trajectory<D>&);                                                     \
  template std::pair<double, double> trajectory_distance<D>(const Trajectory<D>&, const Trajectory<D>&);          \
  template RefinementReport refinement_study<D>(std::shared_ptr<const Scenario<D>>, const std::vector<double>&,   \
                                                const std::vector<double>&, const RunOptions&,                    \
                                                const std::function<void(const Trajectory<D>&)>&);                \
  template void save_checkpoint<D>(const std::string&, const Trajectory<D>&, std::uint64_t);                      \
  template Trajectory<D> load_checkpoint<D>(const std::string&, std::shared_ptr<const Scenario<D>>, std::uint64_t);

KVT_INSTANTIATE(2)
KVT_INSTANTIATE(3)

#undef KVT_INSTANTIATE

}  // namespace kvt
