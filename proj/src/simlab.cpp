#include "pvko/simlab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <thread>

#include "pvko/errors.hpp"
#include "pvko/random.hpp"

namespace pvko {

Eigen::Vector3d lorenz_rhs(const Eigen::Vector3d & x, double p)
{
  return {10.0 * (x(1) - x(0)), p * x(0) - x(1) - x(0) * x(2), x(0) * x(1) - x(2)};
}

Eigen::Vector3d lorenz_step(const Eigen::Vector3d & x, double p, double dt)
{
  if (!(dt > 0)) { throw InvalidArgument("step size must be positive"); }
  if (!x.allFinite()) { throw InvalidArgument("Lorenz state is not finite"); }
  const Eigen::Vector3d k1 = lorenz_rhs(x, p);
  const Eigen::Vector3d k2 = lorenz_rhs(x + 0.5 * dt * k1, p);
  const Eigen::Vector3d k3 = lorenz_rhs(x + 0.5 * dt * k2, p);
  const Eigen::Vector3d k4 = lorenz_rhs(x + dt * k3, p);
  return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Eigen::Vector2d vdp_rhs(const Eigen::Vector2d & x, double u, double p)
{
  return {2.0 * x(1), -0.8 * x(0) + p * (x(1) - 2.0 * x(0) * x(0) * x(1)) + u};
}

Eigen::Vector2d vdp_step(const Eigen::Vector2d & x, double u, double p, double dt, Integrator integ)
{
  if (!(dt > 0)) { throw InvalidArgument("step size must be positive"); }
  if (!x.allFinite()) { throw InvalidArgument("Van der Pol state is not finite"); }
  if (integ == Integrator::Euler) { return x + dt * vdp_rhs(x, u, p); }
  const Eigen::Vector2d k1 = vdp_rhs(x, u, p);
  const Eigen::Vector2d k2 = vdp_rhs(x + 0.5 * dt * k1, u, p);
  const Eigen::Vector2d k3 = vdp_rhs(x + 0.5 * dt * k2, u, p);
  const Eigen::Vector2d k4 = vdp_rhs(x + dt * k3, u, p);
  return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Eigen::VectorXd LorenzPlant::step(const Eigen::VectorXd & x, const Eigen::VectorXd &, double p, double dt) const
{
  if (x.size() != 3) { throw InvalidArgument("Lorenz state must have 3 components"); }
  return lorenz_step(Eigen::Vector3d(x), p, dt);
}

Eigen::VectorXd VanDerPolPlant::step(const Eigen::VectorXd & x, const Eigen::VectorXd & u, double p, double dt) const
{
  if (x.size() != 2 || u.size() != 1) { throw InvalidArgument("Van der Pol expects x in R^2 and u in R^1"); }
  return vdp_step(Eigen::Vector2d(x), u(0), p, dt, integ_);
}

Eigen::VectorXd LiftedModelPlant::step(const Eigen::VectorXd & x, const Eigen::VectorXd & u, double p, double) const
{
  const auto [A, B] = model_.evaluate(p);
  Eigen::VectorXd y = A * x;
  if (u.size() > 0) { y += B * u; }
  return y;
}

std::unique_ptr<Plant> make_plant(const std::string & name, Integrator integ)
{
  if (name == "lorenz") { return std::make_unique<LorenzPlant>(); }
  if (name == "vdp") { return std::make_unique<VanDerPolPlant>(integ); }
  throw ConfigError("unknown plant '" + name + "' (expected lorenz or vdp)");
}

// ---------------------------------------------------------------------------------------------

ParameterSignal::ParameterSignal(Variant v, double dt) : v_(std::move(v)), dt_(dt)
{
  if (!(dt_ > 0) || !std::isfinite(dt_)) { throw InvalidArgument("signal sampling time must be positive"); }
  if (const auto * s = std::get_if<SumOfSines>(&v_)) {
    if (s->amplitudes.size() != s->frequencies.size()) {
      throw InvalidArgument("sum-of-sines amplitudes and frequencies differ in length");
    }
    if ((s->amplitudes.array() <= 0).any()) { throw InvalidArgument("sum-of-sines amplitudes must be positive"); }
  } else if (const auto * r = std::get_if<RandomWalk>(&v_)) {
    if (!(r->lo <= r->hi) || !(r->step_bound >= 0)) { throw InvalidArgument("invalid random walk range or step"); }
  } else if (const auto * sc = std::get_if<Schedule>(&v_)) {
    if (sc->times.empty() || sc->times.size() != sc->values.size()) {
      throw InvalidArgument("schedule needs matching, non-empty time and value lists");
    }
    for (std::size_t i = 1; i < sc->times.size(); ++i) {
      if (!(sc->times[i] > sc->times[i - 1])) { throw InvalidArgument("schedule times must be strictly increasing"); }
    }
  }
}

ParameterSignal ParameterSignal::random_sum_of_sines(
  double offset, double total_amplitude, int terms, double max_frequency, std::uint64_t seed, double dt)
{
  if (terms < 1) { throw InvalidArgument("sum of sines needs at least one term"); }
  Rng rng(seed, 0x5135);
  SumOfSines s;
  s.offset = offset;
  s.amplitudes = total_amplitude * rng.dirichlet(terms);
  s.frequencies.resize(terms);
  for (int i = 0; i < terms; ++i) { s.frequencies(i) = rng.uniform(0.0, max_frequency); }
  return {s, dt};
}

long ParameterSignal::defined_steps() const
{
  if (const auto * sc = std::get_if<Schedule>(&v_)) {
    return static_cast<long>(std::floor(sc->times.back() / dt_ + 1e-9)) + 1;
  }
  return -1;
}

double ParameterSignal::at_step(long k) const
{
  if (k < 0) { throw InvalidArgument("negative step index"); }
  const double t = static_cast<double>(k) * dt_;
  return std::visit(
    [&](const auto & s) -> double {
      using T = std::decay_t<decltype(s)>;
      if constexpr (std::is_same_v<T, SumOfSines>) {
        return s.offset + (s.amplitudes.array() * (s.frequencies.array() * t).sin()).sum();
      } else if constexpr (std::is_same_v<T, ConstantSignal>) {
        return s.value;
      } else if constexpr (std::is_same_v<T, RandomWalk>) {
        const std::uint64_t key = stream_key(s.seed, 0x3a1c);
        double p = std::clamp(s.start, s.lo, s.hi);
        for (long i = 1; i <= k; ++i) {
          const double xi = 2.0 * counter_uniform(key, static_cast<std::uint64_t>(i)) - 1.0;
          p = std::clamp(p + s.step_bound * xi, s.lo, s.hi);
        }
        return p;
      } else {
        const long defined = defined_steps();
        if (k >= defined) {
          throw InvalidArgument(
            "parameter schedule ends at t = " + std::to_string(s.times.back()) +
            " s; the parameter must be known over the whole prediction horizon");
        }
        std::size_t i = 0;
        while (i + 1 < s.times.size() && s.times[i + 1] <= t + 1e-12) { ++i; }
        return s.values[i];
      }
    },
    v_);
}

std::vector<double> ParameterSignal::materialize(long count) const
{
  std::vector<double> out(static_cast<std::size_t>(std::max(0L, count)));
  if (const auto * r = std::get_if<RandomWalk>(&v_)) {
    const std::uint64_t key = stream_key(r->seed, 0x3a1c);
    double p = std::clamp(r->start, r->lo, r->hi);
    for (long i = 0; i < count; ++i) {
      if (i > 0) {
        const double xi = 2.0 * counter_uniform(key, static_cast<std::uint64_t>(i)) - 1.0;
        p = std::clamp(p + r->step_bound * xi, r->lo, r->hi);
      }
      out[static_cast<std::size_t>(i)] = p;
    }
    return out;
  }
  for (long i = 0; i < count; ++i) { out[static_cast<std::size_t>(i)] = at_step(i); }
  return out;
}

double sample_parameter(const ParameterSignal & sig, long step) { return sig.at_step(step); }

// ---------------------------------------------------------------------------------------------

SnapshotSet collect_identification_data(const Plant & plant, double p, const CollectionOptions & opt)
{
  if (!(opt.dt > 0)) { throw InvalidArgument("sampling time must be positive"); }
  if (!(opt.duration >= opt.dt)) { throw InvalidArgument("duration must be at least one sampling interval"); }
  if (!(opt.episode_length >= opt.dt)) { throw InvalidArgument("episode length must be at least one sampling interval"); }
  opt.domain.validate();
  const int n = plant.state_dim();
  const int m = plant.input_dim();
  if (opt.domain.dim() != n) { throw InvalidArgument("domain box dimension differs from the plant state"); }
  if (m > 0 && (opt.u_lo.size() != m || opt.u_hi.size() != m)) {
    throw InvalidArgument("input box dimension differs from the plant input");
  }

  const long samples = std::lround(opt.duration / opt.dt);
  const long episode = std::max(1L, std::lround(opt.episode_length / opt.dt));
  Rng rng(opt.seed, static_cast<std::uint64_t>(std::llround(p * 1e6)) ^ 0xc011ec7ULL);

  std::vector<Eigen::VectorXd> X, Xp, U;
  X.reserve(static_cast<std::size_t>(samples));
  Eigen::VectorXd x = rng.uniform(opt.domain.lo, opt.domain.hi);
  for (long k = 0; k + 1 < samples; ++k) {
    if (k > 0 && k % episode == 0) { x = rng.uniform(opt.domain.lo, opt.domain.hi); }
    Eigen::VectorXd u = m > 0 ? rng.uniform(opt.u_lo, opt.u_hi) : Eigen::VectorXd();
    Eigen::VectorXd xn = plant.step(x, u, p, opt.dt);
    if (!xn.allFinite()) { throw NumericalError("plant state diverged during data collection"); }
    // The pair that would cross an episode restart is dropped.
    if ((k + 1) % episode != 0) {
      X.push_back(x);
      Xp.push_back(xn);
      U.push_back(u);
    }
    x = std::move(xn);
  }
  SnapshotSet s;
  s.working_point = p;
  s.X.resize(n, static_cast<Eigen::Index>(X.size()));
  s.Xplus.resize(n, s.X.cols());
  s.U.resize(m, s.X.cols());
  for (std::size_t j = 0; j < X.size(); ++j) {
    s.X.col(static_cast<Eigen::Index>(j)) = X[j];
    s.Xplus.col(static_cast<Eigen::Index>(j)) = Xp[j];
    if (m > 0) { s.U.col(static_cast<Eigen::Index>(j)) = U[j]; }
  }
  return s;
}

// ---------------------------------------------------------------------------------------------

double rmse(const Eigen::MatrixXd & actual, const Eigen::MatrixXd & predicted)
{
  if (actual.rows() != predicted.rows() || actual.cols() != predicted.cols()) {
    throw InvalidArgument("trajectory shapes differ");
  }
  const double den = actual.norm();
  if (!(den > 0)) { throw InvalidArgument("RMSE undefined: the actual trajectory is identically zero"); }
  return 100.0 * (predicted - actual).norm() / den;
}

std::vector<double> cumulative_cost(const Trajectory & traj, const Eigen::MatrixXd & Qx, const Eigen::MatrixXd & R)
{
  std::vector<double> out;
  out.reserve(traj.inputs.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < traj.inputs.size(); ++k) {
    const auto & x = traj.states[k];
    const auto & u = traj.inputs[k];
    if (x.size() != Qx.rows() || u.size() != R.rows()) { throw InvalidArgument("weight dimension mismatch"); }
    acc += x.dot(Qx * x) + u.dot(R * u);
    out.push_back(acc);
  }
  return out;
}

void write_trajectory_csv(const std::string & path, const Trajectory & traj)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) { throw IoError("cannot open " + path + " for writing"); }
  const auto n = traj.states.empty() ? 0 : traj.states.front().size();
  const auto m = traj.inputs.empty() ? 0 : traj.inputs.front().size();
  out << "t";
  for (Eigen::Index i = 0; i < n; ++i) { out << ",x" << i + 1; }
  for (Eigen::Index i = 0; i < m; ++i) { out << ",u" << i + 1; }
  out << ",p,stage_cost,J_star,qp_status,qp_iterations,clipped\n";
  out << std::setprecision(17);
  for (std::size_t k = 0; k < traj.inputs.size(); ++k) {
    out << static_cast<double>(k) * traj.dt;
    for (Eigen::Index i = 0; i < n; ++i) { out << ',' << traj.states[k](i); }
    for (Eigen::Index i = 0; i < m; ++i) { out << ',' << traj.inputs[k](i); }
    out << ',' << traj.params[k];
    out << ',' << (k < traj.stage_cost.size() ? traj.stage_cost[k] : 0.0);
    out << ',' << (k < traj.objective.size() ? traj.objective[k] : 0.0);
    out << ',' << (k < traj.qp_status.size() ? traj.qp_status[k] : std::string("none"));
    out << ',' << (k < traj.qp_iterations.size() ? traj.qp_iterations[k] : 0);
    out << ',' << (k < traj.clipped.size() && traj.clipped[k] ? 1 : 0) << '\n';
  }
  if (!out) { throw IoError("failed writing " + path); }
}

// ---------------------------------------------------------------------------------------------

namespace {

struct TrialError
{
  double pvko;
  double ti;
};

TrialError run_trial(
  const PredictionCampaign & c, const PvkoModel & pv, const PvkoModel & ti, const Plant & plant, int trial)
{
  const auto sig = ParameterSignal::random_sum_of_sines(
    c.offset, c.total_amplitude, c.terms, c.max_frequency,
    stream_key(c.seed, 0x7000 + static_cast<std::uint64_t>(trial)), c.collection.dt);
  Rng rng(c.seed, 0x9000 + static_cast<std::uint64_t>(trial));
  Eigen::VectorXd x = rng.uniform(c.initial_box.lo, c.initial_box.hi);
  const long burn = std::lround(c.burn_in / c.collection.dt);
  const Eigen::VectorXd none;
  for (long k = 0; k < burn; ++k) { x = plant.step(x, none, c.offset, c.collection.dt); }

  const auto params = sig.materialize(c.horizon_steps);
  Eigen::MatrixXd truth(x.size(), c.horizon_steps + 1);
  truth.col(0) = x;
  for (int k = 0; k < c.horizon_steps; ++k) {
    truth.col(k + 1) = plant.step(truth.col(k), none, params[static_cast<std::size_t>(k)], c.collection.dt);
  }
  const Eigen::MatrixXd no_inputs(0, c.horizon_steps);
  const auto p1 = predict(pv, x, no_inputs, params);
  const auto p2 = predict(ti, x, no_inputs, params);
  return {rmse(truth, p1), rmse(truth, p2)};
}

std::pair<double, double> mean_std(const std::vector<double> & v)
{
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double e : v) { ss += (e - mean) * (e - mean); }
  const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return {mean, sd};
}

}  // namespace

std::vector<RmseStats> monte_carlo_prediction(const PredictionCampaign & c)
{
  LorenzPlant plant;
  std::vector<SnapshotSet> data;
  for (std::size_t i = 0; i < c.working_points.size(); ++i) {
    CollectionOptions opt = c.collection;
    opt.seed = stream_key(c.collection.seed, i);
    data.push_back(collect_identification_data(plant, c.working_points[i], opt));
  }
  return monte_carlo_prediction(c, data);
}

std::vector<RmseStats> monte_carlo_prediction(const PredictionCampaign & c, std::span<const SnapshotSet> data)
{
  return monte_carlo_prediction(c, data, LorenzPlant{});
}

std::vector<RmseStats> monte_carlo_prediction(
  const PredictionCampaign & c, std::span<const SnapshotSet> data, const Plant & plant)
{
  if (c.trials < 1) { throw InvalidArgument("Monte Carlo needs at least one trial"); }
  if (c.horizon_steps < 1) { throw InvalidArgument("prediction horizon must be positive"); }
  if (c.orders.empty()) { throw InvalidArgument("no basis orders requested"); }
  c.center_box.validate();
  c.initial_box.validate();
  if (plant.input_dim() != 0) { throw InvalidArgument("prediction study needs an autonomous plant"); }

  std::vector<RmseStats> out;
  for (int order : c.orders) {
    const auto basis = LiftingBasis::thin_plate(
      plant.state_dim(), order, c.center_box, c.center_seed, c.append_state);
    const IdentifyOptions io{c.truncation_tol};
    const PvkoModel pv = identify_pvko(basis, data, io);
    const PvkoModel ti = identify_time_invariant(basis, data, io);

    std::vector<TrialError> errors(static_cast<std::size_t>(c.trials));
    const int workers = std::max(1, std::min(c.threads, c.trials));
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> failures(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (int t = w; t < c.trials; t += workers) {
            errors[static_cast<std::size_t>(t)] = run_trial(c, pv, ti, plant, t);
          }
        } catch (...) {
          failures[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto & th : pool) { th.join(); }
    for (auto & f : failures) {
      if (f) { std::rethrow_exception(f); }
    }

    std::vector<double> e1, e2;
    for (const auto & e : errors) {
      e1.push_back(e.pvko);
      e2.push_back(e.ti);
    }
    RmseStats s;
    s.order = order;
    std::tie(s.pvko_mean, s.pvko_std) = mean_std(e1);
    std::tie(s.ti_mean, s.ti_std) = mean_std(e2);
    out.push_back(s);
  }
  return out;
}

}  // namespace pvko
