#pragma once

// Levenberg-Marquardt iterations for nonlinear least squares, min 1/2 |F(x)|^2.
//
// Two variants share the same damping schedule:
//   classic:  one damped Gauss-Newton step h per Jacobian.
//   modified: h from (J^T J + mu I) h = -J^T F(x), then a second step hhat
//             from (J^T J + mu I) hhat = -J^T F(x + h) with the same J and the
//             same factorization; the trial point is x + h + hhat.
// A trial is accepted when the gain ratio exceeds gamma; then mu halves and
// nu resets. Otherwise mu <- nu mu and nu <- 2 nu.

#include <Eigen/Core>

#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "cplm/cp_model.hpp"
#include "cplm/damped_solver.hpp"
#include "cplm/error.hpp"
#include "cplm/jacobian.hpp"

namespace cplm {

enum class Method { classic_lm, modified_lm };
enum class SolverBackend { automatic, dense, schur };
enum class TerminationReason { max_iters, residual_tol, relative_tol, grad_tol, step_tol };

inline std::string_view to_string(Method m) { return m == Method::classic_lm ? "lm" : "mlm"; }

inline std::string_view to_string(TerminationReason r) {
  switch (r) {
    case TerminationReason::max_iters: return "max_iters";
    case TerminationReason::residual_tol: return "residual_tol";
    case TerminationReason::relative_tol: return "relative_tol";
    case TerminationReason::grad_tol: return "grad_tol";
    case TerminationReason::step_tol: return "step_tol";
  }
  return "unknown";
}

inline std::string_view to_string(SolverBackend b) {
  switch (b) {
    case SolverBackend::automatic: return "auto";
    case SolverBackend::dense: return "dense";
    case SolverBackend::schur: return "schur";
  }
  return "unknown";
}

// Predicted reductions at or below this are treated as "no prediction".
inline constexpr double kDenominatorFloor = 1e-15;

struct LmConfig {
  std::size_t max_iters = 200;
  double tol = 0.0;       // absolute |F(x_k)|
  double rel_tol = 0.0;   // |F(x_k)| / |X|_F
  double grad_tol = 1e-12;  // |J^T F|_inf
  std::optional<double> mu0;  // default: mu0_scale * max diag(J0^T J0)
  double mu0_scale = 1e-2;
  double nu0 = 2.0;
  double gamma = 0.0;
  double step_tol = 1e-14;  // stop when |s| <= step_tol (|x| + step_tol)
  std::uint64_t seed = 0;
  Method method = Method::modified_lm;
  SolverBackend backend = SolverBackend::automatic;
  int max_mu_escalations = 32;

  void validate() const {
    if (max_iters < 1) throw DomainError("LmConfig: max_iters must be >= 1");
    if (!(tol >= 0.0) || !(rel_tol >= 0.0) || !(grad_tol >= 0.0) || !(step_tol >= 0.0))
      throw DomainError("LmConfig: tolerances must be nonnegative");
    if (mu0 && !(*mu0 > 0.0 && std::isfinite(*mu0))) throw DomainError("LmConfig: mu0 must be positive");
    if (!(mu0_scale > 0.0)) throw DomainError("LmConfig: mu0_scale must be positive");
    if (!(nu0 > 1.0 && std::isfinite(nu0))) throw DomainError("LmConfig: nu0 must exceed 1");
    if (!std::isfinite(gamma)) throw DomainError("LmConfig: gamma must be finite");
    if (max_mu_escalations < 0) throw DomainError("LmConfig: max_mu_escalations must be >= 0");
  }
};

struct IterationRecord {
  std::size_t iter = 0;  // k: the record describes the move from x_k
  double mu = 0.0;       // damping used for the solve(s)
  double nu = 0.0;       // multiplier in effect before the update
  std::optional<double> rho;  // absent when no valid prediction exists
  double residual_norm_before = 0.0;  // |F(x_k)|
  double residual_norm_after = 0.0;   // |F(x_{k+1})|
  double trial_residual_norm = 0.0;   // |F(trial)|
  bool accepted = false;
  double step_norm = 0.0;
  std::size_t n_jacobian_builds = 0;
  std::size_t n_residual_evals = 0;
  int mu_escalations = 0;
  double elapsed = 0.0;  // seconds since the start of the run
};

using Trace = std::vector<IterationRecord>;

struct LmState {
  Vector x;
  double mu = 0.0;
  double nu = 2.0;
  std::size_t iter = 0;
  double residual_norm = 0.0;
  Vector f;  // F(x)
  std::optional<SparseJacobian> jacobian;  // J at the start of the last iteration
};

template <class S>
concept DampedSystem = requires(S s, const S cs, double mu, const Vector& g) {
  { s.factor(mu) } -> std::same_as<bool>;
  { cs.solve(g) } -> std::convertible_to<Vector>;
};

template <class P>
concept LeastSquaresProblem = requires(const P& p, const Vector& x, const SparseJacobian& j) {
  { p.residual(x) } -> std::convertible_to<Vector>;
  { p.jacobian(x) } -> std::same_as<SparseJacobian>;
  { p.damped_solver(x, j) } -> DampedSystem;
  { p.gram_diagonal_max(x) } -> std::convertible_to<double>;
};

// Gain ratio of a two-solve step:
//   (|F(x)| - |F(x+s)|) / (|F(x)| - |l(h)| + |F(y)| - |lhat(hhat)|)
// with l(h) = F(x) + J h and lhat(hhat) = F(y) + J hhat, y = x + h.
// Returns -infinity when the predicted reduction is at or below the floor.
inline double gain_ratio(double F_x, double F_trial, double lin_h, double F_y, double lin_hhat) {
  for (double v : {F_x, F_trial, lin_h, F_y, lin_hhat})
    if (!std::isfinite(v) || v < 0.0) throw DomainError("gain_ratio: inputs must be finite and nonnegative");
  const double predicted = (F_x - lin_h) + (F_y - lin_hhat);
  if (predicted <= kDenominatorFloor) return -std::numeric_limits<double>::infinity();
  return (F_x - F_trial) / predicted;
}

// Single-solve gain ratio (|F(x)| - |F(x+h)|) / (|F(x)| - |l(h)|).
inline double gain_ratio(double F_x, double F_trial, double lin_h) {
  for (double v : {F_x, F_trial, lin_h})
    if (!std::isfinite(v) || v < 0.0) throw DomainError("gain_ratio: inputs must be finite and nonnegative");
  const double predicted = F_x - lin_h;
  if (predicted <= kDenominatorFloor) return -std::numeric_limits<double>::infinity();
  return (F_x - F_trial) / predicted;
}

// Result of one iteration. `record` is empty when |J^T F|_inf <= grad_tol,
// in which case no step was taken.
struct IterationResult {
  LmState state;
  std::optional<IterationRecord> record;
  double grad_inf = 0.0;
};

namespace detail {

using Clock = std::chrono::steady_clock;

// Factors at mu, multiplying mu by 10 on failure. Returns the mu that worked.
template <DampedSystem S>
double factor_with_escalation(S& solver, double mu, int max_escalations, int& escalations) {
  escalations = 0;
  while (!solver.factor(mu)) {
    if (escalations >= max_escalations)
      throw DivergenceError("damped normal matrix could not be factored after " + std::to_string(escalations) +
                            " escalations (mu = " + std::to_string(mu) + ")");
    mu *= 10.0;
    ++escalations;
  }
  return mu;
}

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline bool finite_all(std::initializer_list<double> vs) {
  for (double v : vs)
    if (!std::isfinite(v)) return false;
  return true;
}

inline void update_damping(LmState& s, bool accepted, const LmConfig& cfg) {
  if (accepted) {
    s.mu *= 0.5;
    s.nu = cfg.nu0;
  } else {
    s.mu *= s.nu;
    s.nu *= 2.0;
  }
}

template <LeastSquaresProblem P>
IterationResult iterate(const P& problem, LmState state, const LmConfig& cfg, Method method,
                        Clock::time_point t0) {
  SparseJacobian J = problem.jacobian(state.x);
  const Vector g = J.apply_transpose(state.f);
  const double grad_inf = g.size() ? g.lpNorm<Eigen::Infinity>() : 0.0;
  if (grad_inf <= cfg.grad_tol) {
    state.jacobian = std::move(J);
    return {std::move(state), std::nullopt, grad_inf};
  }

  IterationRecord rec;
  rec.iter = state.iter;
  rec.nu = state.nu;
  rec.residual_norm_before = state.residual_norm;
  rec.n_jacobian_builds = 1;

  auto solver = problem.damped_solver(state.x, J);
  state.mu = factor_with_escalation(solver, state.mu, cfg.max_mu_escalations, rec.mu_escalations);
  rec.mu = state.mu;

  const Vector h = solver.solve(g);
  const double F_x = state.residual_norm;
  const double lin_h = (state.f + J.apply(h)).norm();

  Vector step;
  Vector f_trial;
  double rho = -std::numeric_limits<double>::infinity();
  bool valid = h.allFinite();

  if (method == Method::classic_lm) {
    step = h;
    if (valid) {
      f_trial = problem.residual(state.x + step);
      rec.n_residual_evals = 1;
      const double F_trial = f_trial.norm();
      rec.trial_residual_norm = F_trial;
      if (finite_all({F_trial, lin_h})) rho = gain_ratio(F_x, F_trial, lin_h);
    }
  } else {
    Vector hhat = Vector::Zero(h.size());
    if (valid) {
      const Vector y = state.x + h;
      const Vector f_y = problem.residual(y);
      rec.n_residual_evals = 1;
      const double F_y = f_y.norm();
      if (std::isfinite(F_y)) {
        hhat = solver.solve(J.apply_transpose(f_y));
        const double lin_hhat = (f_y + J.apply(hhat)).norm();
        valid = hhat.allFinite();
        step = h + hhat;
        if (valid) {
          f_trial = problem.residual(state.x + step);
          rec.n_residual_evals = 2;
          const double F_trial = f_trial.norm();
          rec.trial_residual_norm = F_trial;
          if (finite_all({F_trial, lin_h, lin_hhat})) rho = gain_ratio(F_x, F_trial, lin_h, F_y, lin_hhat);
        }
      } else {
        valid = false;
      }
    }
    if (step.size() == 0) step = h;
  }

  rec.step_norm = valid ? step.norm() : std::numeric_limits<double>::infinity();
  if (std::isfinite(rho)) rec.rho = rho;
  rec.accepted = valid && std::isfinite(rho) && rho > cfg.gamma;

  if (rec.accepted) {
    state.x += step;
    state.f = std::move(f_trial);
    state.residual_norm = rec.trial_residual_norm;
  }
  rec.residual_norm_after = state.residual_norm;
  update_damping(state, rec.accepted, cfg);
  state.iter += 1;
  state.jacobian = std::move(J);
  rec.elapsed = seconds_since(t0);
  return {std::move(state), rec, grad_inf};
}

}  // namespace detail

template <LeastSquaresProblem P>
IterationResult classic_lm_iterate(const P& problem, LmState state, const LmConfig& cfg) {
  return detail::iterate(problem, std::move(state), cfg, Method::classic_lm, detail::Clock::now());
}

template <LeastSquaresProblem P>
IterationResult modified_lm_iterate(const P& problem, LmState state, const LmConfig& cfg) {
  return detail::iterate(problem, std::move(state), cfg, Method::modified_lm, detail::Clock::now());
}

template <LeastSquaresProblem P>
LmState initial_state(const P& problem, Vector x0, const LmConfig& cfg) {
  LmState s;
  s.f = problem.residual(x0);
  s.residual_norm = s.f.norm();
  if (!std::isfinite(s.residual_norm)) throw DomainError("initial residual is not finite");
  s.mu = cfg.mu0 ? *cfg.mu0 : cfg.mu0_scale * problem.gram_diagonal_max(x0);
  if (!(s.mu > 0.0) || !std::isfinite(s.mu)) s.mu = cfg.mu0_scale;  // all-zero Jacobian
  s.nu = cfg.nu0;
  s.x = std::move(x0);
  return s;
}

struct RunTotals {
  std::size_t iterations = 0;
  std::size_t jacobian_builds = 0;
  std::size_t residual_evals = 0;
  double initial_residual = 0.0;
  double final_residual = 0.0;
  double seconds = 0.0;
};

struct LmResult {
  Vector x;
  Trace trace;
  TerminationReason reason = TerminationReason::max_iters;
  RunTotals totals;
  double final_mu = 0.0;
};

// Outer loop. `reference_norm` scales rel_tol (|X|_F for CP problems).
template <LeastSquaresProblem P>
LmResult minimize(const P& problem, Vector x0, const LmConfig& cfg, double reference_norm = 1.0) {
  cfg.validate();
  const auto t0 = detail::Clock::now();
  LmState state = initial_state(problem, std::move(x0), cfg);
  LmResult out;
  out.totals.initial_residual = state.residual_norm;
  out.totals.residual_evals = 1;

  while (true) {
    if (state.iter >= cfg.max_iters) {
      out.reason = TerminationReason::max_iters;
      break;
    }
    if (state.residual_norm <= cfg.tol) {
      out.reason = TerminationReason::residual_tol;
      break;
    }
    if (reference_norm > 0.0 && state.residual_norm <= cfg.rel_tol * reference_norm) {
      out.reason = TerminationReason::relative_tol;
      break;
    }
    const double x_norm = state.x.norm();
    IterationResult step = detail::iterate(problem, std::move(state), cfg, cfg.method, t0);
    state = std::move(step.state);
    state.jacobian.reset();
    out.totals.jacobian_builds += 1;
    if (!step.record) {
      out.reason = TerminationReason::grad_tol;
      break;
    }
    out.totals.residual_evals += step.record->n_residual_evals;
    out.trace.push_back(*step.record);
    if (step.record->step_norm <= cfg.step_tol * (x_norm + cfg.step_tol)) {
      out.reason = TerminationReason::step_tol;
      break;
    }
  }
  out.totals.iterations = out.trace.size();
  out.totals.final_residual = state.residual_norm;
  out.totals.seconds = detail::seconds_since(t0);
  out.final_mu = state.mu;
  out.x = std::move(state.x);
  return out;
}

// ---- CP decomposition as a least-squares problem ---------------------------

// Damped solver for CP problems: dense Cholesky of the assembled J^T J, or the
// structured Schur-complement solve.
class CpDampedSolver {
 public:
  explicit CpDampedSolver(DenseDampedSolver s) : impl_(std::move(s)) {}
  explicit CpDampedSolver(SchurDampedSolver s) : impl_(std::move(s)) {}

  bool factor(double mu) {
    return std::visit([mu](auto& s) { return s.factor(mu); }, impl_);
  }
  Vector solve(const Vector& grad) const {
    return std::visit([&](const auto& s) { return s.solve(grad); }, impl_);
  }
  bool is_dense() const noexcept { return std::holds_alternative<DenseDampedSolver>(impl_); }

 private:
  std::variant<DenseDampedSolver, SchurDampedSolver> impl_;
};

// Problems with P above this use the Schur solver under SolverBackend::automatic.
inline constexpr std::size_t kDenseBackendMaxParams = 512;

class CpProblem {
 public:
  CpProblem(const DenseTensor3& observed, std::size_t rank, SolverBackend backend = SolverBackend::automatic)
      : observed_(&observed), shape_{observed.dims(), rank}, backend_(backend) {
    if (rank < 1) throw DomainError("CpProblem: rank must be >= 1");
    if (backend_ == SolverBackend::automatic)
      backend_ = shape_.params() <= kDenseBackendMaxParams ? SolverBackend::dense : SolverBackend::schur;
  }

  const Shape& shape() const noexcept { return shape_; }
  SolverBackend backend() const noexcept { return backend_; }
  const DenseTensor3& observed() const noexcept { return *observed_; }

  CpModel model(const Vector& x) const { return unpack(ParamVector(shape_, x)); }

  Vector residual(const Vector& x) const { return cplm::residual(model(x), *observed_); }
  SparseJacobian jacobian(const Vector& x) const { return build_jacobian(model(x)); }

  CpDampedSolver damped_solver(const Vector& x, const SparseJacobian& j) const {
    if (backend_ == SolverBackend::dense) return CpDampedSolver(DenseDampedSolver(gram_matrix(j)));
    return CpDampedSolver(SchurDampedSolver(model(x)));
  }

  double gram_diagonal_max(const Vector& x) const {
    CpGramStructure gs(model(x));
    double m = 0.0;
    for (int mode = 0; mode < 3; ++mode) m = std::max(m, gs.Gamma(mode).diagonal().maxCoeff());
    return m;
  }

 private:
  const DenseTensor3* observed_;
  Shape shape_;
  SolverBackend backend_;
};

// Rank implied by a parameter vector for the given tensor.
inline std::size_t infer_rank(const Vector& x, const Dims& d) {
  const std::size_t per = d.I + d.J + d.K;
  const auto n = static_cast<std::size_t>(x.size());
  if (n == 0 || n % per != 0)
    throw DomainError("parameter length " + std::to_string(n) + " is not a multiple of I+J+K = " +
                      std::to_string(per));
  return n / per;
}

inline IterationResult classic_lm_iterate(LmState state, const DenseTensor3& observed, const LmConfig& cfg) {
  CpProblem p(observed, infer_rank(state.x, observed.dims()), cfg.backend);
  return classic_lm_iterate(p, std::move(state), cfg);
}

inline IterationResult modified_lm_iterate(LmState state, const DenseTensor3& observed, const LmConfig& cfg) {
  CpProblem p(observed, infer_rank(state.x, observed.dims()), cfg.backend);
  return modified_lm_iterate(p, std::move(state), cfg);
}

struct CpRunResult {
  CpModel model;
  Trace trace;
  TerminationReason reason = TerminationReason::max_iters;
  RunTotals totals;
  Method method = Method::modified_lm;
  SolverBackend backend = SolverBackend::automatic;
};

// Decomposes `observed` at rank R. Starts from `init` when given, otherwise
// from uniform [0, 1) factors drawn with cfg.seed.
inline CpRunResult run(const DenseTensor3& observed, std::size_t rank, const LmConfig& cfg,
                       const std::optional<CpModel>& init = std::nullopt) {
  cfg.validate();
  if (rank < 1) throw DomainError("run: rank must be >= 1");
  CpModel start = init ? *init : random_model(observed.dims(), rank, cfg.seed);
  if (start.shape() != Shape{observed.dims(), rank})
    throw DomainError("run: initial model shape does not match tensor/rank");
  CpProblem problem(observed, rank, cfg.backend);
  LmResult r = minimize(problem, pack(start).data(), cfg, frobenius_norm(observed));
  CpRunResult out;
  out.model = problem.model(r.x);
  out.trace = std::move(r.trace);
  out.reason = r.reason;
  out.totals = r.totals;
  out.method = cfg.method;
  out.backend = problem.backend();
  return out;
}

}  // namespace cplm
