#pragma once

// Trace CSV and run-summary JSON.

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "cplm/lm.hpp"

namespace cplm {

inline constexpr const char* kTraceHeader =
    "iter,mu,nu,rho,res_before,res_after,accepted,step_norm,jac_builds,res_evals,elapsed_s";

inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct TraceCsvOptions {
  // Wall-clock times differ between otherwise identical runs; when false the
  // elapsed_s column is left empty so traces stay byte-reproducible.
  bool include_timing = false;
};

inline void write_trace_csv(std::ostream& out, const Trace& trace, TraceCsvOptions opt = {}) {
  out << kTraceHeader << '\n';
  for (const auto& r : trace) {
    out << r.iter << ',' << format_g17(r.mu) << ',' << format_g17(r.nu) << ','
        << (r.rho ? format_g17(*r.rho) : std::string()) << ',' << format_g17(r.residual_norm_before) << ','
        << format_g17(r.residual_norm_after) << ',' << (r.accepted ? 1 : 0) << ','
        << format_g17(r.step_norm) << ',' << r.n_jacobian_builds << ',' << r.n_residual_evals << ','
        << (opt.include_timing ? format_g17(r.elapsed) : std::string()) << '\n';
  }
}

inline std::string trace_csv(const Trace& trace, TraceCsvOptions opt = {}) {
  std::ostringstream os;
  write_trace_csv(os, trace, opt);
  return os.str();
}

inline nlohmann::json summary_json(const CpRunResult& r) {
  return nlohmann::json{
      {"method", std::string(to_string(r.method))},
      {"iters", r.totals.iterations},
      {"final_residual", r.totals.final_residual},
      {"reason", std::string(to_string(r.reason))},
      {"total_seconds", r.totals.seconds},
      {"jacobian_builds", r.totals.jacobian_builds},
      {"residual_evals", r.totals.residual_evals},
  };
}

}  // namespace cplm
