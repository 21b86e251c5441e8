// Acceptance harness: `cplm_acceptance N` checks criterion N and prints one
// PASS/FAIL line. Exit status 0 on pass.

#include <Eigen/SVD>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "cli.hpp"
#include "cplm/cplm.hpp"
#include "cplm/png_io.hpp"

using namespace cplm;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    note(why);
    pass = false;
  }
  void note(const std::string& s) {
    if (!detail.empty()) detail += "; ";
    detail += s;
  }
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

void check_time(Verdict& v, const Stopwatch& w, double limit) {
  const double s = w.seconds();
  if (s >= limit) v.fail("runtime " + fmt(s, 4) + " s exceeds " + fmt(limit) + " s");
  v.note("runtime " + fmt(s, 3) + " s");
}

// ---- 1: Jacobian vs central differences -----------------------------------
Verdict jacobian_finite_differences() {
  Verdict v;
  Stopwatch w;
  UniformStream pick(101);
  double worst = 0.0;
  const int models = 25;
  for (int t = 0; t < models; ++t) {
    const Dims d{1 + static_cast<std::size_t>(pick.next() * 5), 1 + static_cast<std::size_t>(pick.next() * 5),
                 1 + static_cast<std::size_t>(pick.next() * 5)};
    const std::size_t R = 1 + static_cast<std::size_t>(pick.next() * 3);
    const CpModel m = random_model(d, R, 500 + t, 0.5, 1.5);
    const DenseTensor3 X = random_tensor(d, 900 + t);
    const Shape s{d, R};
    const Matrix J = densify(build_jacobian(m));
    const Matrix fd = oracle::finite_difference_jacobian(
        [&](const Vector& x) { return residual(ParamVector(s, x), X); }, pack(m).data(), 1e-6);
    worst = std::max(worst, (J - fd).cwiseAbs().maxCoeff());
  }
  if (worst > 1e-5) v.fail("max |J - FD| = " + fmt(worst));
  v.note(std::to_string(models) + " models, max |J - FD| = " + fmt(worst, 3));
  check_time(v, w, 10.0);
  return v;
}

// ---- 2: structural counts -------------------------------------------------
Verdict structural_counts() {
  Verdict v;
  Stopwatch w;
  const CpModel m = random_model({3, 4, 5}, 3, 7, 0.5, 1.5);
  const SparseJacobian j = build_jacobian(m);
  if (j.rows() != 60 || j.cols() != 36) v.fail("J is " + std::to_string(j.rows()) + "x" + std::to_string(j.cols()));
  if (j.structural_nonzeros() != 540) v.fail("J nnz = " + std::to_string(j.structural_nonzeros()));

  const Matrix Jd = oracle::kronecker_jacobian(m.A(), m.B(), m.C());
  const Matrix oracle_gram = Jd.transpose() * Jd;
  const auto oracle_nnz = (oracle_gram.array() != 0.0).count();
  if (oracle_nnz != 954) v.fail("dense oracle gram nnz = " + std::to_string(oracle_nnz));
  const Matrix G = gram_matrix(j);
  if (G.rows() != 36 || G.cols() != 36) v.fail("gram shape");
  const auto nnz = (G.array() != 0.0).count();
  if (nnz != 954) v.fail("gram nnz = " + std::to_string(nnz));
  v.note("J 60x36 nnz 540, gram 36x36 nnz " + std::to_string(nnz) + " (oracle " + std::to_string(oracle_nnz) + ")");
  check_time(v, w, 1.0);
  return v;
}

// ---- 3: rank deficiency ---------------------------------------------------
Verdict rank_deficiency() {
  Verdict v;
  Stopwatch w;
  UniformStream pick(303);
  const int models = 60;
  for (int t = 0; t < models; ++t) {
    const Dims d{3 + static_cast<std::size_t>(pick.next() * 3), 3 + static_cast<std::size_t>(pick.next() * 3),
                 3 + static_cast<std::size_t>(pick.next() * 3)};
    const std::size_t R = 1 + static_cast<std::size_t>(pick.next() * 3);
    const CpModel m = random_model(d, R, 2000 + t, -1.0, 1.0);
    const SparseJacobian j = build_jacobian(m);
    const std::size_t P = Shape{d, R}.params();
    const std::size_t rank = numerical_rank(j, 1e-10);
    const Vector sv = singular_values(j);
    const double smax = sv.maxCoeff();
    const auto small = (sv.array() < 1e-10 * smax).count();
    if (rank > P - 2 * R) v.fail(to_string(d) + " R=" + std::to_string(R) + ": rank " + std::to_string(rank));
    if (small < static_cast<Eigen::Index>(2 * R))
      v.fail(to_string(d) + " R=" + std::to_string(R) + ": only " + std::to_string(small) + " tiny singular values");
  }
  v.note(std::to_string(models) + " models");
  check_time(v, w, 30.0);
  return v;
}

// ---- 4: normal-system oracle ----------------------------------------------
Verdict normal_system_oracle() {
  Verdict v;
  double worst_g = 0, worst_r = 0;
  int n = 0;
  for (Dims d : {Dims{3, 4, 5}, Dims{1, 1, 1}, Dims{5, 2, 7}, Dims{6, 6, 6}, Dims{2, 9, 3}, Dims{10, 8, 4}})
    for (std::size_t R : {1u, 2u, 4u}) {
      const CpModel m = random_model(d, R, 40 + n, -1.0, 1.0);
      const DenseTensor3 X = random_tensor(d, 80 + n);
      ++n;
      const SparseJacobian j = build_jacobian(m);
      const Vector f = residual(m, X);
      const NormalSystem ns = normal_system(j, f);
      const Matrix Jd = densify(j);
      const Matrix G = Jd.transpose() * Jd;
      const Vector g = Jd.transpose() * f;
      worst_g = std::max(worst_g, (ns.gram - G).norm() / G.norm());
      if (g.norm() > 0) worst_r = std::max(worst_r, (ns.grad - g).norm() / g.norm());
      const CpGramStructure gs(m);
      worst_g = std::max(worst_g, (gs.dense() - G).norm() / G.norm());
    }
  if (worst_g > 1e-12) v.fail("gram rel err " + fmt(worst_g));
  if (worst_r > 1e-12) v.fail("grad rel err " + fmt(worst_r));
  v.note(std::to_string(n) + " instances, gram " + fmt(worst_g, 3) + ", grad " + fmt(worst_r, 3));
  return v;
}

// Records that break descent or rejection rules; empty when all hold.
std::vector<std::string> step_violations(const CpProblem& p, LmState s, const LmConfig& c, std::size_t iters,
                                         std::size_t& accepted, std::size_t& rejected) {
  std::vector<std::string> bad;
  for (std::size_t k = 0; k < iters; ++k) {
    const Vector x0 = s.x;
    const double mu0 = s.mu, f0 = s.residual_norm;
    IterationResult r = c.method == Method::classic_lm ? classic_lm_iterate(p, s, c) : modified_lm_iterate(p, s, c);
    if (!r.record) break;
    if (r.record->accepted) {
      ++accepted;
      if (!(r.state.residual_norm < f0)) bad.push_back("accepted step did not decrease |F| at k=" + std::to_string(k));
    } else {
      ++rejected;
      if (!(r.state.x == x0)) bad.push_back("rejected step moved x at k=" + std::to_string(k));
      if (!(r.state.mu > mu0)) bad.push_back("rejected step did not increase mu at k=" + std::to_string(k));
    }
    s = std::move(r.state);
  }
  return bad;
}

// ---- 5: exact recovery ----------------------------------------------------
Verdict exact_recovery() {
  Verdict v;
  Stopwatch w;
  const DenseTensor3 X = cp_reconstruct(random_model({10, 10, 10}, 3, 4242));
  const double xn = frobenius_norm(X);
  double best = 1e300;
  std::string per;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    LmConfig c;
    c.method = Method::modified_lm;
    c.max_iters = 500;
    c.seed = seed;
    c.rel_tol = 1e-7;
    const CpRunResult r = run(X, 3, c);
    const double rel = r.totals.final_residual / xn;
    best = std::min(best, rel);
    per += (per.empty() ? "" : ",") + fmt(rel, 2);
  }
  if (!(best < 1e-5)) v.fail("best relative residual " + fmt(best));
  v.note("best relative residual " + fmt(best, 3) + " over seeds [" + per + "]");
  check_time(v, w, 60.0);
  return v;
}

// ---- 6: monotone descent --------------------------------------------------
Verdict monotone_descent() {
  Verdict v;
  std::size_t acc = 0, rej = 0, runs = 0;
  std::vector<std::string> bad;
  struct Case {
    Dims d;
    std::size_t R;
    bool exact;
  };
  for (const Case& cs : {Case{{10, 10, 10}, 3, true}, Case{{6, 5, 4}, 4, false}, Case{{8, 7, 6}, 5, false},
                         Case{{20, 20, 12}, 10, false}, Case{{12, 10, 3}, 6, false}})
    for (Method m : {Method::classic_lm, Method::modified_lm})
      for (double gamma : {0.0, 0.25, 0.75})
        for (SolverBackend b : {SolverBackend::dense, SolverBackend::schur}) {
          const DenseTensor3 X = cs.exact ? cp_reconstruct(random_model(cs.d, cs.R, 77)) : random_tensor(cs.d, 78);
          LmConfig c;
          c.method = m;
          c.gamma = gamma;
          c.backend = b;
          const CpProblem p(X, cs.R, b);
          const LmState s = initial_state(p, pack(random_model(cs.d, cs.R, runs)).data(), c);
          auto viol = step_violations(p, s, c, 40, acc, rej);
          bad.insert(bad.end(), viol.begin(), viol.end());
          ++runs;
        }
  // Full runs through the outer loop, checked from their traces.
  for (std::uint64_t seed = 0; seed < 4; ++seed)
    for (Method m : {Method::classic_lm, Method::modified_lm}) {
      LmConfig c;
      c.method = m;
      c.seed = seed;
      c.max_iters = 150;
      const CpRunResult r = run(random_tensor({9, 8, 7}, seed), 6, c);
      double prev = r.totals.initial_residual;
      for (const auto& rec : r.trace) {
        if (rec.accepted && !(rec.residual_norm_after < rec.residual_norm_before)) bad.push_back("trace accepted");
        if (!rec.accepted && rec.residual_norm_after != rec.residual_norm_before) bad.push_back("trace rejected");
        if (rec.residual_norm_before != prev) bad.push_back("trace chain");
        prev = rec.residual_norm_after;
        rec.accepted ? ++acc : ++rej;
      }
      ++runs;
    }
  if (!bad.empty()) v.fail(std::to_string(bad.size()) + " violations, first: " + bad.front());
  if (rej == 0) v.fail("no rejected iteration was exercised");
  v.note(std::to_string(runs) + " runs, " + std::to_string(acc) + " accepted, " + std::to_string(rej) + " rejected");
  return v;
}

// ---- 7: LM vs modified LM -------------------------------------------------
Verdict lm_vs_mlm() {
  Verdict v;
  Stopwatch w;
  const DenseTensor3 X = random_tensor({20, 20, 12}, 2012);
  LmConfig c;
  c.max_iters = 3000;
  c.seed = 1;
  c.step_tol = 1e-10;
  c.method = Method::classic_lm;
  const CpRunResult lm = run(X, 30, c);
  c.method = Method::modified_lm;
  const CpRunResult mlm = run(X, 30, c);
  const double a = lm.totals.final_residual, b = mlm.totals.final_residual;
  const double rel = std::fabs(a - b) / std::max(a, b);
  if (!(rel <= 1e-3)) v.fail("residuals " + fmt(a, 8) + " vs " + fmt(b, 8) + " differ by " + fmt(rel * 100, 3) + "%");
  auto per_unit = [](const CpRunResult& r) {
    return static_cast<double>(r.totals.jacobian_builds) / (r.totals.initial_residual - r.totals.final_residual);
  };
  const double cl = per_unit(lm), cm = per_unit(mlm);
  if (!(cm <= cl)) v.fail("builds per unit reduction mlm " + fmt(cm) + " > lm " + fmt(cl));
  v.note("lm " + fmt(a, 8) + " (" + std::to_string(lm.totals.jacobian_builds) + " builds, " +
         std::string(to_string(lm.reason)) + "), mlm " + fmt(b, 8) + " (" +
         std::to_string(mlm.totals.jacobian_builds) + " builds, " + std::string(to_string(mlm.reason)) +
         "), diff " + fmt(rel * 100, 3) + "%, builds/unit " + fmt(cl, 4) + " vs " + fmt(cm, 4));
  check_time(v, w, 300.0);
  return v;
}

// ---- 8: compression column ------------------------------------------------
Verdict compression_table() {
  Verdict v;
  struct Row {
    std::size_t I, J, K, R;
    long expect;
  };
  const Row rows[] = {{100, 100, 3, 20, 87}, {100, 100, 3, 50, 67}, {100, 100, 3, 75, 50}, {35, 25, 15, 40, 77},
                      {45, 35, 20, 25, 91},  {45, 35, 20, 40, 87},  {45, 35, 20, 60, 81},  {45, 35, 25, 25, 93},
                      {45, 35, 25, 40, 89},  {45, 35, 25, 60, 84},  {45, 35, 30, 25, 94},  {45, 35, 30, 40, 91},
                      {45, 35, 30, 60, 86}};
  int ok = 0;
  for (const Row& r : rows) {
    const Compression c = compression_percent(r.I, r.J, r.K, r.R);
    if (c.rounded == r.expect) {
      ++ok;
    } else {
      v.fail(std::to_string(r.I) + "x" + std::to_string(r.J) + "x" + std::to_string(r.K) + " R=" +
             std::to_string(r.R) + ": " + fmt(c.percent, 6) + " -> " + std::to_string(c.rounded) + ", table " +
             std::to_string(r.expect));
    }
  }
  v.note(std::to_string(ok) + "/" + std::to_string(std::size(rows)) + " entries match");
  return v;
}

// ---- 9: round trips -------------------------------------------------------
Verdict round_trips() {
  Verdict v;
  for (std::uint64_t t = 0; t < 20; ++t) {
    const Dims d{1 + t % 4, 2 + t % 3, 1 + t % 5};
    const DenseTensor3 X = random_tensor(d, t, -1e3, 1e3);
    const io::Bytes b = encode_tns3(X);
    const DenseTensor3 Y = decode_tns3(b);
    if (!(Y == X) || encode_tns3(Y) != b) v.fail("TNS3 " + to_string(d));
    const CpModel m = random_model(d, 1 + t % 3, t, -5, 5);
    const io::Bytes mb = encode_cpd3(m);
    const CpModel n = decode_cpd3(mb);
    if (!(n == m) || encode_cpd3(n) != mb) v.fail("CPD3 " + to_string(d));
  }
  const fs::path tmp = fs::temp_directory_path() / "cplm_acceptance_rt";
  fs::create_directories(tmp);
  const DenseTensor3 X = random_tensor({3, 4, 5}, 9);
  write_tns3(tmp / "x.tns3", X);
  if (!(read_tns3(tmp / "x.tns3") == X)) v.fail("TNS3 file");
  const CpModel m = random_model({3, 4, 5}, 2, 9);
  write_cpd3(tmp / "m.cpd3", m);
  if (!(read_cpd3(tmp / "m.cpd3") == m)) v.fail("CPD3 file");
  fs::remove_all(tmp);

  UniformStream u(5);
  for (int t = 0; t < 20; ++t) {
    const std::size_t w = 1 + static_cast<std::size_t>(u.next() * 16), h = 1 + static_cast<std::size_t>(u.next() * 16);
    std::vector<std::uint8_t> px(3 * w * h);
    for (auto& p : px) p = static_cast<std::uint8_t>(u.next() * 256);
    const RgbImage img(w, h, px);
    for (PixelScale s : {PixelScale::unit, PixelScale::byte})
      if (!(tensor_to_image(image_to_tensor(img, s), s) == img)) v.fail("image round trip");
  }

  UniformStream pick(99);
  int shapes = 0;
  while (shapes < 1000) {
    const Dims d{1 + static_cast<std::size_t>(pick.next() * 12), 1 + static_cast<std::size_t>(pick.next() * 12),
                 1 + static_cast<std::size_t>(pick.next() * 12)};
    const std::size_t R = 1 + static_cast<std::size_t>(pick.next() * 8);
    const Shape s{d, R};
    if (s.params() > 500) continue;
    ++shapes;
    Vector x(static_cast<Eigen::Index>(s.params()));
    for (auto& e : x) e = pick.next(-1, 1);
    const ParamVector p(s, x);
    if (!(pack(unpack(p)).data() == x)) v.fail("pack(unpack(x)) != x for " + to_string(d));
    const CpModel m = unpack(p);
    if (!(unpack(pack(m)) == m)) v.fail("unpack(pack(m)) != m");
  }
  v.note("TNS3/CPD3 bitwise, images at both scales, " + std::to_string(shapes) + " pack/unpack shapes");
  return v;
}

// ---- 10: CLI determinism --------------------------------------------------
Verdict determinism() {
  Verdict v;
#ifdef CPLM_TOOL_PATH
  const fs::path tmp = fs::temp_directory_path() / "cplm_acceptance_det";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  for (const char* tag : {"a", "b"}) {
    const std::string t = tag;
    const std::string cmd = std::string(CPLM_TOOL_PATH) +
                            " decompose --synthetic 12x10x8 --rank 4 --seed 11 --max-iters 60 --out " +
                            (tmp / (t + ".cpd3")).string() + " --trace " + (tmp / (t + ".csv")).string() +
                            " --summary " + (tmp / (t + ".json")).string() + " >/dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) v.fail("decompose invocation failed");
  }
  const std::string ta = slurp(tmp / "a.csv"), tb = slurp(tmp / "b.csv");
  if (ta.empty() || ta != tb) v.fail("trace CSV differs");
  const std::string ma = slurp(tmp / "a.cpd3"), mb = slurp(tmp / "b.cpd3");
  if (ma.empty() || ma != mb) v.fail("CPD3 differs");
  v.note("trace " + std::to_string(ta.size()) + " bytes, model " + std::to_string(ma.size()) + " bytes identical");
  fs::remove_all(tmp);
#else
  v.fail("built without the cplm tool path");
#endif
  return v;
}

// ---- 11: image ladder -----------------------------------------------------
RgbImage petal_image() {
  RgbImage img(100, 100);
  for (std::size_t r = 0; r < 100; ++r)
    for (std::size_t c = 0; c < 100; ++c) {
      const double y = (static_cast<double>(r) - 49.5) / 50.0, x = (static_cast<double>(c) - 49.5) / 50.0;
      const double rad = std::sqrt(x * x + y * y), th = std::atan2(y, x);
      const double petal = 0.5 + 0.5 * std::cos(5.0 * th + 6.0 * rad);
      const double inside = rad < 0.9 ? 1.0 : 0.0;
      const double red = inside * (0.35 + 0.6 * petal * (1.0 - 0.5 * rad));
      const double green = 0.15 + 0.3 * (1.0 - inside) * (0.5 + 0.5 * std::sin(8.0 * x + 3.0 * y));
      const double blue = 0.1 + 0.25 * inside * petal * rad;
      img(r, c, 0) = quantize(red, PixelScale::unit);
      img(r, c, 1) = quantize(green, PixelScale::unit);
      img(r, c, 2) = quantize(blue, PixelScale::unit);
    }
  return img;
}

Verdict image_ladder() {
  Verdict v;
  Stopwatch w;
  const RgbImage img = petal_image();
  const DenseTensor3 X = image_to_tensor(img, PixelScale::unit);
  double prev_res = 1e300, prev_psnr = -1e300;
  std::string rows;
  for (std::size_t R : {20u, 50u, 75u}) {
    LmConfig c;
    c.max_iters = 30;
    c.seed = 3;
    const CpRunResult r = run(X, R, c);
    const double res = r.totals.final_residual;
    const double p = psnr_capped(img, tensor_to_image(cp_reconstruct(r.model), PixelScale::unit));
    if (res > prev_res) v.fail("residual rose at R=" + std::to_string(R));
    if (p < prev_psnr) v.fail("PSNR fell at R=" + std::to_string(R));
    prev_res = res;
    prev_psnr = p;
    rows += (rows.empty() ? "" : ", ") + ("R=" + std::to_string(R) + " res " + fmt(res, 5) + " psnr " + fmt(p, 4) +
                                          " comp " + std::to_string(compression_percent(100, 100, 3, R).rounded));
  }
  v.note(rows);
  check_time(v, w, 600.0);
  return v;
}

const std::map<int, std::pair<const char*, std::function<Verdict()>>>& criteria() {
  static const std::map<int, std::pair<const char*, std::function<Verdict()>>> m = {
      {1, {"jacobian matches central differences", jacobian_finite_differences}},
      {2, {"structural counts 60x36/540 and gram 954", structural_counts}},
      {3, {"jacobian rank deficiency", rank_deficiency}},
      {4, {"normal system matches dense oracle", normal_system_oracle}},
      {5, {"exact recovery 10x10x10 R=3", exact_recovery}},
      {6, {"monotone descent and rejection rules", monotone_descent}},
      {7, {"LM and modified LM agree on 20x20x12 R=30", lm_vs_mlm}},
      {8, {"compression percentages match reference values", compression_table}},
      {9, {"file, image and parameter round trips", round_trips}},
      {10, {"decompose is byte-for-byte deterministic", determinism}},
      {11, {"image rank ladder 20/50/75", image_ladder}},
  };
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  cplm::cli::tune_allocator();
  std::vector<int> which;
  for (int a = 1; a < argc; ++a) which.push_back(std::atoi(argv[a]));
  if (which.empty())
    for (const auto& [n, _] : criteria()) which.push_back(n);
  int failed = 0;
  for (int n : which) {
    auto it = criteria().find(n);
    if (it == criteria().end()) {
      std::cerr << "unknown criterion " << n << '\n';
      return 2;
    }
    Verdict v;
    try {
      v = it->second.second();
    } catch (const std::exception& e) {
      v.fail(std::string("exception: ") + e.what());
    }
    std::cout << "criterion " << n << ": " << (v.pass ? "PASS" : "FAIL") << " - " << it->second.first << " ("
              << v.detail << ")" << std::endl;
    if (!v.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
