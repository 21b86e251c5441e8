#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"

#include "cplm/cplm.hpp"
#include "cplm/png_io.hpp"

namespace cplm::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Failure : std::runtime_error {
  Failure(int c, const std::string& msg) : std::runtime_error(msg), code(c) {}
  int code;
};

// ---- flag resolution -------------------------------------------------------

// Shared flags. Unset optionals fall back to the --config file, then to the
// built-in defaults.
struct SharedFlags {
  std::optional<std::size_t> rank;
  std::optional<std::string> method;
  std::optional<std::size_t> max_iters;
  std::optional<double> tol, rel_tol, grad_tol, mu0, nu0, gamma, step_tol;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scale;
  std::optional<std::string> backend;
  std::optional<int> threads;
  std::optional<std::string> config;
};

struct Settings {
  std::optional<std::size_t> rank;
  LmConfig lm;
  PixelScale scale = PixelScale::unit;
  int threads = 1;
};

void add_shared(CLI::App* app, SharedFlags& f, bool with_method = true) {
  app->add_option("--rank", f.rank, "CP rank R")->check(CLI::PositiveNumber);
  if (with_method) app->add_option("--method", f.method, "lm | mlm")->check(CLI::IsMember({"lm", "mlm"}));
  app->add_option("--max-iters", f.max_iters, "Iteration cap N")->check(CLI::PositiveNumber);
  app->add_option("--tol", f.tol, "Absolute residual tolerance");
  app->add_option("--rel-tol", f.rel_tol, "Residual tolerance relative to |X|_F");
  app->add_option("--grad-tol", f.grad_tol, "Gradient infinity-norm tolerance");
  app->add_option("--step-tol", f.step_tol, "Relative step-size tolerance");
  app->add_option("--mu0", f.mu0, "Initial damping (default 1e-2 max diag J^T J)");
  app->add_option("--nu0", f.nu0, "Initial damping multiplier (> 1)");
  app->add_option("--gamma", f.gamma, "Gain-ratio acceptance threshold");
  app->add_option("--seed", f.seed, "Seed for the factor initialization");
  app->add_option("--scale", f.scale, "Pixel scale for images: unit | byte")
      ->check(CLI::IsMember({"unit", "byte"}));
  app->add_option("--backend", f.backend, "Damped solver: auto | dense | schur")
      ->check(CLI::IsMember({"auto", "dense", "schur"}));
  app->add_option("--threads", f.threads, "Worker threads")->check(CLI::PositiveNumber);
  app->add_option("--config", f.config, "JSON config file");
}

Method parse_method(const std::string& s) {
  if (s == "lm") return Method::classic_lm;
  if (s == "mlm") return Method::modified_lm;
  throw Failure(kUsage, "unknown method '" + s + "'");
}

PixelScale parse_scale(const std::string& s) {
  if (s == "unit") return PixelScale::unit;
  if (s == "byte") return PixelScale::byte;
  throw Failure(kUsage, "unknown scale '" + s + "'");
}

SolverBackend parse_backend(const std::string& s) {
  if (s == "auto") return SolverBackend::automatic;
  if (s == "dense") return SolverBackend::dense;
  if (s == "schur") return SolverBackend::schur;
  throw Failure(kUsage, "unknown backend '" + s + "'");
}

json load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Failure(kInput, "cannot read config '" + path.string() + "'");
  try {
    json j = json::parse(in);
    if (!j.is_object()) throw Failure(kInput, "config '" + path.string() + "' must hold a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw Failure(kInput, "config '" + path.string() + "': " + e.what());
  }
}

template <class T>
std::optional<T> pick(const std::optional<T>& flag, const json& cfg, const char* key) {
  if (flag) return flag;
  if (auto it = cfg.find(key); it != cfg.end() && !it->is_null()) {
    try {
      return it->get<T>();
    } catch (const json::exception& e) {
      throw Failure(kInput, std::string("config key '") + key + "': " + e.what());
    }
  }
  return std::nullopt;
}

Settings resolve(const SharedFlags& f) {
  json cfg = f.config ? load_config(*f.config) : json::object();
  Settings s;
  s.rank = pick(f.rank, cfg, "rank");
  if (auto v = pick(f.method, cfg, "method")) s.lm.method = parse_method(*v);
  if (auto v = pick(f.max_iters, cfg, "max_iters")) s.lm.max_iters = *v;
  if (auto v = pick(f.tol, cfg, "tol")) s.lm.tol = *v;
  if (auto v = pick(f.rel_tol, cfg, "rel_tol")) s.lm.rel_tol = *v;
  if (auto v = pick(f.grad_tol, cfg, "grad_tol")) s.lm.grad_tol = *v;
  if (auto v = pick(f.step_tol, cfg, "step_tol")) s.lm.step_tol = *v;
  s.lm.mu0 = pick(f.mu0, cfg, "mu0");
  if (auto v = pick(f.nu0, cfg, "nu0")) s.lm.nu0 = *v;
  if (auto v = pick(f.gamma, cfg, "gamma")) s.lm.gamma = *v;
  if (auto v = pick(f.seed, cfg, "seed")) s.lm.seed = *v;
  if (auto v = pick(f.scale, cfg, "scale")) s.scale = parse_scale(*v);
  if (auto v = pick(f.backend, cfg, "backend")) s.lm.backend = parse_backend(*v);
  if (auto v = pick(f.threads, cfg, "threads")) s.threads = std::max(1, *v);
  // Config-file only.
  if (auto v = pick(std::optional<int>{}, cfg, "max_mu_escalations")) s.lm.max_mu_escalations = *v;
  if (s.rank && *s.rank < 1) throw Failure(kUsage, "rank must be >= 1");
  try {
    s.lm.validate();
  } catch (const DomainError& e) {
    throw Failure(kUsage, e.what());
  }
  return s;
}

Dims parse_dims(const std::string& text) {
  Dims d;
  std::size_t* out[3] = {&d.I, &d.J, &d.K};
  std::size_t pos = 0;
  for (int n = 0; n < 3; ++n) {
    std::size_t end = text.find_first_of("xX,", pos);
    if (n < 2 && end == std::string::npos) throw Failure(kUsage, "dims must look like IxJxK, got '" + text + "'");
    std::string part = text.substr(pos, n < 2 ? end - pos : std::string::npos);
    auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), *out[n]);
    if (ec != std::errc() || p != part.data() + part.size() || *out[n] == 0)
      throw Failure(kUsage, "bad extent '" + part + "' in dims '" + text + "'");
    pos = end + 1;
  }
  return d;
}

// ---- inputs ----------------------------------------------------------------

struct SyntheticSpec {
  Dims dims;
  std::optional<std::size_t> true_rank;
  std::uint64_t seed = 0;
};

// Uniform [0, 1) entries, or a CP tensor from uniform [0, 1) factors. The
// data stream is salted so it never coincides with the solver's init stream.
DenseTensor3 synthetic_tensor(const SyntheticSpec& s) {
  const std::uint64_t data_seed = splitmix64(s.seed ^ 0x5eedda7a5eedda7aULL);
  if (s.true_rank) return cp_reconstruct(random_model(s.dims, *s.true_rank, data_seed));
  return random_tensor(s.dims, data_seed);
}

struct LoadedInput {
  DenseTensor3 tensor;
  std::optional<RgbImage> image;
  std::string description;
};

bool starts_with(const io::Bytes& b, std::string_view magic) {
  return b.size() >= magic.size() && std::equal(magic.begin(), magic.end(), b.begin(),
                                                [](char m, unsigned char c) { return static_cast<unsigned char>(m) == c; });
}

LoadedInput load_file(const fs::path& path, PixelScale scale, std::ostream& err) {
  io::Bytes bytes;
  try {
    bytes = io::read_file(path);
  } catch (const IoError& e) {
    throw Failure(kInput, e.what());
  }
  try {
    if (starts_with(bytes, "TNS3")) return {decode_tns3(bytes), std::nullopt, path.string()};
    if (starts_with(bytes, "\x89PNG")) {
      auto png = decode_png(bytes);
      if (png.alpha_stripped) err << "warning: alpha channel of '" << path.string() << "' discarded\n";
      return {image_to_tensor(png.image, scale), png.image, path.string()};
    }
    if (starts_with(bytes, "P6")) {
      RgbImage img = decode_ppm(bytes);
      return {image_to_tensor(img, scale), img, path.string()};
    }
  } catch (const FormatError& e) {
    throw Failure(kInput, "'" + path.string() + "': " + e.what());
  } catch (const DomainError& e) {
    throw Failure(kInput, "'" + path.string() + "': " + e.what());
  }
  throw Failure(kInput, "'" + path.string() + "': unrecognized format (expected TNS3, PNG or P6 PPM)");
}

struct InputFlags {
  std::optional<std::string> input;
  std::optional<std::string> synthetic;
  std::optional<std::size_t> true_rank;
  std::uint64_t data_seed = 0;
};

void add_input(CLI::App* app, InputFlags& f) {
  auto* in = app->add_option("--input", f.input, "TNS3 tensor, PNG or PPM image");
  auto* syn = app->add_option("--synthetic", f.synthetic, "Generate a random IxJxK tensor");
  in->excludes(syn);
  app->add_option("--true-rank", f.true_rank, "Build the synthetic tensor from rank-N uniform factors")
      ->check(CLI::PositiveNumber);
  app->add_option("--data-seed", f.data_seed, "Seed for the synthetic tensor");
}

LoadedInput load_input(const InputFlags& f, PixelScale scale, std::ostream& err) {
  if (f.input.has_value() == f.synthetic.has_value())
    throw Failure(kUsage, "exactly one of --input or --synthetic is required");
  if (f.input) return load_file(*f.input, scale, err);
  SyntheticSpec s{parse_dims(*f.synthetic), f.true_rank, f.data_seed};
  std::string desc = "synthetic:" + to_string(s.dims) +
                     (s.true_rank ? ":rank" + std::to_string(*s.true_rank) : std::string(":uniform")) +
                     ":seed" + std::to_string(s.seed);
  return {synthetic_tensor(s), std::nullopt, desc};
}

// ---- outputs ---------------------------------------------------------------

template <class Fn>
void write_output(const fs::path& path, Fn&& fn) {
  try {
    fn(path);
  } catch (const IoError& e) {
    throw Failure(kOutput, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    throw Failure(kOutput, e.what());
  }
}

bool is_image_path(const fs::path& p) { return has_extension(p, ".png") || has_extension(p, ".ppm"); }

json compression_json(const Shape& s) {
  const Compression c = compression_percent(s);
  return {{"percent", c.percent}, {"rounded", c.rounded}, {"degenerate", c.degenerate}};
}

void warn_compression(const Shape& s, std::ostream& err) {
  if (compression_percent(s).degenerate)
    err << "warning: R(I+J+K) = " << s.params() << " >= IJK = " << s.dims.count()
        << "; the factored form is not smaller, compression reported as 0\n";
}

CpRunResult solve_or_fail(const DenseTensor3& t, std::size_t rank, const LmConfig& cfg) {
  try {
    return run(t, rank, cfg);
  } catch (const DivergenceError& e) {
    throw Failure(kDivergence, std::string("solver diverged: ") + e.what());
  }
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

// ---- commands --------------------------------------------------------------

struct DecomposeFlags {
  SharedFlags shared;
  InputFlags input;
  std::optional<std::string> out, trace, summary, reconstruction;
  bool trace_timing = false;
};

int cmd_decompose(const DecomposeFlags& f, std::ostream& out, std::ostream& err) {
  Settings s = resolve(f.shared);
  if (!s.rank) throw Failure(kUsage, "--rank is required");
  LoadedInput in = load_input(f.input, s.scale, err);
  const Shape shape{in.tensor.dims(), *s.rank};
  warn_compression(shape, err);

  CpRunResult r = solve_or_fail(in.tensor, *s.rank, s.lm);
  const double xnorm = frobenius_norm(in.tensor);

  json summary = summary_json(r);
  summary["initial_residual"] = r.totals.initial_residual;
  summary["relative_residual"] = xnorm > 0 ? r.totals.final_residual / xnorm : 0.0;
  summary["rank"] = *s.rank;
  summary["dims"] = {shape.dims.I, shape.dims.J, shape.dims.K};
  summary["compression"] = compression_json(shape);
  summary["seed"] = s.lm.seed;
  summary["scale"] = std::string(to_string(s.scale));
  summary["backend"] = std::string(to_string(r.backend));
  summary["threads"] = s.threads;
  summary["input"] = in.description;

  DenseTensor3 recon = cp_reconstruct(r.model);
  if (in.image && recon.dims().K == 3) summary["psnr_db"] = psnr_capped(*in.image, tensor_to_image(recon, s.scale));

  if (f.out) write_output(*f.out, [&](const fs::path& p) { write_cpd3(p, r.model); });
  if (f.trace)
    write_output(*f.trace, [&](const fs::path& p) {
      io::write_text_atomic(p, trace_csv(r.trace, {.include_timing = f.trace_timing}));
    });
  if (f.reconstruction)
    write_output(*f.reconstruction, [&](const fs::path& p) {
      if (is_image_path(p)) {
        if (recon.dims().K != 3) throw Failure(kUsage, "image output needs a third extent of 3");
        write_image(p, tensor_to_image(recon, s.scale));
      } else {
        write_tns3(p, recon);
      }
    });
  if (f.summary)
    write_output(*f.summary, [&](const fs::path& p) { io::write_text_atomic(p, summary.dump(2) + "\n"); });
  else
    out << summary.dump(2) << '\n';
  return kOk;
}

struct ReconstructFlags {
  std::string model;
  std::string out;
  std::optional<std::string> reference;
  std::string scale = "unit";
};

int cmd_reconstruct(const ReconstructFlags& f, std::ostream& out, std::ostream& err) {
  const PixelScale scale = parse_scale(f.scale);
  CpModel model;
  try {
    model = read_cpd3(f.model);
  } catch (const FormatError& e) {
    throw Failure(kInput, "'" + f.model + "': malformed CPD3: " + e.what());
  } catch (const IoError& e) {
    throw Failure(kInput, e.what());
  } catch (const DomainError& e) {
    throw Failure(kInput, "'" + f.model + "': " + e.what());
  }
  DenseTensor3 recon = cp_reconstruct(model);
  const bool as_image = is_image_path(f.out);
  if (as_image && recon.dims().K != 3)
    throw Failure(kInput, "model has third extent " + std::to_string(recon.dims().K) + "; image output needs 3");

  json report = {{"dims", {recon.dims().I, recon.dims().J, recon.dims().K}}, {"rank", model.rank()}};
  if (f.reference) {
    LoadedInput ref = load_file(*f.reference, scale, err);
    if (ref.tensor.dims() != recon.dims())
      throw Failure(kInput, "reference shape " + to_string(ref.tensor.dims()) + " differs from model " +
                                to_string(recon.dims()));
    const double res = frobenius_norm(sub(ref.tensor, recon));
    const double xn = frobenius_norm(ref.tensor);
    report["residual"] = res;
    report["relative_residual"] = xn > 0 ? res / xn : 0.0;
    if (ref.image) report["psnr_db"] = psnr_capped(*ref.image, tensor_to_image(recon, scale));
  }
  write_output(f.out, [&](const fs::path& p) {
    if (as_image)
      write_image(p, tensor_to_image(recon, scale));
    else
      write_tns3(p, recon);
  });
  out << report.dump(2) << '\n';
  return kOk;
}

struct CompareFlags {
  SharedFlags shared;
  InputFlags input;
  std::optional<std::string> out;
  std::optional<std::string> trace_prefix;
};

int cmd_compare(const CompareFlags& f, std::ostream& out, std::ostream& err) {
  Settings s = resolve(f.shared);
  if (!s.rank) throw Failure(kUsage, "--rank is required");
  LoadedInput in = load_input(f.input, s.scale, err);
  const Shape shape{in.tensor.dims(), *s.rank};
  warn_compression(shape, err);
  const Compression comp = compression_percent(shape);
  const double xnorm = frobenius_norm(in.tensor);

  std::ostringstream csv;
  csv << "method,iters,jacobian_builds,residual_evals,final_residual,relative_residual,seconds,compression,"
         "compression_rounded,reason,status\n";
  std::ostringstream table;
  table << "tensor " << to_string(shape.dims) << ", rank " << shape.rank << ", compression "
        << fixed(comp.percent, 4) << "%\n";
  table << std::left << std::setw(8) << "method" << std::right << std::setw(8) << "iters" << std::setw(10)
        << "jac" << std::setw(10) << "res_ev" << std::setw(22) << "residual" << std::setw(12) << "time(s)"
        << "  reason\n";

  int worst = kOk;
  for (Method m : {Method::classic_lm, Method::modified_lm}) {
    LmConfig cfg = s.lm;
    cfg.method = m;
    try {
      CpRunResult r = solve_or_fail(in.tensor, *s.rank, cfg);
      csv << to_string(m) << ',' << r.totals.iterations << ',' << r.totals.jacobian_builds << ','
          << r.totals.residual_evals << ',' << format_g17(r.totals.final_residual) << ','
          << format_g17(xnorm > 0 ? r.totals.final_residual / xnorm : 0.0) << ','
          << format_g17(r.totals.seconds) << ',' << format_g17(comp.percent) << ',' << comp.rounded << ','
          << to_string(r.reason) << ",ok\n";
      table << std::left << std::setw(8) << to_string(m) << std::right << std::setw(8) << r.totals.iterations
            << std::setw(10) << r.totals.jacobian_builds << std::setw(10) << r.totals.residual_evals
            << std::setw(22) << fixed(r.totals.final_residual, 10) << std::setw(12)
            << fixed(r.totals.seconds, 4) << "  " << to_string(r.reason) << '\n';
      if (f.trace_prefix)
        write_output(*f.trace_prefix + "." + std::string(to_string(m)) + ".csv",
                     [&](const fs::path& p) { io::write_text_atomic(p, trace_csv(r.trace)); });
    } catch (const Failure& e) {
      if (e.code != kDivergence) throw;
      err << to_string(m) << ": " << e.what() << '\n';
      csv << to_string(m) << ",,,,,,," << format_g17(comp.percent) << ',' << comp.rounded << ",,diverged\n";
      table << std::left << std::setw(8) << to_string(m) << "  diverged\n";
      worst = kDivergence;
    }
  }
  if (f.out) write_output(*f.out, [&](const fs::path& p) { io::write_text_atomic(p, csv.str()); });
  out << table.str();
  return worst;
}

struct BenchCell {
  Dims dims;
  std::size_t rank;
  std::uint64_t seed;
  Method method;
};

struct BenchFlags {
  SharedFlags shared;
  std::vector<std::string> dims;
  std::vector<std::size_t> ranks;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> methods;
  std::optional<std::string> grid;
  std::optional<std::string> out;
};

std::vector<BenchCell> expand_grid(const BenchFlags& f, const Settings& s) {
  std::vector<Method> methods;
  for (const auto& m : f.methods) methods.push_back(parse_method(m));
  if (methods.empty()) methods.push_back(s.lm.method);

  std::vector<BenchCell> cells;
  auto add = [&](const Dims& d, const std::vector<std::size_t>& ranks, const std::vector<std::uint64_t>& seeds) {
    for (std::size_t r : ranks)
      for (std::uint64_t seed : seeds)
        for (Method m : methods) cells.push_back({d, r, seed, m});
  };
  if (f.grid) {
    json g;
    try {
      std::ifstream in(*f.grid);
      if (!in) throw Failure(kInput, "cannot read grid '" + *f.grid + "'");
      g = json::parse(in);
      for (const auto& e : g) {
        auto d = e.at("dims").get<std::vector<std::size_t>>();
        if (d.size() != 3 || std::find(d.begin(), d.end(), 0u) != d.end())
          throw Failure(kInput, "grid entry dims must hold three positive extents");
        auto seeds = e.contains("seeds") ? e["seeds"].get<std::vector<std::uint64_t>>()
                                         : std::vector<std::uint64_t>{s.lm.seed};
        add({d[0], d[1], d[2]}, e.at("ranks").get<std::vector<std::size_t>>(), seeds);
      }
    } catch (const json::exception& e) {
      throw Failure(kInput, "grid '" + *f.grid + "': " + e.what());
    }
  }
  std::vector<std::uint64_t> seeds = f.seeds.empty() ? std::vector<std::uint64_t>{s.lm.seed} : f.seeds;
  for (const auto& d : f.dims) add(parse_dims(d), f.ranks, seeds);
  for (const auto& c : cells)
    if (c.rank < 1) throw Failure(kUsage, "ranks must be >= 1");
  return cells;
}

std::string bench_row(const BenchCell& c, const LmConfig& base) {
  const Shape shape{c.dims, c.rank};
  const Compression comp = compression_percent(shape);
  std::ostringstream row;
  row << c.dims.I << ',' << c.dims.J << ',' << c.dims.K << ',' << c.rank << ',' << c.seed << ','
      << to_string(c.method) << ',';
  try {
    DenseTensor3 t = synthetic_tensor({c.dims, std::nullopt, c.seed});
    LmConfig cfg = base;
    cfg.method = c.method;
    cfg.seed = c.seed;
    CpRunResult r = run(t, c.rank, cfg);
    const double xn = frobenius_norm(t);
    row << r.totals.iterations << ',' << r.totals.jacobian_builds << ',' << format_g17(r.totals.seconds) << ','
        << format_g17(r.totals.final_residual) << ',' << format_g17(xn > 0 ? r.totals.final_residual / xn : 0.0)
        << ',' << format_g17(comp.percent) << ',' << comp.rounded << ",ok";
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    row << ",,,,," << format_g17(comp.percent) << ',' << comp.rounded << ",error: " << msg;
  }
  return row.str();
}

int cmd_bench(const BenchFlags& f, std::ostream& out, std::ostream& err) {
  Settings s = resolve(f.shared);
  std::vector<BenchCell> cells = expand_grid(f, s);
  if (cells.empty()) throw Failure(kUsage, "empty benchmark grid (give --dims with --ranks, or --grid)");

  std::vector<std::string> rows(cells.size());
  const std::size_t workers = static_cast<std::size_t>(std::max(1, s.threads));
  for (std::size_t start = 0; start < cells.size(); start += workers) {
    std::vector<std::future<std::string>> batch;
    const std::size_t end = std::min(cells.size(), start + workers);
    for (std::size_t n = start; n < end; ++n)
      batch.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred,
                                 [&, n] { return bench_row(cells[n], s.lm); }));
    for (std::size_t n = start; n < end; ++n) rows[n] = batch[n - start].get();
  }

  std::ostringstream csv;
  csv << "I,J,K,rank,seed,method,iters,jacobian_builds,seconds,final_residual,relative_residual,compression,"
         "compression_rounded,status\n";
  std::size_t failed = 0;
  for (const auto& r : rows) {
    csv << r << '\n';
    if (r.find(",error: ") != std::string::npos) ++failed;
  }
  if (failed) err << failed << " of " << rows.size() << " benchmark cells failed\n";
  if (f.out)
    write_output(*f.out, [&](const fs::path& p) { io::write_text_atomic(p, csv.str()); });
  else
    out << csv.str();
  return kOk;
}

int cmd_info(const std::string& path, const std::string& scale_name, std::ostream& out, std::ostream& err) {
  io::Bytes bytes;
  try {
    bytes = io::read_file(path);
  } catch (const IoError& e) {
    throw Failure(kInput, e.what());
  }
  json info = {{"path", path}, {"bytes", bytes.size()}};
  try {
    if (starts_with(bytes, "CPD3")) {
      CpModel m = decode_cpd3(bytes);
      const Shape s = m.shape();
      info["format"] = "CPD3";
      info["dims"] = {s.dims.I, s.dims.J, s.dims.K};
      info["rank"] = s.rank;
      info["params"] = s.params();
      info["compression"] = compression_json(s);
      info["reconstruction_norm"] = frobenius_norm(cp_reconstruct(m));
    } else {
      LoadedInput in = load_file(path, parse_scale(scale_name), err);
      info["format"] = starts_with(bytes, "TNS3") ? "TNS3" : (in.image ? "image" : "unknown");
      info["dims"] = {in.tensor.dims().I, in.tensor.dims().J, in.tensor.dims().K};
      info["frobenius_norm"] = frobenius_norm(in.tensor);
    }
  } catch (const FormatError& e) {
    throw Failure(kInput, "'" + path + "': " + e.what());
  }
  out << info.dump(2) << '\n';
  return kOk;
}

}  // namespace

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Rank-R CP decomposition of third-order tensors by (modified) Levenberg-Marquardt"};
  app.require_subcommand(1);

  DecomposeFlags dec;
  auto* c_dec = app.add_subcommand("decompose", "Decompose a tensor or image");
  add_shared(c_dec, dec.shared);
  add_input(c_dec, dec.input);
  c_dec->add_option("--out", dec.out, "CPD3 model output");
  c_dec->add_option("--trace", dec.trace, "Per-iteration trace CSV");
  c_dec->add_option("--summary", dec.summary, "Summary JSON (default: stdout)");
  c_dec->add_option("--reconstruction", dec.reconstruction, "Reconstructed tensor (.tns3) or image (.png/.ppm)");
  c_dec->add_flag("--trace-timing", dec.trace_timing, "Fill the elapsed_s trace column");

  ReconstructFlags rec;
  auto* c_rec = app.add_subcommand("reconstruct", "Rebuild a tensor or image from a CPD3 model");
  c_rec->add_option("--model", rec.model, "CPD3 model")->required();
  c_rec->add_option("--out", rec.out, "Output (.png/.ppm image, otherwise TNS3)")->required();
  c_rec->add_option("--reference", rec.reference, "Original tensor or image to report residual against");
  c_rec->add_option("--scale", rec.scale, "unit | byte")->check(CLI::IsMember({"unit", "byte"}));

  CompareFlags cmp;
  auto* c_cmp = app.add_subcommand("compare", "Run classic and modified LM from the same start");
  add_shared(c_cmp, cmp.shared, false);
  add_input(c_cmp, cmp.input);
  c_cmp->add_option("--out", cmp.out, "Comparison CSV");
  c_cmp->add_option("--trace", cmp.trace_prefix, "Trace prefix; writes PREFIX.lm.csv and PREFIX.mlm.csv");

  BenchFlags bench;
  auto* c_bench = app.add_subcommand("bench", "Random-tensor benchmark grid");
  add_shared(c_bench, bench.shared, false);
  c_bench->add_option("--dims", bench.dims, "Tensor sizes IxJxK (repeatable)");
  c_bench->add_option("--ranks", bench.ranks, "Ranks")->delimiter(',');
  c_bench->add_option("--seeds", bench.seeds, "Seeds")->delimiter(',');
  c_bench->add_option("--methods", bench.methods, "lm,mlm")->delimiter(',')->check(CLI::IsMember({"lm", "mlm"}));
  c_bench->add_option("--grid", bench.grid, "JSON grid: [{\"dims\":[I,J,K],\"ranks\":[...],\"seeds\":[...]}]");
  c_bench->add_option("--out", bench.out, "Benchmark CSV (default: stdout)");

  std::string info_path;
  std::string info_scale = "unit";
  auto* c_info = app.add_subcommand("info", "Describe a TNS3, CPD3 or image file");
  c_info->add_option("path", info_path, "File")->required();
  c_info->add_option("--scale", info_scale, "unit | byte")->check(CLI::IsMember({"unit", "byte"}));

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (c_dec->parsed()) return cmd_decompose(dec, out, err);
    if (c_rec->parsed()) return cmd_reconstruct(rec, out, err);
    if (c_cmp->parsed()) return cmd_compare(cmp, out, err);
    if (c_bench->parsed()) return cmd_bench(bench, out, err);
    if (c_info->parsed()) return cmd_info(info_path, info_scale, out, err);
  } catch (const Failure& e) {
    err << "error: " << e.what() << '\n';
    return e.code;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kDivergence;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kInput;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kOutput;
  }
  return kUsage;
}

}  // namespace cplm::cli
