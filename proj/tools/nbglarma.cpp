// nbglarma: simulate, fit, benchmark and sweep front end with reproducible manifests.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nbglarma/csv.hpp"
#include "nbglarma/nbglarma.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
namespace nb = nbglarma;

namespace {

constexpr const char* kVersion = "1.0.0";
constexpr int kExitFailed = 1;
constexpr int kExitInput = 2;
constexpr int kExitMismatch = 3;

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha256 failed");
  }
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw nb::InputError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw nb::InputError("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw nb::InputError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

/// Everything a command produces, held in memory until the collector writes it.
struct RunContext {
  std::vector<std::pair<std::string, std::string>> outputs;
  json inputs = json::array();
  json errors = json::array();
  std::vector<std::string> warnings;

  void add_input(const std::string& path) {
    inputs.push_back({{"path", path}, {"sha256", sha256_hex(slurp(path))}});
  }
  void warn(const std::string& msg) {
    std::cerr << "warning: " << msg << "\n";
    warnings.push_back(msg);
  }
};

// ---------- simulate ----------

struct SimulateOptions {
  int n = 150;
  int p = 100;
  int q = 1;
  double alpha = 2.0;
  double sparsity = 0.05;
  double f = 0.7;
  double intercept = 0.0;
  double beta_low = -0.64;
  double beta_high = 1.73;
  std::vector<double> gamma;
  std::uint64_t seed = 1;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SimulateOptions, n, p, q, alpha, sparsity, f, intercept, beta_low, beta_high, gamma,
                                   seed)

nb::SimConfig sim_config(const SimulateOptions& o) {
  nb::SimConfig cfg;
  cfg.n = o.n;
  cfg.p = o.p;
  cfg.q = o.q;
  cfg.gamma_true = Eigen::Map<const nb::Vector>(o.gamma.data(), static_cast<Eigen::Index>(o.gamma.size()));
  cfg.alpha_true = o.alpha;
  cfg.sparsity = o.sparsity;
  cfg.f = o.f;
  cfg.intercept = o.intercept;
  cfg.beta_low = o.beta_low;
  cfg.beta_high = o.beta_high;
  cfg.n_replicates = 1;
  cfg.seed = o.seed;
  cfg.validate();
  return cfg;
}

void run_simulate(SimulateOptions& o, RunContext& ctx) {
  if (o.gamma.empty()) {
    const nb::Vector g = nb::default_gamma(o.q);
    o.gamma.assign(g.data(), g.data() + g.size());
  }
  const auto cfg = sim_config(o);
  const nb::Vector beta = nb::draw_sparse_beta(cfg);
  const auto data = nb::simulate_series(cfg, beta);

  std::vector<std::string> header;
  for (int k = 0; k <= o.p; ++k) header.push_back("x" + std::to_string(k));
  nb::CsvWriter design(header);
  for (Eigen::Index t = 0; t < data.x.rows(); ++t) {
    std::vector<std::string> row;
    for (Eigen::Index k = 0; k < data.x.cols(); ++k) row.push_back(nb::format_real(data.x.matrix()(t, k)));
    design.add(row);
  }
  nb::CsvWriter counts({"y"});
  for (auto v : data.y.counts()) counts.add({std::to_string(v)});
  nb::CsvWriter truth({"parameter", "index", "value"});
  for (Eigen::Index k = 0; k < beta.size(); ++k) truth.add({"beta", std::to_string(k), nb::format_real(beta[k])});
  for (int j = 0; j < o.q; ++j) truth.add({"gamma", std::to_string(j + 1), nb::format_real(o.gamma[static_cast<std::size_t>(j)])});
  truth.add({"alpha", "0", nb::format_real(o.alpha)});
  ctx.outputs = {{"design.csv", design.text()}, {"counts.csv", counts.text()}, {"truth.csv", truth.text()}};
}

// ---------- fit ----------

struct FitOptions {
  std::string counts;
  std::string design;
  int q = 1;
  std::string rule = "ss_cv";
  double threshold = 0.7;
  std::uint64_t seed = 1;
  int subsamples = 1000;
  int cv_folds = 10;
  int max_outer_iters = 4;
  double gamma_stab_tol = 1e-4;
  double newton_tol = 1e-6;
  int newton_max_iter = 100;
  int newton_max_halvings = 30;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(FitOptions, counts, design, q, rule, threshold, seed, subsamples, cv_folds,
                                   max_outer_iters, gamma_stab_tol, newton_tol, newton_max_iter, newton_max_halvings)

struct PreparedDesign {
  nb::DesignMatrix x;
  std::vector<int> original;  // design column k -> reported coefficient index
  int reported_columns = 0;
};

/// Adds the intercept when column 0 is not identically one and drops constant covariates.
PreparedDesign prepare_design(const nb::CsvTable& table, const std::string& name, RunContext& ctx) {
  const nb::Matrix raw = nb::numeric_matrix(table, name);
  if (raw.rows() == 0) throw nb::InputError(name + ": no data rows");
  const bool has_intercept = (raw.col(0).array() == 1.0).all();
  nb::Matrix full;
  if (has_intercept) {
    full = raw;
  } else {
    ctx.warn(name + ": column 0 is not all ones; an intercept column was prepended");
    full.resize(raw.rows(), raw.cols() + 1);
    full.col(0).setOnes();
    full.rightCols(raw.cols()) = raw;
  }
  PreparedDesign out;
  out.reported_columns = static_cast<int>(full.cols());
  nb::IndexSet keep{0};
  for (Eigen::Index k = 1; k < full.cols(); ++k) {
    if (full.col(k).maxCoeff() == full.col(k).minCoeff()) {
      ctx.warn(name + ": constant covariate column " + std::to_string(k) + " dropped");
      continue;
    }
    keep.push_back(static_cast<int>(k));
  }
  out.x = nb::DesignMatrix(full).select_columns(keep);
  out.original = keep;
  return out;
}

nb::PipelineConfig pipeline_config(const FitOptions& o) {
  nb::PipelineConfig pc;
  pc.q = o.q;
  pc.lambda_rule = nb::parse_lambda_rule(o.rule);
  pc.threshold = o.threshold;
  pc.max_outer_iters = o.max_outer_iters;
  pc.gamma_stab_tol = o.gamma_stab_tol;
  pc.newton.tol = o.newton_tol;
  pc.newton.max_iter = o.newton_max_iter;
  pc.newton.max_halvings = o.newton_max_halvings;
  pc.stability.n_subsamples = o.subsamples;
  pc.stability.cv_folds = o.cv_folds;
  pc.seed = o.seed;
  pc.validate();
  return pc;
}

void run_fit(FitOptions& o, unsigned workers, RunContext& ctx) {
  o.counts = fs::absolute(o.counts).string();
  o.design = fs::absolute(o.design).string();
  const nb::PipelineConfig base = pipeline_config(o);
  ctx.add_input(o.counts);
  ctx.add_input(o.design);
  const auto design_table = nb::read_csv(o.design);
  const auto counts_table = nb::read_csv(o.counts);
  const auto design = prepare_design(design_table, o.design, ctx);
  if (counts_table.rows.size() != static_cast<std::size_t>(design.x.rows())) {
    throw nb::InputError(o.counts + ": " + std::to_string(counts_table.rows.size()) + " rows but " + o.design +
                         " has " + std::to_string(design.x.rows()));
  }
  if (static_cast<int>(counts_table.rows.size()) <= o.q) {
    throw nb::InputError(o.counts + ": need more than q = " + std::to_string(o.q) + " observations");
  }
  const std::size_t n_series = counts_table.header.size();
  std::vector<nb::CountSeries> series;
  for (std::size_t s = 0; s < n_series; ++s) series.emplace_back(nb::count_column(counts_table, s, o.counts));

  std::vector<std::optional<nb::PipelineResult>> results(n_series);
  std::vector<std::string> failures(n_series);
  nb::parallel_for(n_series, workers, [&](std::size_t s) {
    nb::PipelineConfig pc = base;
    pc.seed = nb::derive_seed(o.seed, nb::kStreamSeries, s);
    try {
      results[s] = nb::run_pipeline(series[s], design.x, pc);
    } catch (const std::exception& ex) {
      failures[s] = ex.what();
    }
  });

  nb::CsvWriter selection({"series", "coefficient", "frequency", "selected", "beta_hat"});
  std::vector<std::string> gamma_header{"series", "iteration"};
  for (int j = 1; j <= o.q; ++j) gamma_header.push_back("gamma_" + std::to_string(j));
  gamma_header.push_back("newton_converged");
  nb::CsvWriter gamma(gamma_header);
  nb::CsvWriter alpha({"series", "iteration", "alpha_hat", "init"});
  for (std::size_t s = 0; s < n_series; ++s) {
    const std::string& name = counts_table.header[s];
    if (!results[s]) {
      ctx.errors.push_back({{"series", name}, {"message", failures[s]}});
      continue;
    }
    const auto& res = *results[s];
    const auto& last = res.iterations.back();
    std::vector<std::string> freq(static_cast<std::size_t>(design.reported_columns), "NA");
    std::vector<std::string> sel(freq.size(), "0");
    std::vector<std::string> beta(freq.size(), "0");
    const std::set<int> chosen(res.selected.begin(), res.selected.end());
    for (std::size_t k = 0; k < design.original.size(); ++k) {
      const auto col = static_cast<std::size_t>(design.original[k]);
      if (static_cast<Eigen::Index>(k) < last.frequencies.size() && design.x.p() > 0) {
        freq[col] = nb::format_real(last.frequencies[static_cast<Eigen::Index>(k)]);
      }
      sel[col] = (k == 0 || chosen.count(static_cast<int>(k))) ? "1" : "0";
      beta[col] = nb::format_real(res.beta_hat[static_cast<Eigen::Index>(k)]);
    }
    for (std::size_t c = 0; c < freq.size(); ++c) selection.add({name, std::to_string(c), freq[c], sel[c], beta[c]});
    for (std::size_t it = 0; it < res.iterations.size(); ++it) {
      const auto& rec = res.iterations[it];
      std::vector<std::string> row{name, std::to_string(it + 1)};
      for (int j = 0; j < o.q; ++j) row.push_back(nb::format_real(rec.gamma_hat[j]));
      row.push_back(rec.newton_converged ? "1" : "0");
      gamma.add(row);
      alpha.add({name, std::to_string(it + 1), nb::format_real(rec.alpha_hat),
                 res.init_mode == nb::InitMode::FullGlm ? "full_glm" : "intercept_only"});
    }
  }
  ctx.outputs = {{"selection.csv", selection.text()}, {"gamma.csv", gamma.text()}, {"alpha.csv", alpha.text()}};
}

// ---------- benchmark / sweep ----------

struct BenchOptions {
  std::vector<int> n{150, 250, 500, 1000};
  std::vector<int> q{1, 2};
  int p = 100;
  double alpha = 2.0;
  double sparsity = 0.05;
  double f = 0.7;
  double intercept = 0.0;
  std::vector<std::string> methods{"ss_cv", "ss_min", "lasso_cv", "lasso_best"};
  std::vector<double> thresholds{0.5, 0.6, 0.7, 0.8, 0.9};
  int replicates = 10;
  std::uint64_t seed = 1;
  int subsamples = 1000;
  int max_outer_iters = 4;
  bool timing = false;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(BenchOptions, n, q, p, alpha, sparsity, f, intercept, methods, thresholds,
                                   replicates, seed, subsamples, max_outer_iters, timing)

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    const auto a = item.find_first_not_of(" \t");
    const auto b = item.find_last_not_of(" \t");
    if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
  }
  return out;
}

/// key = value lines; '#' starts a comment; lists are comma separated.
void apply_config_file(const std::string& path, BenchOptions& o) {
  std::istringstream in(slurp(path));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto eq = line.find('=');
    const std::string where = path + " line " + std::to_string(line_no);
    if (eq == std::string::npos) throw nb::InputError(where + ": expected key = value");
    const auto key_parts = split_list(line.substr(0, eq));
    if (key_parts.size() != 1) throw nb::InputError(where + ": malformed key");
    const std::string key = key_parts[0];
    const auto values = split_list(line.substr(eq + 1));
    if (values.empty()) throw nb::InputError(where + ": empty value for " + key);
    auto real = [&](const std::string& v) { return nb::parse_real(v, where); };
    auto integer = [&](const std::string& v) { return static_cast<int>(nb::parse_count(v, where)); };
    if (key == "n" || key == "q") {
      std::vector<int> list;
      for (const auto& v : values) list.push_back(integer(v));
      (key == "n" ? o.n : o.q) = list;
    } else if (key == "methods") {
      o.methods = values;
    } else if (key == "thresholds") {
      o.thresholds.clear();
      for (const auto& v : values) o.thresholds.push_back(real(v));
    } else if (values.size() != 1) {
      throw nb::InputError(where + ": " + key + " takes a single value");
    } else if (key == "p") {
      o.p = integer(values[0]);
    } else if (key == "alpha") {
      o.alpha = real(values[0]);
    } else if (key == "sparsity") {
      o.sparsity = real(values[0]);
    } else if (key == "f") {
      o.f = real(values[0]);
    } else if (key == "intercept") {
      o.intercept = real(values[0]);
    } else if (key == "replicates") {
      o.replicates = integer(values[0]);
    } else if (key == "seed") {
      o.seed = static_cast<std::uint64_t>(nb::parse_count(values[0], where));
    } else if (key == "subsamples") {
      o.subsamples = integer(values[0]);
    } else if (key == "max_outer_iters") {
      o.max_outer_iters = integer(values[0]);
    } else if (key == "timing") {
      o.timing = values[0] == "true" || values[0] == "1";
    } else {
      throw nb::InputError(where + ": unknown key '" + key + "'");
    }
  }
}

std::uint64_t cell_seed(std::uint64_t seed, int n, int q) {
  return nb::derive_seed(nb::derive_seed(seed, 0xce11, static_cast<std::uint64_t>(n)), 0xce11,
                         static_cast<std::uint64_t>(q));
}

std::vector<std::string> summary_row(const nb::SummaryRow& s) {
  return {std::to_string(s.n),           std::to_string(s.q),          nb::to_string(s.method),
          nb::format_real(s.threshold),  std::to_string(s.replicates_ok), nb::format_real(s.tpr_mean),
          nb::format_real(s.tpr_sd),     nb::format_real(s.fpr_mean),  nb::format_real(s.fpr_sd),
          nb::format_real(s.diff_mean),  nb::format_real(s.diff_sd)};
}

const std::vector<std::string> kSummaryHeader{"n",        "q",      "method",   "threshold", "replicates_ok", "tpr_mean",
                                              "tpr_sd",   "fpr_mean", "fpr_sd", "tpr_minus_fpr_mean",
                                              "tpr_minus_fpr_sd"};

/// Runs every (n, q) cell and renders the tidy, iteration and summary tables.
void run_cells(const BenchOptions& o, unsigned workers, RunContext& ctx, const std::string& prefix) {
  if (o.n.empty() || o.q.empty()) throw nb::ConfigError("benchmark: need at least one n and one q");
  nb::BenchmarkOptions opt;
  opt.methods.clear();
  for (const auto& m : o.methods) opt.methods.push_back(nb::parse_method(m));
  opt.thresholds = o.thresholds;
  opt.n_subsamples = o.subsamples;
  opt.max_outer_iters = o.max_outer_iters;
  opt.workers = workers;
  opt.record_timing = o.timing;

  std::vector<nb::BenchmarkRow> rows;
  for (int n : o.n) {
    for (int q : o.q) {
      nb::SimConfig cell;
      cell.n = n;
      cell.p = o.p;
      cell.q = q;
      cell.gamma_true = nb::default_gamma(q);
      cell.alpha_true = o.alpha;
      cell.sparsity = o.sparsity;
      cell.f = o.f;
      cell.intercept = o.intercept;
      cell.n_replicates = o.replicates;
      cell.seed = cell_seed(o.seed, n, q);
      auto block = nb::run_benchmark(cell, opt);
      rows.insert(rows.end(), std::make_move_iterator(block.begin()), std::make_move_iterator(block.end()));
    }
  }
  const int max_q = *std::max_element(o.q.begin(), o.q.end());
  std::vector<std::string> header{"n", "q", "p", "alpha_true", "sparsity", "method", "threshold", "replicate",
                                  "tpr", "fpr", "tpr_minus_fpr"};
  for (int j = 1; j <= max_q; ++j) header.push_back("gamma_hat_" + std::to_string(j));
  for (const char* c : {"alpha_hat", "runtime_s", "status"}) header.emplace_back(c);
  nb::CsvWriter tidy(header);
  std::vector<std::string> it_header{"n", "q", "method", "threshold", "replicate", "iteration"};
  for (int j = 1; j <= max_q; ++j) it_header.push_back("gamma_hat_" + std::to_string(j));
  it_header.emplace_back("alpha_hat");
  nb::CsvWriter iterations(it_header);
  for (const auto& r : rows) {
    std::vector<std::string> row{std::to_string(r.n),         std::to_string(r.q),          std::to_string(r.p),
                                 nb::format_real(r.alpha_true), nb::format_real(r.sparsity), nb::to_string(r.method),
                                 nb::format_real(r.threshold), std::to_string(r.replicate), nb::format_real(r.tpr),
                                 nb::format_real(r.fpr),       nb::format_real(r.diff())};
    for (int j = 0; j < max_q; ++j) row.push_back(j < r.gamma_hat.size() ? nb::format_real(r.gamma_hat[j]) : "NA");
    row.push_back(nb::format_real(r.alpha_hat));
    row.push_back(r.runtime_s ? nb::format_real(*r.runtime_s) : "NA");
    row.push_back(r.status);
    tidy.add(row);
    if (r.status != "ok") {
      ctx.errors.push_back({{"n", r.n}, {"q", r.q}, {"method", nb::to_string(r.method)},
                            {"threshold", r.threshold}, {"replicate", r.replicate}, {"message", r.status}});
    }
    for (std::size_t k = 0; k < r.gamma_by_iteration.size(); ++k) {
      std::vector<std::string> it{std::to_string(r.n), std::to_string(r.q), nb::to_string(r.method),
                                  nb::format_real(r.threshold), std::to_string(r.replicate), std::to_string(k + 1)};
      for (int j = 0; j < max_q; ++j) {
        it.push_back(j < r.gamma_by_iteration[k].size() ? nb::format_real(r.gamma_by_iteration[k][j]) : "NA");
      }
      it.push_back(nb::format_real(r.alpha_by_iteration[k]));
      iterations.add(it);
    }
  }
  nb::CsvWriter by_threshold(kSummaryHeader);
  for (const auto& s : nb::summarize_by_threshold(rows)) by_threshold.add(summary_row(s));
  nb::CsvWriter best(kSummaryHeader);
  for (const auto& s : nb::summarize_best(rows)) best.add(summary_row(s));
  ctx.outputs = {{prefix + ".csv", tidy.text()},
                 {prefix + "_iterations.csv", iterations.text()},
                 {prefix + "_thresholds.csv", by_threshold.text()},
                 {prefix + "_summary.csv", best.text()}};
}

struct SweepOptions {
  int n = 15;
  int p = 95;
  int q = 1;
  int nonzeros = 5;
  double alpha = 2.0;
  double f = 0.7;
  double intercept = 0.0;
  std::vector<std::string> methods{"ss_cv", "lasso_cv"};
  std::vector<double> thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  int replicates = 10;
  std::uint64_t seed = 1;
  int subsamples = 1000;
  int max_outer_iters = 4;
  bool timing = false;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SweepOptions, n, p, q, nonzeros, alpha, f, intercept, methods, thresholds,
                                   replicates, seed, subsamples, max_outer_iters, timing)

BenchOptions sweep_as_bench(const SweepOptions& s) {
  if (s.p < 1 || s.nonzeros < 1 || s.nonzeros > s.p) throw nb::ConfigError("sweep: need 1 <= nonzeros <= p");
  BenchOptions b;
  b.n = {s.n};
  b.q = {s.q};
  b.p = s.p;
  b.alpha = s.alpha;
  b.sparsity = static_cast<double>(s.nonzeros) / s.p;
  b.f = s.f;
  b.intercept = s.intercept;
  b.methods = s.methods;
  b.thresholds = s.thresholds;
  b.replicates = s.replicates;
  b.seed = s.seed;
  b.subsamples = s.subsamples;
  b.max_outer_iters = s.max_outer_iters;
  b.timing = s.timing;
  return b;
}

// ---------- manifests ----------

struct Command {
  std::string name;
  json config;
};

/// Executes a resolved command, writes outputs and the manifest into `out`.
int execute(const Command& cmd, const fs::path& out, unsigned workers, json* manifest_out = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  RunContext ctx;
  json resolved;
  if (cmd.name == "simulate") {
    auto o = cmd.config.get<SimulateOptions>();
    run_simulate(o, ctx);
    resolved = o;
  } else if (cmd.name == "fit") {
    auto o = cmd.config.get<FitOptions>();
    run_fit(o, workers, ctx);
    resolved = o;
  } else if (cmd.name == "benchmark") {
    auto o = cmd.config.get<BenchOptions>();
    run_cells(o, workers, ctx, "benchmark");
    resolved = o;
  } else if (cmd.name == "sweep") {
    auto o = cmd.config.get<SweepOptions>();
    run_cells(sweep_as_bench(o), workers, ctx, "sweep");
    resolved = o;
  } else {
    throw nb::ConfigError("unknown command '" + cmd.name + "'");
  }
  fs::create_directories(out);
  json outputs = json::array();
  for (const auto& [name, text] : ctx.outputs) {
    write_atomic(out / name, text);
    outputs.push_back({{"path", name}, {"sha256", sha256_hex(text)}});
  }
  const bool ok = ctx.errors.empty();
  if (!ok) {
    const json summary = {{"status", "failed"}, {"errors", ctx.errors}};
    const std::string text = summary.dump(2) + "\n";
    write_atomic(out / "errors.json", text);
    outputs.push_back({{"path", "errors.json"}, {"sha256", sha256_hex(text)}});
    std::cerr << summary.dump() << "\n";
  }
  json manifest = {{"tool", "nbglarma"},
                   {"version", kVersion},
                   {"command", cmd.name},
                   {"config", resolved},
                   {"seed", resolved.at("seed")},
                   {"workers", workers},
                   {"inputs", ctx.inputs},
                   {"output_dir", fs::absolute(out).string()},
                   {"outputs", outputs},
                   {"warnings", ctx.warnings},
                   {"status", ok ? "ok" : "failed"},
                   {"duration_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
  write_atomic(out / "manifest.json", manifest.dump(2) + "\n");
  if (manifest_out) *manifest_out = manifest;
  return ok ? 0 : kExitFailed;
}

json load_manifest(const std::string& path) {
  try {
    return json::parse(slurp(path));
  } catch (const json::exception& ex) {
    throw nb::InputError(path + ": " + ex.what());
  }
}

/// Compares recorded checksums with the files in `dir`; returns the mismatches.
std::vector<std::string> verify_outputs(const json& manifest, const fs::path& dir) {
  std::vector<std::string> bad;
  for (const auto& item : manifest.at("outputs")) {
    const fs::path file = dir / item.at("path").get<std::string>();
    if (!fs::exists(file) || sha256_hex(slurp(file)) != item.at("sha256").get<std::string>()) {
      bad.push_back(item.at("path").get<std::string>());
    }
  }
  return bad;
}

void check_inputs(const json& manifest) {
  for (const auto& item : manifest.at("inputs")) {
    const std::string path = item.at("path");
    if (sha256_hex(slurp(path)) != item.at("sha256").get<std::string>()) {
      throw nb::InputError(path + ": input changed since the manifest was written");
    }
  }
}

std::vector<double> parse_real_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  for (const auto& v : split_list(s)) out.push_back(nb::parse_real(v, what));
  return out;
}

std::vector<int> parse_int_list(const std::string& s, const std::string& what) {
  std::vector<int> out;
  for (const auto& v : split_list(s)) out.push_back(static_cast<int>(nb::parse_count(v, what)));
  return out;
}

int report_error(const char* kind, const std::string& message, int code) {
  std::cerr << json{{"status", "error"}, {"kind", kind}, {"message", message}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse negative binomial GLARMA variable selection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  unsigned workers = nb::default_workers();
  app.add_option("--workers", workers, "Worker threads (default: NBGLARMA_WORKERS or all cores)")->check(CLI::PositiveNumber);
  std::string out_dir = ".";

  SimulateOptions sim;
  std::string sim_gamma;
  auto* simulate = app.add_subcommand("simulate", "Simulate one series with Fourier covariates");
  simulate->add_option("--n", sim.n, "Series length")->capture_default_str();
  simulate->add_option("--p", sim.p, "Number of covariates")->capture_default_str();
  simulate->add_option("--q", sim.q, "Number of residual lags")->capture_default_str();
  simulate->add_option("--alpha", sim.alpha, "Overdispersion")->capture_default_str();
  simulate->add_option("--sparsity", sim.sparsity, "Fraction of nonzero coefficients")->capture_default_str();
  simulate->add_option("--f", sim.f, "Fourier frequency")->capture_default_str();
  simulate->add_option("--intercept", sim.intercept, "True intercept")->capture_default_str();
  simulate->add_option("--beta-low", sim.beta_low)->capture_default_str();
  simulate->add_option("--beta-high", sim.beta_high)->capture_default_str();
  simulate->add_option("--gamma", sim_gamma, "Comma-separated gamma (default 0.5 or 0.5,0.25)");
  simulate->add_option("--seed", sim.seed)->capture_default_str();
  simulate->add_option("--out", out_dir, "Output directory")->required();

  FitOptions fit;
  auto* fitc = app.add_subcommand("fit", "Fit every counts column against a shared design");
  fitc->add_option("--counts", fit.counts, "counts.csv, one series per column")->required();
  fitc->add_option("--design", fit.design, "design.csv with the intercept in column 0")->required();
  fitc->add_option("--q", fit.q)->capture_default_str();
  fitc->add_option("--rule", fit.rule, "ss_cv or ss_min")->capture_default_str();
  fitc->add_option("--threshold", fit.threshold)->capture_default_str();
  fitc->add_option("--seed", fit.seed)->capture_default_str();
  fitc->add_option("--subsamples", fit.subsamples)->capture_default_str();
  fitc->add_option("--cv-folds", fit.cv_folds)->capture_default_str();
  fitc->add_option("--max-outer-iters", fit.max_outer_iters)->capture_default_str();
  fitc->add_option("--gamma-stab-tol", fit.gamma_stab_tol)->capture_default_str();
  fitc->add_option("--newton-tol", fit.newton_tol)->capture_default_str();
  fitc->add_option("--newton-max-iter", fit.newton_max_iter)->capture_default_str();
  fitc->add_option("--out", out_dir)->required();

  BenchOptions bench;
  std::string bench_config, bench_n, bench_q, bench_methods, bench_thresholds;
  auto* benchc = app.add_subcommand("benchmark", "Simulation benchmark over an (n, q) grid");
  benchc->add_option("--config", bench_config, "key = value config file");
  auto* o_n = benchc->add_option("--n", bench_n, "Comma-separated series lengths");
  auto* o_q = benchc->add_option("--q", bench_q, "Comma-separated lag orders");
  auto* o_p = benchc->add_option("--p", bench.p);
  auto* o_alpha = benchc->add_option("--alpha", bench.alpha);
  auto* o_sparsity = benchc->add_option("--sparsity", bench.sparsity);
  auto* o_methods = benchc->add_option("--methods", bench_methods, "Comma-separated methods");
  auto* o_thr = benchc->add_option("--thresholds", bench_thresholds, "Comma-separated thresholds");
  auto* o_rep = benchc->add_option("--replicates", bench.replicates);
  auto* o_seed = benchc->add_option("--seed", bench.seed);
  auto* o_sub = benchc->add_option("--subsamples", bench.subsamples);
  auto* o_iters = benchc->add_option("--max-outer-iters", bench.max_outer_iters);
  auto* o_timing = benchc->add_flag("--timing", bench.timing, "Record wall-clock runtime per row");
  benchc->add_option("--out", out_dir)->required();

  SweepOptions sweep;
  std::string sweep_methods, sweep_thresholds;
  auto* sweepc = app.add_subcommand("sweep", "Threshold sweep on one simulated setting");
  sweepc->add_option("--n", sweep.n)->capture_default_str();
  sweepc->add_option("--p", sweep.p)->capture_default_str();
  sweepc->add_option("--q", sweep.q)->capture_default_str();
  sweepc->add_option("--nonzeros", sweep.nonzeros)->capture_default_str();
  sweepc->add_option("--alpha", sweep.alpha)->capture_default_str();
  sweepc->add_option("--methods", sweep_methods);
  sweepc->add_option("--thresholds", sweep_thresholds);
  sweepc->add_option("--replicates", sweep.replicates)->capture_default_str();
  sweepc->add_option("--seed", sweep.seed)->capture_default_str();
  sweepc->add_option("--subsamples", sweep.subsamples)->capture_default_str();
  sweepc->add_option("--max-outer-iters", sweep.max_outer_iters)->capture_default_str();
  sweepc->add_flag("--timing", sweep.timing);
  sweepc->add_option("--out", out_dir)->required();

  std::string manifest_path;
  auto* rerun = app.add_subcommand("rerun", "Re-execute a manifest and compare outputs byte for byte");
  rerun->add_option("--manifest", manifest_path)->required();
  rerun->add_option("--out", out_dir, "Directory for the new outputs")->required();

  std::string verify_dir;
  auto* verify = app.add_subcommand("verify", "Check files against the checksums in a manifest");
  verify->add_option("--manifest", manifest_path)->required();
  verify->add_option("--dir", verify_dir, "Directory holding the outputs (default: the manifest's)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) {
      if (!sim_gamma.empty()) sim.gamma = parse_real_list(sim_gamma, "--gamma");
      return execute({"simulate", sim}, out_dir, workers);
    }
    if (fitc->parsed()) return execute({"fit", fit}, out_dir, workers);
    if (benchc->parsed()) {
      BenchOptions o;
      if (!bench_config.empty()) apply_config_file(bench_config, o);
      if (o_n->count()) o.n = parse_int_list(bench_n, "--n");
      if (o_q->count()) o.q = parse_int_list(bench_q, "--q");
      if (o_p->count()) o.p = bench.p;
      if (o_alpha->count()) o.alpha = bench.alpha;
      if (o_sparsity->count()) o.sparsity = bench.sparsity;
      if (o_methods->count()) o.methods = split_list(bench_methods);
      if (o_thr->count()) o.thresholds = parse_real_list(bench_thresholds, "--thresholds");
      if (o_rep->count()) o.replicates = bench.replicates;
      if (o_seed->count()) o.seed = bench.seed;
      if (o_sub->count()) o.subsamples = bench.subsamples;
      if (o_iters->count()) o.max_outer_iters = bench.max_outer_iters;
      if (o_timing->count()) o.timing = true;
      return execute({"benchmark", o}, out_dir, workers);
    }
    if (sweepc->parsed()) {
      if (!sweep_methods.empty()) sweep.methods = split_list(sweep_methods);
      if (!sweep_thresholds.empty()) sweep.thresholds = parse_real_list(sweep_thresholds, "--thresholds");
      return execute({"sweep", sweep}, out_dir, workers);
    }
    if (rerun->parsed()) {
      const json previous = load_manifest(manifest_path);
      check_inputs(previous);
      const Command cmd{previous.at("command"), previous.at("config")};
      json fresh;
      const int code = execute(cmd, out_dir, workers, &fresh);
      const auto bad = verify_outputs(previous, out_dir);
      if (!bad.empty()) {
        return report_error("mismatch", "outputs differ from manifest: " + json(bad).dump(), kExitMismatch);
      }
      std::cout << "rerun reproduced " << previous.at("outputs").size() << " output files\n";
      return code;
    }
    if (verify->parsed()) {
      const json manifest = load_manifest(manifest_path);
      const fs::path dir = verify_dir.empty() ? fs::path(manifest.at("output_dir").get<std::string>()) : fs::path(verify_dir);
      const auto bad = verify_outputs(manifest, dir);
      if (!bad.empty()) return report_error("mismatch", "outputs differ from manifest: " + json(bad).dump(), kExitMismatch);
      std::cout << "verified " << manifest.at("outputs").size() << " output files\n";
      return 0;
    }
  } catch (const nb::InputError& ex) {
    return report_error("input", ex.what(), kExitInput);
  } catch (const nb::ConfigError& ex) {
    return report_error("config", ex.what(), kExitInput);
  } catch (const json::exception& ex) {
    return report_error("manifest", ex.what(), kExitInput);
  } catch (const std::exception& ex) {
    return report_error("runtime", ex.what(), kExitFailed);
  }
  return 0;
}
