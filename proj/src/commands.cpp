#include "icl/commands.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "icl/errors.hpp"
#include "icl/parallel.hpp"
#include "icl/posterior.hpp"
#include "icl/svg.hpp"

namespace icl {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path out_dir(const ExperimentConfig& cfg, const CommandContext& ctx) {
  const fs::path dir = ctx.out ? *ctx.out : cfg.output_dir;
  fs::create_directories(dir);
  return dir;
}

RunManifest start_manifest(const std::string& command, const ExperimentConfig& cfg) {
  RunManifest m;
  m.command = command;
  m.config_hash = cfg.hash();
  m.seed = cfg.seed;
  m.code_version = code_version();
  m.started = utc_timestamp();
  return m;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FileError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& s) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw FileError("cannot write " + path.string());
  out << s;
}

std::uint64_t label_seed(std::uint64_t root, const std::string& label, double kappa, int n) {
  std::uint64_t h = root;
  for (unsigned char c : label) h = derive_seed(h, c);
  return derive_seed(derive_seed(h, static_cast<std::uint64_t>(std::llround(kappa * 1e6))), static_cast<std::uint64_t>(n));
}

std::string fmt(double v, int digits = 6) {
  std::ostringstream o;
  o.precision(digits);
  o << v;
  return o.str();
}

}  // namespace

PredictorHandle make_predictor(const std::string& name, const ExperimentConfig& cfg, const MixtureSpec& prior) {
  const double sigma = cfg.noise.sigma;
  if (name == "zero") {
    return {{"zero", [](const Episode&, std::span<const double>) { return 0.0; }}, nullptr};
  }
  if (name == "oracle" && BayesOracle::supports(prior)) {
    BayesOracleOptions opts;
    opts.tree.delta_over_sigma = cfg.eval.delta_over_sigma;
    auto orc = std::make_shared<const BayesOracle>(prior, sigma, opts);
    return {{"oracle", [orc](const Episode& e, std::span<const double> q) { return orc->predict(e, q); }}, orc};
  }
  if (name == "oracle" || name == "mc") {
    // Monte Carlo posterior with a per-episode pool.
    const int M = cfg.eval.mc_M;
    const double R = sup_norm_bound(prior);
    auto mix = std::make_shared<const MixtureSpec>(prior);
    return {{name,
             [mix, M, sigma, R](const Episode& e, std::span<const double> q) {
               Rng rng(derive_seed(e.seed, 0x3c));
               OracleConfig oc{M, sigma, R, 1};
               return posterior_mean(e, q, *mix, oc, rng);
             }},
            mix};
  }
  const fs::path path = name == "checkpoint" ? fs::path(cfg.checkpoint) : fs::path(name);
  if (path.empty()) throw ConfigError("checkpoint: no checkpoint path given");
  auto params = std::make_shared<const TransformerParams>(load_checkpoint(path));
  if (params->cfg.d != prior.input_dim()) throw ConfigError("checkpoint input dimension differs from the prior");
  const double R = params->cfg.R_clip;
  return {{"transformer",
           [params, R](const Episode& e, std::span<const double> q) { return predict_clipped(*params, e, q, R); }},
          params};
}

std::vector<TestDistribution> test_distributions(const ExperimentConfig& cfg) {
  std::vector<TestDistribution> out;
  TestDistribution base;
  base.domain = cfg.sampler();
  base.noise = cfg.noise;
  if (cfg.eval.test_component.empty()) {
    base.label = "pi";
    base.prior = cfg.prior;
  } else {
    base.label = cfg.eval.test_component;
    base.prior = MixtureSpec::single(cfg.prior.components[cfg.prior.find(cfg.eval.test_component)]);
  }
  out.push_back(base);
  for (const auto& s : cfg.shifts) {
    const auto& comp = cfg.prior.components[cfg.prior.find(s.label)];
    const auto shift = ShiftSpec::for_budget(comp, s.kappa, s.max_level);
    TestDistribution t = base;
    t.label = s.label;
    t.kappa = s.kappa;
    t.prior = MixtureSpec::single(make_shifted_prior(comp, shift, cfg.kappa_budget));
    out.push_back(t);
  }
  return out;
}

fs::path cmd_gen_tasks(const ExperimentConfig& cfg, std::uint64_t count, const CommandContext& ctx) {
  const fs::path dir = out_dir(cfg, ctx);
  auto manifest = start_manifest("gen-tasks", cfg);
  std::vector<Episode> eps(count);
  if (count > 0) {
    PretrainingStream stream(cfg.prior, count, cfg.train.n, cfg.noise, cfg.sampler(), derive_seed(cfg.seed, 0x9e17),
                             cfg.train.n_min);
    parallel_for(count, ctx.threads, [&](std::size_t t) { eps[t] = stream.episode(t); });
  }
  const fs::path path = dir / "tasks.jsonl";
  write_jsonl(path, eps);
  manifest.add(path);
  manifest.finished = utc_timestamp();
  manifest.write(dir);
  return path;
}

fs::path cmd_train(const ExperimentConfig& cfg, const CommandContext& ctx, const std::optional<fs::path>& resume) {
  const fs::path dir = out_dir(cfg, ctx);
  auto manifest = start_manifest("train", cfg);
  std::optional<ResumeFrom> from;
  if (resume) {
    ResumeFrom r;
    r.params = load_checkpoint(*resume, &r.state);
    from = std::move(r);
  }
  TrainConfig tc = cfg.train;
  tc.threads = ctx.threads;
  const fs::path log_path = dir / "train_log.csv";
  TrainResult res = erm_train(cfg.prior, cfg.transformer, tc, cfg.noise, cfg.sampler(), from);
  res.state.meta = {{"config_hash", cfg.hash()}, {"train_seed", tc.seed}};
  const fs::path ckpt = dir / "checkpoint.json";
  save_checkpoint(ckpt, res.params, res.state);
  res.log.write_csv(log_path);
  manifest.add(ckpt);
  manifest.add(dir / "checkpoint.bin");
  manifest.add(log_path);
  manifest.finished = utc_timestamp();
  manifest.write(dir);
  return ckpt;
}

fs::path cmd_eval(const ExperimentConfig& cfg, const std::string& model, const CommandContext& ctx) {
  std::vector<std::string> names = cfg.eval.predictors;
  if (!model.empty()) names = {model};
  // Build everything first so a missing checkpoint fails before any work.
  std::vector<PredictorHandle> handles;
  for (const auto& nm : names) handles.push_back(make_predictor(nm, cfg, cfg.prior));
  const fs::path dir = out_dir(cfg, ctx);
  auto manifest = start_manifest("eval", cfg);
  std::vector<RiskRow> rows;
  for (const auto& test : test_distributions(cfg)) {
    std::vector<NamedPredictor> preds;
    for (const auto& h : handles) preds.push_back(h.predictor);
    for (int n : cfg.eval.grid) {
      const auto est = estimate_excess_risks(preds, test, n, cfg.eval.J, label_seed(cfg.seed, test.label, test.kappa, n),
                                             ctx.threads);
      for (const auto& e : est) rows.push_back({e.predictor, test.label, test.kappa, e});
    }
  }
  const fs::path path = dir / "risks.csv";
  write_risks_csv(path, rows);
  manifest.add(path);
  manifest.finished = utc_timestamp();
  manifest.write(dir);
  return path;
}

fs::path cmd_rate(const fs::path& risks_csv, double beta, int dim, const CommandContext& ctx) {
  const auto rows = read_risks_csv(risks_csv);
  const fs::path dir = ctx.out ? *ctx.out : (risks_csv.has_parent_path() ? risks_csv.parent_path() : fs::path("."));
  fs::create_directories(dir);
  const double target = target_exponent(beta, dim);
  // One fit per (predictor, prior, kappa), in first-appearance order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<RiskEstimate>> groups;
  for (const auto& r : rows) {
    const std::string key = r.predictor + "|" + r.prior + "|" + fmt(r.kappa);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(r.estimate);
  }
  if (order.empty()) throw ValidationError(risks_csv.string() + " has no rows");
  json fits = json::array();
  std::vector<PlotSeries> series;
  double x0 = 0, y0 = 0;
  for (const auto& key : order) {
    auto& est = groups[key];
    std::sort(est.begin(), est.end(), [](const RiskEstimate& a, const RiskEstimate& b) { return a.n < b.n; });
    const auto fit = fit_rate(est, target);
    json f = to_json(fit);
    const auto p1 = key.find('|'), p2 = key.rfind('|');
    f["predictor"] = key.substr(0, p1);
    f["prior"] = key.substr(p1 + 1, p2 - p1 - 1);
    f["kappa"] = std::stod(key.substr(p2 + 1));
    fits.push_back(f);
    PlotSeries s;
    s.name = key.substr(0, p1) + " " + key.substr(p1 + 1, p2 - p1 - 1) + (f["kappa"].get<double>() > 0 ? " k=" + key.substr(p2 + 1) : "");
    for (const auto& e : est) {
      s.x.push_back(e.n);
      s.y.push_back(e.mean);
      s.err.push_back(e.se);
    }
    if (series.empty()) {
      x0 = s.x.front();
      y0 = s.y.front();
    }
    series.push_back(std::move(s));
  }
  json out = {{"beta", beta}, {"dim", dim}, {"target", target}, {"fits", fits}};
  if (fits.size() == 1) {
    for (const auto& k : {"grid", "slope", "slope_stderr", "target", "r2"}) out[k] = fits[0][k];
  }
  const fs::path path = dir / "rates.json";
  write_json(path, out);
  write_text(dir / "rates.svg", loglog_svg("log-log excess risk", series, {{"target slope " + fmt(target, 4), target, x0, y0}}));
  return path;
}

fs::path cmd_verify(const ExperimentConfig& cfg, const std::string& model, const CommandContext& ctx) {
  std::vector<std::string> names;
  if (!model.empty()) names = {model};
  else names = {"oracle", "zero"};
  if (model.empty() && !cfg.checkpoint.empty()) names.push_back("checkpoint");
  const auto oracle = make_predictor("oracle", cfg, cfg.prior);
  std::vector<PredictorHandle> handles;
  for (const auto& nm : names) handles.push_back(make_predictor(nm, cfg, cfg.prior));
  const fs::path dir = out_dir(cfg, ctx);
  auto manifest = start_manifest("verify", cfg);

  TestDistribution pi{"pi", cfg.prior, cfg.sampler(), cfg.noise, 0.0};
  const double R = sup_norm_bound(cfg.prior);
  const auto& comp = cfg.prior.components[cfg.prior.find(cfg.verify.label)];
  std::vector<double> kappas{0.0};
  for (const auto& s : cfg.shifts) {
    if (s.label == cfg.verify.label && s.kappa > 0.0) kappas.push_back(s.kappa);
  }
  json reports = json::array();
  bool all = true;
  for (double kappa : kappas) {
    const int max_level = [&] {
      for (const auto& s : cfg.shifts)
        if (s.label == cfg.verify.label && s.kappa == kappa) return s.max_level;
      return 1;
    }();
    const auto shift = ShiftSpec::for_budget(comp, kappa, max_level);
    TestDistribution mu{comp.label, MixtureSpec::single(make_shifted_prior(comp, shift, cfg.kappa_budget)), cfg.sampler(),
                        cfg.noise, kappa};
    // With a single component and no shift, mu is pi itself.
    const double chi2 = mixture_chi_squared_bound(cfg.prior, cfg.verify.label, kappa);
    for (const auto& h : handles) {
      const auto rep = verify_decomposition_bound(h.predictor, oracle.predictor.f, pi, mu, chi2, R, cfg.verify.n,
                                                  cfg.verify.J, label_seed(cfg.seed, "verify", kappa, cfg.verify.n),
                                                  ctx.threads);
      all = all && rep.holds;
      reports.push_back(to_json(rep));
    }
  }
  const fs::path path = dir / "bound_report.json";
  write_json(path, {{"all_hold", all}, {"reports", reports}});
  manifest.add(path);
  manifest.finished = utc_timestamp();
  manifest.write(dir);
  return path;
}

fs::path cmd_report(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) throw FileError("run directory not found: " + run_dir.string());
  std::ostringstream md;
  md << "# Run report: " << run_dir.filename().string() << "\n\n";
  bool any = false;
  if (fs::exists(run_dir / "run_manifest.json")) {
    std::ifstream in(run_dir / "run_manifest.json");
    const json m = json::parse(in);
    md << "- command: `" << m.value("command", "") << "`\n- config hash: `" << m.value("config_hash", "")
       << "`\n- seed: " << m.value("seed", 0ULL) << "\n- code version: " << m.value("code_version", "") << "\n\n";
    any = true;
  }
  if (fs::exists(run_dir / "train_log.csv")) {
    std::ifstream in(run_dir / "train_log.csv");
    std::string line, last;
    std::size_t count = 0;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (!line.empty()) {
        last = line;
        ++count;
      }
    }
    md << "## Training\n\n" << count << " logged steps; last row `" << last << "`\n\n";
    any = true;
  }
  if (fs::exists(run_dir / "risks.csv")) {
    md << "## Risks\n\n| predictor | prior | kappa | n | J | mean | stderr |\n|---|---|---|---|---|---|---|\n";
    for (const auto& r : read_risks_csv(run_dir / "risks.csv")) {
      md << "| " << r.predictor << " | " << r.prior << " | " << fmt(r.kappa) << " | " << r.estimate.n << " | "
         << r.estimate.J << " | " << fmt(r.estimate.mean) << " | " << fmt(r.estimate.se, 3) << " |\n";
    }
    md << '\n';
    any = true;
  }
  if (fs::exists(run_dir / "rates.json")) {
    std::ifstream in(run_dir / "rates.json");
    const json r = json::parse(in);
    md << "## Rates (target " << fmt(r.value("target", 0.0), 4) << ")\n\n| predictor | prior | kappa | slope | stderr | r2 |\n|---|---|---|---|---|---|\n";
    for (const auto& f : r.at("fits")) {
      md << "| " << f.value("predictor", "") << " | " << f.value("prior", "") << " | " << fmt(f.value("kappa", 0.0)) << " | "
         << fmt(f.value("slope", 0.0), 4) << " | " << fmt(f.value("slope_stderr", 0.0), 3) << " | "
         << fmt(f.value("r2", 0.0), 4) << " |\n";
    }
    md << '\n';
    any = true;
  }
  if (fs::exists(run_dir / "bound_report.json")) {
    std::ifstream in(run_dir / "bound_report.json");
    const json b = json::parse(in);
    md << "## Decomposition bound\n\n| predictor | kappa | lhs | rhs | combined stderr | holds |\n|---|---|---|---|---|---|\n";
    for (const auto& r : b.at("reports")) {
      md << "| " << r.value("predictor", "") << " | " << fmt(r.value("kappa", 0.0)) << " | "
         << fmt(r.at("lhs").value("mean", 0.0)) << " | " << fmt(r.value("rhs", 0.0)) << " | "
         << fmt(r.value("combined_stderr", 0.0), 3) << " | " << (r.value("holds", false) ? "yes" : "no") << " |\n";
    }
    md << '\n';
    any = true;
  }
  if (!any) throw FileError("no run artifacts found in " + run_dir.string());
  const fs::path path = run_dir / "report.md";
  write_text(path, md.str());
  return path;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ValidationError*>(&e) ||
      dynamic_cast<const FileError*>(&e) || dynamic_cast<const ShiftBudgetError*>(&e) ||
      dynamic_cast<const LogDomainError*>(&e))
    return kExitUsage;
  return kExitRuntime;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Bayesian in-context regression lab"};
  app.require_subcommand(1);
  int threads = 0;
  std::string out;
  app.add_option("--threads", threads, "worker threads (default: ICL_LAB_THREADS or all cores)");
  app.add_option("--out", out, "output directory (overrides the config)");

  std::string config, model, resume, risks;
  std::uint64_t count = 0;
  double beta = 0.5;
  int dim = 1;

  auto* gen = app.add_subcommand("gen-tasks", "write a JSONL corpus of episodes");
  gen->add_option("config", config, "experiment config (JSON)")->required();
  gen->add_option("--count", count, "number of episodes")->required();

  auto* train = app.add_subcommand("train", "train the transformer");
  train->add_option("config", config, "experiment config (JSON)")->required();
  train->add_option("--resume", resume, "checkpoint manifest to resume from");

  auto* eval = app.add_subcommand("eval", "estimate excess risks over the grid");
  eval->add_option("config", config, "experiment config (JSON)")->required();
  eval->add_option("--model", model, "oracle, zero, mc, or a checkpoint manifest");

  auto* rate = app.add_subcommand("rate", "fit log-log slopes to a risks.csv");
  rate->add_option("risks", risks, "risks.csv from eval")->required();
  rate->add_option("--beta", beta, "smoothness of the target rate")->required();
  rate->add_option("--dim", dim, "d, or r for multi-index priors")->required();

  auto* verify = app.add_subcommand("verify", "check the excess-risk decomposition bound");
  verify->add_option("config", config, "experiment config (JSON)")->required();
  verify->add_option("--model", model, "oracle, zero, or a checkpoint manifest");

  auto* report = app.add_subcommand("report", "summarize a run directory as markdown");
  std::string run_dir;
  report->add_option("run_dir", run_dir, "directory with run artifacts")->required();

  for (auto* sub : {gen, train, eval, rate, verify, report}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    CommandContext ctx;
    ctx.threads = threads > 0 ? threads : default_threads();
    if (!out.empty()) ctx.out = out;
    fs::path produced;
    if (*gen) {
      produced = cmd_gen_tasks(load_experiment(config), count, ctx);
    } else if (*train) {
      produced = cmd_train(load_experiment(config), ctx, resume.empty() ? std::nullopt : std::optional<fs::path>(resume));
    } else if (*eval) {
      produced = cmd_eval(load_experiment(config), model, ctx);
    } else if (*rate) {
      produced = cmd_rate(risks, beta, dim, ctx);
    } else if (*verify) {
      const auto cfg = load_experiment(config);
      produced = cmd_verify(cfg, model, ctx);
      std::ifstream in(produced);
      if (!json::parse(in).value("all_hold", false)) {
        std::cerr << "bound violated; see " << produced.string() << '\n';
        return kExitRuntime;
      }
    } else if (*report) {
      produced = cmd_report(run_dir);
    }
    std::cout << produced.string() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace icl
