#include "sgdlab/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sgdlab/errors.hpp"
#include "sgdlab/harness.hpp"
#include "sgdlab/io.hpp"
#include "sgdlab/verify.hpp"

namespace sgdlab {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> runs;
  std::string out;
  std::optional<int> threads;
  std::optional<double> delta;
  std::vector<double> quantiles;
  std::string runs_dir;
  std::optional<double> window;
  std::optional<int> run_id;
  std::string checkpoint = "final";
  std::optional<int> mc_draws;
  std::optional<double> prior_sigma;
};

fs::path default_root() {
  const char* env = std::getenv("SGDLAB_OUT");
  return env && *env ? fs::path(env) : fs::path("out");
}

ExperimentConfig load_with_overrides(const Options& o) {
  if (o.config.empty()) throw InvalidInput("--config is required");
  ExperimentConfig cfg = load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.runs) cfg.runs = *o.runs;
  if (o.threads) cfg.threads = *o.threads;
  if (o.delta) cfg.bound.delta = *o.delta;
  if (!o.quantiles.empty()) cfg.quantiles = o.quantiles;
  if (o.window) cfg.quantile_window = *o.window;
  if (!o.out.empty())
    cfg.output_dir = o.out;
  else if (cfg.output_dir.empty())
    cfg.output_dir = (default_root() / cfg.name).string();
  cfg.optim.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

fs::path require_runs_dir(const Options& o) {
  if (o.runs_dir.empty()) throw InvalidInput("--runs-dir is required");
  if (!fs::is_directory(o.runs_dir)) throw InvalidInput("runs directory " + o.runs_dir + " does not exist");
  return o.runs_dir;
}

ExperimentData load_run_data(const fs::path& dir) {
  ExperimentData data;
  data.train = load_dataset(dir / "data" / "train.sgdd");
  if (fs::exists(dir / "data" / "test.sgdd")) data.test = load_dataset(dir / "data" / "test.sgdd");
  return data;
}

std::vector<int> ok_runs(const fs::path& dir) {
  const json manifest = json::parse(read_text(dir / "manifest.json"));
  std::vector<int> ids;
  for (const auto& r : manifest.at("runs"))
    if (!r.at("failed").get<bool>()) ids.push_back(r.at("run_id").get<int>());
  return ids;
}

fs::path checkpoint_path(const fs::path& dir, int run_id, const std::string& which) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "run_%05d_%s.json", run_id, which.c_str());
  return dir / "checkpoints" / buf;
}

std::string fixed(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  ExperimentConfig cfg = load_with_overrides(o);
  if (o.seed) cfg.data.seed = *o.seed;
  const ExperimentData data = build_data(cfg.data);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  save_dataset(dir / "train.sgdd", data.train);
  out << "train " << (dir / "train.sgdd").string() << " n=" << data.train.size() << " d=" << data.train.dim()
      << " k=" << data.train.num_classes << '\n';
  if (data.test) {
    save_dataset(dir / "test.sgdd", *data.test);
    out << "test " << (dir / "test.sgdd").string() << " n=" << data.test->size() << '\n';
  }
  return 0;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.run_id) {
    const fs::path dir = o.out.empty() ? fs::path(o.runs_dir) : fs::path(o.out);
    const RunResult rr = rerun_single(dir, *o.run_id);
    out << "rerun " << *o.run_id << (rr.trace.failed ? " failed: " + rr.trace.error : " ok") << '\n';
    return 0;
  }
  const ExperimentConfig cfg = load_with_overrides(o);
  const ExperimentResult res = run_experiment(cfg, [&](int done, int total) {
    err << "\rruns " << done << "/" << total << (done == total ? "\n" : "") << std::flush;
  });
  int failed = 0;
  for (const RunResult& rr : res.runs) failed += rr.trace.failed ? 1 : 0;
  out << "output " << res.dir.string() << '\n';
  out << "config_hash " << config_hash(cfg) << '\n';
  out << "artifact_hash " << artifact_hash(res.dir) << '\n';
  out << "runs " << res.runs.size() << " failed " << failed << '\n';
  return 0;
}

int cmd_spectra(const Options& o, std::ostream& out) {
  const fs::path dir = require_runs_dir(o);
  if (o.checkpoint != "init" && o.checkpoint != "final") throw InvalidInput("--checkpoint must be init or final");
  ExperimentConfig cfg = load_config(dir / "config.toml");
  if (o.seed) cfg.seed = *o.seed;
  const fs::path target = o.out.empty() ? dir / ("posthoc_" + o.checkpoint) : fs::path(o.out);
  const ExperimentData data = load_run_data(dir);
  int count = 0;
  for (int id : ok_runs(dir)) {
    const fs::path cp = checkpoint_path(dir, id, o.checkpoint);
    if (!fs::exists(cp)) throw InvalidInput("missing checkpoint " + cp.string());
    const Checkpoint c = load_checkpoint(cp);
    const int t = o.checkpoint == "init" ? 0 : cfg.optim.max_iters;
    const Snapshot s = take_snapshot(cfg, data.train, c.theta, t, derive_seed(cfg.seed, stream::kProbe, id));
    write_snapshot_files(cfg, target, id, {s});
    out << "run " << id << " t=" << t << " method=" << s.method << " hf_top=" << fixed(s.hf_eigs[0], 6)
        << " curvature=" << fixed(s.curvature, 6) << '\n';
    ++count;
  }
  out << "wrote " << count << " snapshots to " << target.string() << '\n';
  return 0;
}

int cmd_overlap(const Options& o, std::ostream& out) {
  const fs::path dir = require_runs_dir(o);
  const auto snaps = load_overlap_snapshots(dir);
  if (snaps.empty()) throw InvalidInput("no overlap files under " + dir.string());
  const auto top_q = overlap_trajectory(snaps);
  const auto top_k = overlap_trajectory(snaps, true);
  const fs::path target = (o.out.empty() ? dir : fs::path(o.out)) / "overlap.csv";
  write_overlap(target, top_q, top_k);
  out << "t,runs,mean_cos_top_k,mean_cos_first10_of_top_q\n";
  for (std::size_t i = 0; i < top_q.size(); ++i) {
    const auto& q = top_q[i];
    const Eigen::Index n10 = std::min<Eigen::Index>(10, q.mean.size());
    out << q.t << ',' << q.count << ',' << fixed(top_k[i].mean.mean()) << ',' << fixed(q.mean.head(n10).mean())
        << '\n';
  }
  out << "wrote " << target.string() << '\n';
  return 0;
}

int cmd_dynamics(const Options& o, std::ostream& out) {
  const fs::path dir = require_runs_dir(o);
  std::vector<Trace> traces;
  for (Trace& tr : load_traces(dir))
    if (!tr.failed) traces.push_back(std::move(tr));
  std::vector<Trace> complete;
  std::size_t longest = 0;
  for (const Trace& tr : traces) longest = std::max(longest, tr.rows.size());
  for (Trace& tr : traces)
    if (tr.rows.size() == longest) complete.push_back(std::move(tr));
  if (complete.empty()) throw InvalidInput("no complete traces under " + dir.string());
  const std::vector<double> levels = o.quantiles.empty() ? std::vector<double>{10, 25, 50, 75, 90} : o.quantiles;
  const double window = o.window.value_or(0.01);
  const fs::path target = o.out.empty() ? dir : fs::path(o.out);
  std::vector<QuantileSeries> series;
  for (const char* stat : {"loss", "grad_norm", "cos_prev"}) series.push_back(quantile_series(complete, stat, levels));
  write_quantiles(target / "quantiles.csv", series);
  const int R = static_cast<int>(complete.size());
  std::vector<double> band_levels;
  for (double q : levels) {
    if (quantile_band_size(R, q, window) >= kMinBandRuns)
      band_levels.push_back(q);
    else
      out << "quantile " << fixed(q) << ": band below " << kMinBandRuns << " runs, delta variance skipped\n";
  }
  if (!band_levels.empty()) write_delta_variance(target / "delta_variance.csv", complete, band_levels, window);
  out << "runs " << R << " iterations " << longest << '\n';
  const std::size_t mid = static_cast<std::size_t>(
      std::min_element(levels.begin(), levels.end(),
                       [](double a, double b) { return std::abs(a - 50.0) < std::abs(b - 50.0); }) -
      levels.begin());
  for (const QuantileSeries& qs : series)
    out << qs.stat << " q" << fixed(levels[mid]) << " first=" << fixed(qs.values.front()[mid])
        << " last=" << fixed(qs.values.back()[mid]) << '\n';
  out << "wrote " << (target / "quantiles.csv").string()
      << (band_levels.empty() ? "" : " and " + (target / "delta_variance.csv").string()) << '\n';
  return 0;
}

int cmd_bound(const Options& o, std::ostream& out) {
  const fs::path dir = require_runs_dir(o);
  ExperimentConfig cfg = load_config(dir / "config.toml");
  if (o.seed) cfg.seed = *o.seed;
  if (o.delta) cfg.bound.delta = *o.delta;
  if (o.mc_draws) cfg.bound.mc_draws = *o.mc_draws;
  if (o.prior_sigma) cfg.bound.prior_sigma = *o.prior_sigma;
  cfg.validate();
  const ExperimentData data = load_run_data(dir);
  const std::string hash = config_hash(cfg);
  std::ostringstream lines;
  for (int id : ok_runs(dir)) {
    const Checkpoint fin = load_checkpoint(checkpoint_path(dir, id, "final"));
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(fin.theta.size());
    if (cfg.bound.prior_mean == "init") mean = load_checkpoint(checkpoint_path(dir, id, "init")).theta.values;
    BoundOptions bo;
    bo.delta = cfg.bound.delta;
    bo.mc_draws = cfg.bound.mc_draws;
    bo.seed = derive_seed(cfg.seed, stream::kPosterior, static_cast<std::uint64_t>(id));
    bo.dense_limit = cfg.dense_limit;
    const BoundReport r = bound_report(cfg.net, fin.theta, PriorSpec::isotropic(mean, cfg.bound.prior_sigma),
                                       data.train, data.test, bo);
    const std::string line = bound_json_line(r, id, hash);
    out << line << '\n';
    lines << line << '\n';
  }
  write_text((o.out.empty() ? dir : fs::path(o.out)) / "bounds.jsonl", lines.str());
  return 0;
}

int cmd_verify(const Options& o, std::ostream& out) {
  VerifyOptions vo;
  if (o.seed) vo.seed = *o.seed;
  const auto results = run_verify_suite(vo);
  bool ok = true;
  json j = json::array();
  out << "check                        result  value        tolerance\n";
  for (const CheckResult& r : results) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-28s %-6s  %-11.3e  %.1e", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.value,
                  r.tolerance);
    out << buf << "  " << r.detail << '\n';
    ok = ok && r.passed;
    j.push_back({{"name", r.name}, {"value", r.value}, {"tolerance", r.tolerance}, {"passed", r.passed}});
  }
  if (!o.out.empty()) write_text(fs::path(o.out) / "verify.json", j.dump(2) + "\n");
  out << (ok ? "all checks passed" : "some checks FAILED") << '\n';
  return ok ? 0 : 2;
}

int cmd_report(const Options& o, std::ostream& out) {
  const fs::path dir = require_runs_dir(o);
  const auto problems = validate_artifacts(dir);
  const json manifest = json::parse(read_text(dir / "manifest.json"));
  int failed = 0;
  for (const auto& r : manifest.at("runs")) failed += r.at("failed").get<bool>() ? 1 : 0;
  out << "experiment " << manifest.value("name", "") << " config_hash " << manifest.value("config_hash", "") << '\n';
  out << "runs " << manifest.at("runs").size() << " failed " << failed << '\n';
  for (const auto& a : manifest.at("aggregates")) out << "aggregate " << a.get<std::string>() << '\n';
  for (const auto& n : manifest.at("notes")) out << "note " << n.get<std::string>() << '\n';
  for (const std::string& p : problems) out << "problem " << p << '\n';
  if (problems.empty()) out << "artifact_hash " << artifact_hash(dir) << '\n';
  if (!o.out.empty()) {
    json rep = {{"dir", dir.string()}, {"failed_runs", failed}, {"problems", problems}};
    write_text(fs::path(o.out) / "report.json", rep.dump(2) + "\n");
  }
  out << (problems.empty() ? "artifacts complete" : "artifacts INCOMPLETE") << '\n';
  return problems.empty() ? 0 : 1;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"sgdlab: stochastic gradient dynamics laboratory"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "Experiment seed override");
    sub->add_option("--out", o.out, "Output directory");
  };
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "TOML experiment config")->check(CLI::ExistingFile);
    sub->add_option("--runs", o.runs, "Number of runs");
    sub->add_option("--threads", o.threads, "Worker threads");
    sub->add_option("--delta", o.delta, "Bound confidence parameter");
    sub->add_option("--quantiles", o.quantiles, "Quantile levels in (0, 100)")->delimiter(',');
    sub->add_option("--window", o.window, "Rank band half width as a fraction of the run count");
  };
  auto add_runs_dir = [&](CLI::App* sub) {
    sub->add_option("--runs-dir", o.runs_dir, "Finished experiment directory");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "Generate or load the dataset of a config and save it");
  add_common(gen);
  add_config(gen);
  CLI::App* train = app.add_subcommand("train", "Run an experiment and write its artifact directory");
  add_common(train);
  add_config(train);
  add_runs_dir(train);
  train->add_option("--run-id", o.run_id, "Re-run one replicate inside an existing directory");
  CLI::App* spectra = app.add_subcommand("spectra", "Spectra of H_f, M and H_p at saved checkpoints");
  add_common(spectra);
  add_runs_dir(spectra);
  spectra->add_option("--checkpoint", o.checkpoint, "init or final");
  CLI::App* overlap = app.add_subcommand("overlap", "Principal-angle trajectories with confidence bands");
  add_common(overlap);
  add_runs_dir(overlap);
  CLI::App* dynamics = app.add_subcommand("dynamics", "Quantile curves and delta-variance bands");
  add_common(dynamics);
  add_runs_dir(dynamics);
  dynamics->add_option("--quantiles", o.quantiles, "Quantile levels in (0, 100)")->delimiter(',');
  dynamics->add_option("--window", o.window, "Rank band half width as a fraction of the run count");
  CLI::App* bound = app.add_subcommand("bound", "Generalization bound reports as JSON lines");
  add_common(bound);
  add_runs_dir(bound);
  bound->add_option("--delta", o.delta, "Confidence parameter");
  bound->add_option("--mc-draws", o.mc_draws, "Posterior draws per run");
  bound->add_option("--prior-sigma", o.prior_sigma, "Isotropic prior standard deviation");
  CLI::App* verify = app.add_subcommand("verify", "Identity and oracle checks");
  add_common(verify);
  CLI::App* report = app.add_subcommand("report", "Validate an artifact directory and summarize it");
  add_common(report);
  add_runs_dir(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (*gen) return cmd_gen_data(o, out);
    if (*train) return cmd_train(o, out, err);
    if (*spectra) return cmd_spectra(o, out);
    if (*overlap) return cmd_overlap(o, out);
    if (*dynamics) return cmd_dynamics(o, out);
    if (*bound) return cmd_bound(o, out);
    if (*verify) return cmd_verify(o, out);
    if (*report) return cmd_report(o, out);
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace sgdlab
