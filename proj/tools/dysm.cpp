// Command-line driver: simulate, fit, forecast, functionals, evaluate.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "dysm/dysm.hpp"

#ifndef DYSM_VERSION
#define DYSM_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace dysm;

namespace {

enum Exit { ok = 0, failure = 1, config_error = 2, data_error = 3, numerical_error = 4 };

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  std::optional<std::string> data;
  std::optional<std::string> draws;
};

// Resolved configuration: file contents with flags applied on top.
struct Run {
  std::string command;
  json config = json::object();
  std::uint64_t seed = 1;
  int threads = 1;
  fs::path out = "out";
  json inputs = json::object();
  std::vector<std::string> warnings;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  json section(const char* name) const { return config.contains(name) ? config.at(name) : json::object(); }

  void add_input(const fs::path& p) { inputs[p.string()] = sha256_file(p); }

  json manifest() const {
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return {{"command", command},
            {"artifact_version", DYSM_VERSION},
            {"config", config},
            {"seed", seed},
            {"inputs", inputs},
            {"warnings", warnings},
            {"elapsed_seconds", elapsed}};
  }

  void write_manifest(json extra = json::object()) const {
    json m = manifest();
    for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
    std::ofstream f(out / "manifest.json");
    f << m.dump(2) << '\n';
    if (!f) throw DataError("cannot write manifest in " + out.string());
  }
};

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
}

// Precedence: flags > top-level config keys > section defaults.
Run resolve(const std::string& command, const Flags& flags) {
  Run r;
  r.command = command;
  r.config = read_config(flags.config);
  detail::reject_unknown(r.config,
                         {"seed", "threads", "out", "data", "model", "hyper", "sampler", "synthetic", "forecast",
                          "evaluate"},
                         "config");
  if (flags.seed) r.config["seed"] = *flags.seed;
  if (flags.threads) r.config["threads"] = *flags.threads;
  if (flags.out) r.config["out"] = *flags.out;
  if (flags.data) r.config["data"]["panel"] = *flags.data;
  if (flags.draws) r.config["forecast"]["draws"] = *flags.draws;
  detail::read_opt(r.config, "seed", r.seed, "config");
  detail::read_opt(r.config, "threads", r.threads, "config");
  std::string out = r.out.string();
  detail::read_opt(r.config, "out", out, "config");
  r.out = out;
  if (r.threads < 1) throw ConfigError("'threads' must be positive");
  r.config["seed"] = r.seed;
  r.config["threads"] = r.threads;
  r.config["out"] = out;
  fs::create_directories(r.out);
  return r;
}

ModelConfig model_of(const Run& r) { return model_from_json(r.section("model")); }

SamplerConfig sampler_of(const Run& r, const ModelConfig& m) {
  SamplerConfig c = sampler_from_json(r.section("sampler"), m);
  c.seed = r.seed;
  c.threads = r.threads;
  c.validate();
  return c;
}

DeathPanel load_input_panel(Run& r) {
  const json d = r.section("data");
  detail::reject_unknown(d, {"panel", "count_source"}, "data");
  if (!d.contains("panel")) throw ConfigError("no input panel: set data.panel or pass --data");
  const fs::path path = d.at("panel").get<std::string>();
  if (d.contains("count_source")) {
    const auto src = d.at("count_source").get<std::string>();
    if (src != "deaths" && src != "dx_scaled")
      throw ConfigError("data.count_source must be 'deaths' or 'dx_scaled'");
  }
  auto panel = load_panel(path, &r.warnings);
  r.add_input(path);
  return panel;
}

std::string count_source(const Run& r) {
  const json d = r.section("data");
  return d.contains("count_source") ? d.at("count_source").get<std::string>() : "deaths";
}

ForecastConfig forecast_config(const Run& r, std::vector<Quantity>* quantities = nullptr) {
  const json f = r.section("forecast");
  detail::reject_unknown(f, {"horizon", "quantiles", "a0", "draws", "quantities"}, "forecast");
  ForecastConfig c;
  detail::read_opt(f, "horizon", c.horizon, "forecast");
  detail::read_opt(f, "quantiles", c.quantiles, "forecast");
  detail::read_opt(f, "a0", c.a0, "forecast");
  c.validate();
  if (quantities) {
    std::vector<std::string> names{"age_at_death", "qx", "mx", "ex"};
    detail::read_opt(f, "quantities", names, "forecast");
    quantities->clear();
    for (const auto& n : names) quantities->push_back(parse_quantity(n));
  }
  return c;
}

void print_warnings(const Run& r) {
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
}

// ---------------------------------------------------------------------------

SyntheticSpec synthetic_spec(const Run& r, const ModelConfig& m) {
  const json s = r.section("synthetic");
  detail::reject_unknown(s, {"countries", "p", "first_year", "years", "max_age", "n", "theta0", "beta", "eta2"},
                         "synthetic");
  SyntheticSpec spec = SyntheticSpec::defaults(m.variant);
  spec.law = m.law;
  spec.seed = r.seed;
  if (s.contains("countries")) {
    detail::read_opt(s, "countries", spec.countries, "synthetic");
  } else if (s.contains("p")) {
    int p = 0;
    detail::read_opt(s, "p", p, "synthetic");
    if (p < 1) throw ConfigError("synthetic.p must be positive");
    spec.countries.clear();
    for (int j = 0; j < p; ++j) spec.countries.push_back("C" + std::to_string(j + 1));
  }
  detail::read_opt(s, "first_year", spec.first_year, "synthetic");
  detail::read_opt(s, "years", spec.years, "synthetic");
  detail::read_opt(s, "max_age", spec.max_age, "synthetic");
  detail::read_opt(s, "n", spec.deaths_per_year, "synthetic");
  detail::read_opt(s, "theta0", spec.theta0, "synthetic");
  detail::read_opt(s, "beta", spec.beta, "synthetic");
  detail::read_opt(s, "eta2", spec.eta2, "synthetic");
  if (spec.deaths_per_year < 1) throw ConfigError("synthetic.n must be at least 1");
  spec.validate();
  return spec;
}

int cmd_simulate(Run& r) {
  const auto m = model_of(r);
  const auto spec = synthetic_spec(r, m);
  const auto syn = generate_synthetic(spec);
  save_panel(syn.panel, r.out / "panel.csv");
  // The truth is stored as a one-row draw store so downstream commands can read it.
  PosteriorDraws truth;
  truth.layout = syn.truth.layout();
  truth.variant = m.variant;
  truth.law = m.law;
  truth.flat_priors = m.flat_priors;
  truth.hyper = Hyperparams::defaults(m.variant);
  truth.config.variant = m.variant;
  truth.config.innovation = m.law;
  truth.config.seed = r.seed;
  truth.config.n_iter = 1;
  truth.config.burn_in = 0;
  truth.max_age = spec.max_age;
  ChainDraws row;
  row.iteration.push_back(0);
  row.loglik.push_back(total_loglik(Model(syn.panel, m.variant, truth.hyper, m.law), syn.truth));
  auto v = syn.truth.values();
  row.values.assign(v.begin(), v.end());
  truth.chains.push_back(std::move(row));
  save_draws(truth, r.out / "truth", {{"kind", "synthetic_truth"}});
  r.config["synthetic"] = {{"countries", spec.countries}, {"first_year", spec.first_year}, {"years", spec.years},
                           {"max_age", spec.max_age},     {"n", spec.deaths_per_year},    {"theta0", spec.theta0},
                           {"beta", spec.beta},           {"eta2", spec.eta2}};
  r.config["model"] = to_json(m);
  r.write_manifest({{"outputs", {"panel.csv", "truth/draws.csv", "truth/manifest.json"}}});
  std::cout << "simulated " << spec.countries.size() << " countries x " << spec.years << " years into "
            << r.out.string() << '\n';
  return ok;
}

int cmd_fit(Run& r) {
  const auto m = model_of(r);
  const Hyperparams h = hyper_from_json(r.section("hyper"), m.variant);
  const auto cfg = sampler_of(r, m);
  auto panel = load_input_panel(r);
  print_warnings(r);
  const auto t0 = std::chrono::steady_clock::now();
  const auto draws = run_chain(panel, h, cfg);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.config["model"] = to_json(m);
  r.config["hyper"] = to_json(h);
  r.config["sampler"] = to_json(cfg);
  json extra = r.manifest();
  extra["diagnostics"] = ess_summary(draws);
  extra["count_source"] = count_source(r);
  extra["sampling_seconds"] = seconds;
  save_draws(draws, r.out, extra);
  std::cout << "stored " << draws.total_rows() << " draws in " << r.out.string() << " (" << std::fixed
            << std::setprecision(1) << seconds << " s)\n";
  return ok;
}

PosteriorDraws load_input_draws(Run& r) {
  const json f = r.section("forecast");
  if (!f.contains("draws")) throw ConfigError("no draw store: set forecast.draws or pass --draws");
  const fs::path dir = f.at("draws").get<std::string>();
  auto d = load_draws(dir);
  r.add_input(dir / "draws.csv");
  r.add_input(dir / "manifest.json");
  return d;
}

void write_bands(const BandTable& t, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "country,year,age,quantity,quantile,value\n";
  for (const auto& row : t.rows) {
    out << t.countries[row.country] << ',' << row.year << ',';
    if (row.age < 0) out << "NA";
    else out << row.age;
    out << ',' << row.quantity << ',' << csv::format(row.quantile) << ',';
    if (std::isnan(row.value)) out << "NA";
    else out << csv::format(row.value);
    out << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

void write_predictions(std::ostream& out, const PosteriorDraws& d, const StateForecast* fc, int first_year,
                       int last_year, std::optional<int> window) {
  for (std::size_t j = 0; j < d.layout.p(); ++j)
    for (int y = first_year; y <= last_year; ++y) {
      const auto dist = median_distribution(d, fc, j, y);
      for (std::size_t x = 0; x < dist.size(); ++x) {
        out << "DYSM," << d.layout.countries[j] << ',';
        if (window) out << *window << ',';
        out << y << ',' << x << ',' << csv::format(dist[x]) << '\n';
      }
    }
}

int cmd_forecast(Run& r) {
  const auto draws = load_input_draws(r);
  const auto fcfg = forecast_config(r);
  Rng rng(derive_seed(r.seed, {stream::forecast}));
  const auto fc = forecast_states(draws, fcfg, rng);
  const auto bands = functional_bands(draws, &fc, {}, fcfg, true);
  write_bands(bands, r.out / "states.csv");
  std::ofstream pred(r.out / "predictions.csv");
  pred << "method,country,year,age,value\n";
  const int last_fit = draws.layout.first_year + static_cast<int>(draws.layout.T()) - 1;
  write_predictions(pred, draws, &fc, draws.layout.first_year, last_fit + fcfg.horizon, std::nullopt);
  if (!pred) throw DataError("failed writing predictions");
  r.config["forecast"] = to_json(fcfg);
  r.config["forecast"]["draws"] = r.section("forecast").value("draws", std::string());
  r.write_manifest({{"outputs", {"states.csv", "predictions.csv"}},
                    {"first_forecast_year", last_fit + 1},
                    {"horizon", fcfg.horizon}});
  std::cout << "forecast " << fcfg.horizon << " years beyond " << last_fit << " into " << r.out.string() << '\n';
  return ok;
}

int cmd_functionals(Run& r) {
  const auto draws = load_input_draws(r);
  std::vector<Quantity> quantities;
  const auto fcfg = forecast_config(r, &quantities);
  Rng rng(derive_seed(r.seed, {stream::forecast}));
  const auto fc = forecast_states(draws, fcfg, rng);
  const auto bands = functional_bands(draws, &fc, quantities, fcfg);
  write_bands(bands, r.out / "functionals.csv");
  json names = json::array();
  for (auto q : quantities) names.push_back(std::string(quantity_name(q)));
  r.config["forecast"] = to_json(fcfg);
  r.config["forecast"]["draws"] = r.section("forecast").value("draws", std::string());
  r.config["forecast"]["quantities"] = names;
  r.write_manifest({{"outputs", {"functionals.csv"}}});
  std::cout << "wrote " << bands.rows.size() << " summary rows to " << (r.out / "functionals.csv").string() << '\n';
  return ok;
}

WindowSpec window_spec(const json& e, const DeathPanel& panel) {
  WindowSpec w;
  w.first_year = panel.first_year();
  w.last_year = panel.last_year();
  detail::read_opt(e, "fit_length", w.fit_length, "evaluate");
  detail::read_opt(e, "horizon", w.horizon, "evaluate");
  detail::read_opt(e, "step", w.step, "evaluate");
  detail::read_opt(e, "first_year", w.first_year, "evaluate");
  detail::read_opt(e, "last_year", w.last_year, "evaluate");
  w.validate();
  if (w.first_year < panel.first_year() || w.last_year > panel.last_year())
    throw ConfigError("evaluation range lies outside the panel's years");
  return w;
}

// Observed frequencies and predictions stacked over a year range.
std::vector<double> observed_block(const DeathPanel& panel, std::size_t j, int first, int last) {
  std::vector<double> out;
  for (int y = first; y <= last; ++y) {
    const auto f = panel.frequencies(j, static_cast<std::size_t>(y - panel.first_year()));
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

int cmd_evaluate(Run& r) {
  const auto m = model_of(r);
  const Hyperparams h = hyper_from_json(r.section("hyper"), m.variant);
  const auto base_cfg = sampler_of(r, m);
  const auto panel = load_input_panel(r);
  const json e = r.section("evaluate");
  detail::reject_unknown(e, {"fit_length", "horizon", "step", "first_year", "last_year", "competitors", "max_windows", "sex"},
                         "evaluate");
  const auto spec = window_spec(e, panel);
  auto windows = rolling_windows(spec);
  int max_windows = 0;
  detail::read_opt(e, "max_windows", max_windows, "evaluate");
  if (max_windows > 0 && static_cast<std::size_t>(max_windows) < windows.size()) windows.resize(max_windows);
  std::string sex = "total";
  detail::read_opt(e, "sex", sex, "evaluate");
  std::vector<std::string> competitor_files;
  detail::read_opt(e, "competitors", competitor_files, "evaluate");
  std::vector<ExternalForecast> competitors;
  for (const auto& f : competitor_files) {
    competitors.push_back(ingest_external_forecast(f, &r.warnings));
    r.add_input(f);
  }
  print_warnings(r);

  std::map<std::string, std::map<ScoreKey, double>> self_scores;                          // metric/sample -> scores
  std::map<std::string, std::map<std::string, std::map<ScoreKey, double>>> comp_scores;  // metric -> method -> scores
  std::ofstream long_table(r.out / "windows.csv");
  long_table << "method,country,window,sex,sample,metric,value\n";
  std::ofstream pred(r.out / "predictions.csv");
  pred << "method,country,window,year,age,value\n";
  json logml = json::array();

  for (std::size_t w = 0; w < windows.size(); ++w) {
    const auto& win = windows[w];
    const auto fit_panel = panel.slice_years(win.fit_first, win.fit_last);
    SamplerConfig cfg = base_cfg;
    cfg.seed = derive_seed(r.seed, {stream::window, w, stream::sex, std::hash<std::string>{}(sex)});
    const auto draws = run_chain(fit_panel, h, cfg);
    ForecastConfig fcfg;
    fcfg.horizon = spec.horizon;
    Rng rng(derive_seed(cfg.seed, {stream::forecast}));
    const auto fc = forecast_states(draws, fcfg, rng);
    write_predictions(pred, draws, &fc, win.test_first, win.test_last, win.fit_first);

    std::vector<double> ll;
    for (const auto& c : draws.chains) ll.insert(ll.end(), c.loglik.begin(), c.loglik.end());
    const auto hm = harmonic_mean_with_se(ll);
    logml.push_back({{"window", win.fit_first}, {"log_ml", hm.log_ml}, {"jackknife_se", hm.jackknife_se}});

    for (std::size_t j = 0; j < panel.countries(); ++j) {
      const std::string& country = panel.labels()[j];
      const ScoreKey key{country, win.fit_first, sex};
      struct Sample {
        const char* name;
        int first, last;
      };
      for (const Sample s : {Sample{"in", win.fit_first, win.fit_last}, Sample{"out", win.test_first, win.test_last}}) {
        const auto obs = observed_block(panel, j, s.first, s.last);
        std::vector<double> mine;
        for (int y = s.first; y <= s.last; ++y) {
          const auto dist = median_distribution(draws, &fc, j, y);
          mine.insert(mine.end(), dist.begin(), dist.end());
        }
        for (Metric metric : {Metric::mae, Metric::mse}) {
          const std::string tag = std::string(metric_name(metric)) + "_" + s.name;
          const double v = score(mine, obs, metric);
          self_scores[tag][key] = v;
          long_table << "DYSM," << country << ',' << win.fit_first << ',' << sex << ',' << s.name << ','
                     << metric_name(metric) << ',' << csv::format(v) << '\n';
        }
      }
      // Competitors are scored out of sample only.
      const auto obs = observed_block(panel, j, win.test_first, win.test_last);
      for (const auto& ext : competitors)
        for (const auto& method : ext.methods()) {
          std::vector<double> theirs;
          for (int y = win.test_first; y <= win.test_last; ++y) {
            const auto* p = ext.find(method, country, win.fit_first, y);
            if (!p)
              throw DataError("competitor " + method + " has no prediction for " + country + " " + std::to_string(y) +
                              " (window " + std::to_string(win.fit_first) + ")");
            theirs.insert(theirs.end(), p->begin(), p->end());
          }
          if (theirs.size() != obs.size())
            throw DataError("competitor " + method + " uses a different age grid than the panel");
          for (Metric metric : {Metric::mae, Metric::mse}) {
            const double v = score(theirs, obs, metric);
            comp_scores[std::string(metric_name(metric)) + "_out"][method][key] = v;
            long_table << method << ',' << country << ',' << win.fit_first << ',' << sex << ",out," << metric_name(metric)
                       << ',' << csv::format(v) << '\n';
          }
        }
    }
    std::cout << "window " << win.fit_first << "-" << win.fit_last << " done\n";
  }

  std::ofstream report(r.out / "report.csv");
  report << "method,metric,sample,median,q1,q3,n\n";
  for (const auto& [tag, self] : self_scores) {
    std::map<std::string, std::map<ScoreKey, double>> methods;
    methods["DYSM"] = self;
    if (auto it = comp_scores.find(tag); it != comp_scores.end())
      for (const auto& [method, scores] : it->second) methods[method] = scores;
    const auto metric = tag.substr(0, 3);
    const auto sample = tag.substr(4);
    for (const auto& row : relative_report(self, methods))
      report << row.method << ',' << metric << ',' << sample << ',' << csv::format(row.median) << ','
             << csv::format(row.q1) << ',' << csv::format(row.q3) << ',' << row.n << '\n';
  }
  if (!report || !long_table || !pred) throw DataError("failed writing evaluation outputs");
  json ws = json::array();
  for (const auto& w : windows) ws.push_back({w.fit_first, w.fit_last, w.test_first, w.test_last});
  r.config["model"] = to_json(m);
  r.config["hyper"] = to_json(h);
  r.config["sampler"] = to_json(base_cfg);
  r.write_manifest({{"outputs", {"windows.csv", "report.csv", "predictions.csv"}},
                    {"windows", ws},
                    {"harmonic_mean_logml", logml}});
  std::cout << "evaluated " << windows.size() << " windows into " << r.out.string() << '\n';
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic Skew-Normal mixture model for age-at-death distributions"};
  app.require_subcommand(1);
  Flags flags;
  std::uint64_t seed = 0;
  std::string out, data, draws;
  int threads = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "JSON configuration file");
    sub->add_option("--seed", seed, "root seed (overrides the config)");
    sub->add_option("--out", out, "output directory (overrides the config)");
    sub->add_option("--threads", threads, "worker threads for parallel chains")->check(CLI::PositiveNumber);
  };
  auto* simulate = app.add_subcommand("simulate", "generate a synthetic death panel and its true dynamics");
  auto* fit = app.add_subcommand("fit", "run the sampler on a death panel");
  auto* forecast = app.add_subcommand("forecast", "forecast latent states and point predictions");
  auto* functionals = app.add_subcommand("functionals", "life-table functional bands from a draw store");
  auto* evaluate = app.add_subcommand("evaluate", "rolling-window evaluation against observed data");
  for (auto* s : {simulate, fit, forecast, functionals, evaluate}) add_common(s);
  for (auto* s : {fit, evaluate}) s->add_option("--data", data, "death panel CSV (overrides data.panel)");
  for (auto* s : {forecast, functionals}) s->add_option("--draws", draws, "draw store directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : config_error;
  }
  auto* sub = app.get_subcommands().front();
  if (sub->count("--seed")) flags.seed = seed;
  if (sub->count("--out")) flags.out = out;
  if (sub->count("--threads")) flags.threads = threads;
  if (sub->get_option_no_throw("--data") && sub->count("--data")) flags.data = data;
  if (sub->get_option_no_throw("--draws") && sub->count("--draws")) flags.draws = draws;

  try {
    Run r = resolve(sub->get_name(), flags);
    if (sub == simulate) return cmd_simulate(r);
    if (sub == fit) return cmd_fit(r);
    if (sub == forecast) return cmd_forecast(r);
    if (sub == functionals) return cmd_functionals(r);
    return cmd_evaluate(r);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return config_error;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return config_error;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return data_error;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return numerical_error;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return data_error;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return failure;
  }
}
