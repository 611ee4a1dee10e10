#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "rcchain/rcchain.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rcchain;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;
constexpr int kExitUsage = 2;

struct Globals {
  std::string config;
  std::uint64_t seed = 1;
  std::string out = ".";
  int jobs = 1;
  bool full = false;
  double r_value = 1e4;
};

struct DesignArgs {
  std::optional<double> enob;
  std::optional<double> snr_db;
  double bw_hz = 1e7;
  double delta_n = 1e-3;
  int n_min = 2, n_max = 10, osr_min = 10, osr_max = 32;
  double v_max = 1.0;
  double epsilon = kDefaultEpsilon;
};

struct SimArgs {
  std::string input = "sine";
  double amplitude = 1.0;
  double freq_norm = 0.5;  // fraction of omega_B
  int hold = 0;            // 0: OSR
  std::uint64_t input_seed = 0;
  double cycles_scale = 1.0;
  int substeps = kDefaultSubsteps;
  double delay_norm = 0.0;
  bool noise = false;
  double temperature = 300.0;
  bool no_states = false;
  bool csv = false;
};

struct TrainArgs {
  std::string record = "training.rcsr";
  std::string bank = "bank.json";
  int taps = kDefaultTaps;
  int latency = kDefaultLatency;
  bool auto_latency = false;
  double ridge = kDefaultRidge;
  int decimation = 0;  // 0: default for the config
  std::string prefilter = "lowpass";
  bool lms = false;
};

struct SweepArgs {
  std::vector<int> n_values{3, 4, 6};
  std::vector<int> osr_values{12, 20, 32};
  double bw_hz = 1e7;
  double delta_n = 1e-3;
  double cycles_scale = 1.0;
  std::string mode = "rc";
  int trials = 200;
  double fraction = 0.2;
  std::string perturb = "element";
  int points = 17;
  bool noise = false;
  double temperature = 300.0;
};

struct NoiseArgs {
  double snr_db = enob_to_snr(10.0);
  double temperature = 300.0;
  int points = 256;
};

std::ofstream open_out(const Globals& g, const std::string& name) {
  fs::create_directories(g.out);
  const auto path = fs::path(g.out) / name;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.precision(10);
  return os;
}

void write_json(const Globals& g, const std::string& name, const json& j) {
  auto os = open_out(g, name);
  os << j.dump(2) << '\n';
}

ConfigDocument config_or_default(const Globals& g) {
  if (!g.config.empty()) return load_document(g.config, g.r_value);
  ConfigDocument d;
  d.params = build_nominal_config(4, 26, std::pow(1e-3, 0.25), 2.0 * std::numbers::pi * 1e7, 1.0);
  d.elements = nominal_elements(d.params, g.r_value);
  return d;
}

DecimationSpec decimation_for(const ChainParameters& p, const TrainArgs& a) {
  auto d = default_decimation(p);
  d.prefilter = prefilter_from_string(a.prefilter);
  if (a.decimation > 0) d.factor = a.decimation;
  return d;
}

TrainOptions train_options(const ChainParameters& p, const TrainArgs& a) {
  TrainOptions t;
  t.taps = a.taps;
  t.latency = a.latency;
  t.auto_latency = a.auto_latency;
  t.ridge = a.ridge;
  t.decimation = decimation_for(p, a);
  t.nyquist_rate = p.f_s / t.decimation.factor;
  return t;
}

json snr_json(const SnrResult& s) {
  return {{"snr_db", s.snr_db},
          {"enob", s.enob},
          {"signal_power", s.signal_power},
          {"noise_power", s.noise_power},
          {"signal_bin", s.signal_bin}};
}

json report_json(const TrainingReport& r) {
  return {{"residual_mse", r.residual_mse},
          {"condition", r.condition},
          {"samples_used", r.samples_used},
          {"latency", r.latency}};
}

void write_histograms(const Globals& g, const SimRecord& rec) {
  for (int l = 1; l <= rec.n_stages; ++l) {
    auto os = open_out(g, "histogram_x" + std::to_string(l) + ".csv");
    write_histogram_csv(os, state_histogram(rec, l, 101));
  }
}

int cmd_design(const Globals& g, const DesignArgs& a) {
  DesignTarget t;
  if (a.snr_db)
    t.target_snr_db = *a.snr_db;
  else
    t.target_snr_db = enob_to_snr(a.enob.value_or(10.0));
  t.omega_b = 2.0 * std::numbers::pi * a.bw_hz;
  t.delta_n = a.delta_n;
  t.n_min = a.n_min;
  t.n_max = a.n_max;
  t.osr_min = a.osr_min;
  t.osr_max = a.osr_max;
  t.v_max = a.v_max;
  t.epsilon = a.epsilon;
  const auto p = design_search(t);
  const auto e = nominal_elements(p, g.r_value);
  write_json(g, "config.json", to_document(p, e));
  {
    auto os = open_out(g, "surface.csv");
    write_surface_csv(os, snr_surface(t));
  }
  std::cout << "N = " << p.n_stages << ", OSR = " << p.osr << '\n'
            << "expected SNR = " << expected_snr(p) << " dB (target " << t.target_snr_db << " dB)\n"
            << "kappa =";
  for (double k : p.kappas) std::cout << ' ' << k;
  std::cout << "\ntau = " << p.tau << " s\nf_s = " << p.f_s << " Hz\n";
  return kExitOk;
}

InputSignal make_input(const ChainParameters& p, const SimArgs& a, std::uint64_t seed) {
  if (a.input == "sine") return input::Sine{a.amplitude * p.v_max, a.freq_norm * p.omega_b, 0.0};
  if (a.input == "held")
    return input::HeldRandom{a.amplitude * p.v_max, a.hold > 0 ? a.hold : p.osr,
                             a.input_seed != 0 ? a.input_seed : derive_seed(seed, 1)};
  if (a.input == "zero") return input::Zero{};
  throw DomainError("unknown input '" + a.input + "' (sine, held, zero)");
}

int cmd_simulate(const Globals& g, const SimArgs& a) {
  const auto cfg = config_or_default(g);
  const auto& p = cfg.params;
  ComparatorModel comp;
  comp.delay = a.delay_norm / p.f_s;
  SimOptions opt;
  opt.substeps = a.substeps;
  opt.noise = NoiseSpec{a.noise, a.temperature};
  opt.seed = g.seed;
  opt.record_states = !a.no_states;
  const auto rec = simulate(cfg.elements, p, comp, make_input(p, a, g.seed), record_cycles(p, a.cycles_scale), opt);
  fs::create_directories(g.out);
  save_record((fs::path(g.out) / "record.rcsr").string(), rec);
  if (a.csv) {
    auto bits = open_out(g, "bits.csv");
    write_bits_csv(bits, rec);
    if (rec.has_states()) {
      auto states = open_out(g, "states.csv");
      write_states_csv(states, rec);
    }
  }
  std::cout << "simulated " << rec.n_cycles << " cycles; max |v_x| / (delta^l v_max) =";
  for (double s : swing_ratios(rec, p)) std::cout << ' ' << s;
  std::cout << '\n';
  return kExitOk;
}

int cmd_train(const Globals& g, const TrainArgs& a) {
  const auto rec = load_record(a.record);
  const auto p = rec.config.at("params").get<ChainParameters>();
  const auto in = input_from_json(rec.config.at("input"));
  const auto* held = std::get_if<input::HeldRandom>(&in);
  if (!held) throw DomainError("train: the training record must use a held_random input");
  const auto opt = train_options(p, a);
  const auto reference = training_reference(*held, rec.n_cycles, opt.decimation);
  const auto dec = decimate_controls(rec, opt.decimation);
  const auto [bank, report] = a.lms ? train_filters_lms(dec, reference, opt, LmsOptions{})
                                    : train_filters(dec, reference, opt);
  const json jb = bank;
  auto os = std::ofstream(a.bank);
  if (!os) throw std::runtime_error("cannot write " + a.bank);
  os << jb.dump(2) << '\n';
  write_json(g, "training_report.json", report_json(report));
  std::cout << "residual mse " << report.residual_mse << " V^2 over " << report.samples_used
            << " samples, latency " << report.latency << '\n';
  return kExitOk;
}

int cmd_evaluate(const Globals& g, const std::string& record_path, const std::string& bank_path,
                 int guard_bins) {
  const auto rec = load_record(record_path);
  const auto p = rec.config.at("params").get<ChainParameters>();
  std::ifstream is(bank_path);
  if (!is) throw std::runtime_error("cannot open " + bank_path);
  const auto bank = json::parse(is).get<FilterBank>();
  const auto in = input_from_json(rec.config.at("input"));
  const auto* sine = std::get_if<input::Sine>(&in);
  if (!sine) throw DomainError("evaluate: the test record must use a sine input");
  const auto dec = decimate_controls(rec, bank.decimation);
  const auto full = estimate(dec, bank);
  const std::vector<double> u_hat(full.begin() + dec.warmup, full.end());
  const auto psd = welch_psd(u_hat, bank.nyquist_rate, p.v_max);
  const auto snr = snr_enob(psd, sine->omega / (2.0 * std::numbers::pi), p.omega_b / (2.0 * std::numbers::pi),
                            guard_bins);
  {
    auto os = open_out(g, "psd.csv");
    write_psd_csv(os, psd);
  }
  if (rec.has_states()) write_histograms(g, rec);
  write_json(g, "metrics.json", snr_json(snr));
  std::cout << "SNR " << snr.snr_db << " dB, ENOB " << snr.enob << '\n';
  return kExitOk;
}

RunPairOptions pair_options(const TrainArgs& a, const ChainParameters& p, double cycles_scale, bool noise,
                            double temperature) {
  RunPairOptions o;
  o.cycles_scale = cycles_scale;
  o.train = train_options(p, a);
  o.decimation = o.train.decimation;
  o.noise = NoiseSpec{noise, temperature};
  return o;
}

int cmd_run_pair(const Globals& g, const TrainArgs& a, const SimArgs& s) {
  const auto cfg = config_or_default(g);
  const auto& p = cfg.params;
  auto opt = pair_options(a, p, s.cycles_scale, s.noise, s.temperature);
  opt.keep_records = true;
  ComparatorModel comp;
  comp.delay = s.delay_norm / p.f_s;
  const auto r = run_pair(p, cfg.elements, comp, g.seed, opt);
  fs::create_directories(g.out);
  save_record((fs::path(g.out) / "training.rcsr").string(), *r.training);
  save_record((fs::path(g.out) / "test.rcsr").string(), *r.test);
  write_json(g, "bank.json", r.bank);
  {
    auto os = open_out(g, "psd.csv");
    write_psd_csv(os, r.psd);
  }
  write_histograms(g, *r.test);
  json m = snr_json(r.snr);
  m["test_omega"] = r.test_omega;
  m["rms_last_state"] = r.rms_last_state;
  m["swing_ratio"] = r.swing_ratio;
  m["training_swing_ratio"] = r.training_swing_ratio;
  m["training"] = report_json(r.report);
  m["seed"] = g.seed;
  write_json(g, "metrics.json", m);
  std::cout << "SNR " << r.snr.snr_db << " dB, ENOB " << r.snr.enob << ", RMS(v_xN)/v_max " << r.rms_last_state
            << '\n';
  return kExitOk;
}

int cmd_validate_surface(const Globals& g, SweepArgs a, const TrainArgs& t) {
  if (g.full) {
    a.n_values.clear();
    a.osr_values.clear();
    for (int n = 2; n <= 10; ++n) a.n_values.push_back(n);
    for (int o = 10; o <= 32; ++o) a.osr_values.push_back(o);
  }
  DesignTarget target;
  target.omega_b = 2.0 * std::numbers::pi * a.bw_hz;
  target.delta_n = a.delta_n;
  RunPairOptions opt;
  opt.cycles_scale = a.cycles_scale;
  opt.train = train_options(build_nominal_config(1, 1, 0.5, 1.0, 1.0), t);
  const auto cells = validate_surface(target, a.n_values, a.osr_values, g.seed, opt, g.jobs, g.r_value);
  auto os = open_out(g, "surface_validation.csv");
  os << "N,OSR,expected_db,simulated_db,gap\n";
  for (const auto& c : cells) {
    os << c.n_stages << ',' << c.osr << ',' << c.expected_db << ',' << c.simulated_db << ',' << c.gap() << '\n';
    if (!c.error.empty()) std::cerr << "cell (" << c.n_stages << ", " << c.osr << "): " << c.error << '\n';
  }
  std::cout << cells.size() << " cells written\n";
  return kExitOk;
}

int cmd_montecarlo(const Globals& g, const SweepArgs& a, const TrainArgs& t) {
  const auto cfg = config_or_default(g);
  MonteCarloOptions mc;
  if (a.mode == "rc")
    mc.mode = MonteCarloMode::Rc;
  else if (a.mode == "offset")
    mc.mode = MonteCarloMode::Offset;
  else
    throw DomainError("unknown mode '" + a.mode + "' (rc, offset)");
  if (a.perturb == "element")
    mc.perturb = PerturbMode::PerElement;
  else if (a.perturb == "product")
    mc.perturb = PerturbMode::PerProduct;
  else
    throw DomainError("unknown perturbation '" + a.perturb + "' (element, product)");
  mc.trials = g.full ? 100000 : a.trials;
  mc.fraction = a.fraction;
  const auto opt = pair_options(t, cfg.params, a.cycles_scale, a.noise, a.temperature);
  const auto trials = monte_carlo(cfg.params, cfg.elements, mc, g.seed, opt, g.jobs);

  std::vector<double> enobs;
  int diverged = 0, failed = 0;
  {
    auto os = open_out(g, "montecarlo.csv");
    os << "trial,enob,snr_db,diverged\n";
    for (const auto& tr : trials) {
      os << tr.index << ',' << tr.enob << ',' << tr.snr_db << ',' << (tr.diverged ? 1 : 0) << '\n';
      if (tr.diverged)
        ++diverged;
      else if (!tr.error.empty())
        ++failed;
      else
        enobs.push_back(tr.enob);
    }
  }
  json summary = {{"trials", trials.size()}, {"diverged", diverged}, {"failed", failed}};
  if (!enobs.empty()) {
    const auto [lo, hi] = std::minmax_element(enobs.begin(), enobs.end());
    double mean = 0.0;
    for (double e : enobs) mean += e;
    mean /= static_cast<double>(enobs.size());
    summary["enob_min"] = *lo;
    summary["enob_max"] = *hi;
    summary["enob_mean"] = mean;
    const int n_bins = 40;
    const double width = std::max((*hi - *lo) / n_bins, 1e-6);
    std::vector<int> counts(n_bins, 0);
    for (double e : enobs) ++counts[static_cast<std::size_t>(std::min(n_bins - 1, static_cast<int>((e - *lo) / width)))];
    auto os = open_out(g, "enob_histogram.csv");
    os << "bin_center,counts\n";
    for (int b = 0; b < n_bins; ++b) os << *lo + (b + 0.5) * width << ',' << counts[static_cast<std::size_t>(b)] << '\n';
  }
  write_json(g, "montecarlo_summary.json", summary);
  std::cout << summary.dump() << '\n';
  return kExitOk;
}

int cmd_delay_sweep(const Globals& g, const SweepArgs& a, const TrainArgs& t) {
  const auto cfg = config_or_default(g);
  const auto opt = pair_options(t, cfg.params, a.cycles_scale, a.noise, a.temperature);
  const auto points = delay_sweep(cfg.params, cfg.elements, a.points, g.seed, opt, g.jobs);
  auto os = open_out(g, "delay_sweep.csv");
  os << "delay_norm,enob,snr_db\n";
  for (const auto& d : points) os << d.delay_norm << ',' << d.enob << ',' << d.snr_db << '\n';
  std::cout << points.size() << " delay points written\n";
  return kExitOk;
}

int cmd_noise_report(const Globals& g, const NoiseArgs& a) {
  const auto cfg = config_or_default(g);
  const auto& p = cfg.params;
  const auto b = size_components(p, a.snr_db, a.temperature);
  write_json(g, "noise_report.json",
             {{"phi", b.phi},
              {"v_bar_sq", b.v_bar_sq},
              {"cap", b.cap_value},
              {"r_ladder", b.r_ladder},
              {"temperature", b.temperature},
              {"snr_db", a.snr_db}});
  std::vector<double> grid;
  for (int i = 0; i < a.points; ++i) grid.push_back(std::pow(10.0, -2.0 + 3.0 * i / std::max(1, a.points - 1)));
  auto os = open_out(g, "noise_transfer.csv");
  write_noise_transfer_csv(os, p, b.cap_value, grid);
  std::cout << "Phi " << b.phi << ", C " << b.cap_value << " F, R ladder";
  for (double r : b.r_ladder) std::cout << ' ' << r;
  std::cout << '\n';
  return kExitOk;
}

void add_train_flags(CLI::App* c, TrainArgs& t, bool with_decimation = true) {
  c->add_option("--taps", t.taps, "FIR taps per channel")->capture_default_str();
  c->add_option("--latency", t.latency, "reference delay in output samples")->capture_default_str();
  c->add_flag("--auto-latency", t.auto_latency, "scan latency 0..taps-1");
  c->add_option("--ridge", t.ridge, "ridge regularization")->capture_default_str();
  if (!with_decimation) return;
  c->add_option("--decimation", t.decimation, "decimation factor (0: OSR/2)")->capture_default_str();
  c->add_option("--prefilter", t.prefilter, "none, boxcar or lowpass")->capture_default_str();
}

void add_sim_flags(CLI::App* c, SimArgs& s) {
  c->add_option("--cycles-scale", s.cycles_scale, "record length in units of 2^12 OSR cycles")->capture_default_str();
  c->add_option("--substeps", s.substeps, "substeps per clock cycle")->capture_default_str();
  c->add_option("--delay-norm", s.delay_norm, "loop delay times f_s")->capture_default_str();
  c->add_flag("--noise", s.noise, "inject thermal noise");
  c->add_option("--temperature", s.temperature, "noise temperature, K")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RC-chain converter design, simulation and reconstruction"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "config JSON ({params, elements} or bare params)");
  app.add_option("--seed", g.seed, "master seed")->capture_default_str();
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--jobs", g.jobs, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_flag("--full", g.full, "full-size trial counts and grids");
  app.add_option("--r-value", g.r_value, "series resistance for nominal elements, ohm")->capture_default_str();

  DesignArgs da;
  auto* design = app.add_subcommand("design", "search the (N, OSR) grid for a target");
  design->add_option("--enob", da.enob, "target ENOB");
  design->add_option("--snr-db", da.snr_db, "target SNR, dB (overrides --enob)");
  design->add_option("--bw-hz", da.bw_hz, "signal bandwidth, Hz")->capture_default_str();
  design->add_option("--delta-n", da.delta_n, "delta^N")->capture_default_str();
  design->add_option("--n-min", da.n_min)->capture_default_str();
  design->add_option("--n-max", da.n_max)->capture_default_str();
  design->add_option("--osr-min", da.osr_min)->capture_default_str();
  design->add_option("--osr-max", da.osr_max)->capture_default_str();
  design->add_option("--v-max", da.v_max)->capture_default_str();
  design->add_option("--epsilon", da.epsilon, "expected-SNR calibration constant")->capture_default_str();

  SimArgs sa;
  auto* sim = app.add_subcommand("simulate", "run one transient simulation");
  sim->add_option("--input", sa.input, "sine, held or zero")->capture_default_str();
  sim->add_option("--amplitude", sa.amplitude, "input amplitude / v_max")->capture_default_str();
  sim->add_option("--freq-norm", sa.freq_norm, "sine frequency / omega_B")->capture_default_str();
  sim->add_option("--hold", sa.hold, "held input: cycles per level (0: OSR)")->capture_default_str();
  sim->add_option("--input-seed", sa.input_seed, "held input seed (0: derived from --seed)");
  sim->add_flag("--no-states", sa.no_states, "skip per-edge state samples");
  sim->add_flag("--csv", sa.csv, "also write bits.csv and states.csv");
  add_sim_flags(sim, sa);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "fit the filter bank to a held-random record");
  train->add_option("--record", ta.record, "training record")->capture_default_str();
  train->add_option("--bank", ta.bank, "output bank JSON")->capture_default_str();
  train->add_flag("--lms", ta.lms, "use the normalized LMS trainer");
  add_train_flags(train, ta);

  std::string eval_record = "test.rcsr", eval_bank = "bank.json";
  int guard_bins = 2;
  auto* evaluate = app.add_subcommand("evaluate", "reconstruct a sine record and measure SNR");
  evaluate->add_option("--record", eval_record)->capture_default_str();
  evaluate->add_option("--bank", eval_bank)->capture_default_str();
  evaluate->add_option("--guard-bins", guard_bins)->capture_default_str();

  TrainArgs pair_train;
  SimArgs pair_sim;
  auto* pair = app.add_subcommand("run-pair", "train on held-random input, test on a sine");
  add_train_flags(pair, pair_train);
  add_sim_flags(pair, pair_sim);

  SweepArgs sw;
  TrainArgs sweep_train;
  auto* surface = app.add_subcommand("validate-surface", "expected vs simulated SNR over a grid");
  surface->add_option("--n-values", sw.n_values)->delimiter(',')->capture_default_str();
  surface->add_option("--osr-values", sw.osr_values)->delimiter(',')->capture_default_str();
  surface->add_option("--bw-hz", sw.bw_hz)->capture_default_str();
  surface->add_option("--delta-n", sw.delta_n)->capture_default_str();
  surface->add_option("--cycles-scale", sw.cycles_scale)->capture_default_str();
  add_train_flags(surface, sweep_train, false);

  auto* mc = app.add_subcommand("montecarlo", "ENOB spread under element or offset variation");
  mc->add_option("--mode", sw.mode, "rc or offset")->capture_default_str();
  mc->add_option("--trials", sw.trials)->capture_default_str();
  mc->add_option("--fraction", sw.fraction)->capture_default_str();
  mc->add_option("--perturb", sw.perturb, "element or product")->capture_default_str();
  mc->add_option("--cycles-scale", sw.cycles_scale)->capture_default_str();
  mc->add_flag("--noise", sw.noise);
  add_train_flags(mc, sweep_train);

  auto* delay = app.add_subcommand("delay-sweep", "ENOB against comparator loop delay");
  delay->add_option("--points", sw.points)->capture_default_str();
  delay->add_option("--cycles-scale", sw.cycles_scale)->capture_default_str();
  delay->add_flag("--noise", sw.noise);
  add_train_flags(delay, sweep_train);

  NoiseArgs na;
  auto* noise = app.add_subcommand("noise-report", "thermal-noise factor and component sizing");
  noise->add_option("--snr-db", na.snr_db, "SNR budget, dB")->capture_default_str();
  noise->add_option("--temperature", na.temperature, "K")->capture_default_str();
  noise->add_option("--points", na.points, "frequency points in noise_transfer.csv")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*design) return cmd_design(g, da);
    if (*sim) return cmd_simulate(g, sa);
    if (*train) return cmd_train(g, ta);
    if (*evaluate) return cmd_evaluate(g, eval_record, eval_bank, guard_bins);
    if (*pair) return cmd_run_pair(g, pair_train, pair_sim);
    if (*surface) return cmd_validate_surface(g, sw, sweep_train);
    if (*mc) return cmd_montecarlo(g, sw, sweep_train);
    if (*delay) return cmd_delay_sweep(g, sw, sweep_train);
    if (*noise) return cmd_noise_report(g, na);
  } catch (const InfeasibleError& e) {
    std::cerr << e.what() << '\n';
    return kExitFailed;
  } catch (const DivergedError& e) {
    std::cerr << e.what() << '\n';
    return kExitFailed;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailed;
  }
  return kExitUsage;
}
