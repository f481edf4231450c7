// uqsim: experiment runner and codec front end.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "uq/errors.hpp"
#include "uq/harness.hpp"
#include "uq/rng.hpp"
#include "uq/two_stage.hpp"
#include "uq/vq.hpp"

namespace {

constexpr std::uint64_t kFitSeed = 0xF17;

uq::ParamVector parse_theta(const std::string& s) {
  uq::ParamVector th;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != part.size() || part.empty()) throw uq::ConfigError("--theta", "bad number '" + part + "'");
    th.coords.push_back(v);
  }
  if (th.coords.empty()) throw uq::ConfigError("--theta", "empty parameter");
  return th;
}

std::vector<uq::RateFit> fits_per_theta(const std::vector<uq::TrialRecord>& records, std::uint64_t seed,
                                        std::ostream& log) {
  std::map<std::size_t, std::vector<uq::TrialRecord>> by_theta;
  for (const auto& r : records) by_theta[r.theta_index].push_back(r);
  std::vector<uq::RateFit> fits;
  for (const auto& [ti, recs] : by_theta) {
    for (auto m : {uq::Metric::dv_error, uq::Metric::redundancy}) {
      try {
        fits.push_back(uq::fit_rate_exponent(recs, m, seed));
      } catch (const uq::AnalysisError& e) {
        log << "fit skipped for theta " << uq::to_string(recs.front().theta) << ": " << e.what() << "\n";
      }
    }
  }
  return fits;
}

uq::TwoStageCode code_from_config(const uq::ExperimentConfig& cfg, std::size_t n) {
  const auto spec = uq::DistortionSpec::for_support(cfg.p, cfg.family->support());
  auto quad = std::make_shared<const uq::QuadratureGrid>(cfg.family->support(), cfg.quadrature_points);
  return uq::TwoStageCode::build(cfg.family, n, cfg.rate, spec, cfg.design, cfg.estimator, quad);
}

int cmd_run(const std::string& path, unsigned threads, bool quiet) {
  auto cfg = uq::load_config(path);
  if (threads) cfg.threads = threads;
  const auto result = uq::run_experiment(cfg);
  std::ostringstream log;
  const auto fits = fits_per_theta(result.records, kFitSeed, log);
  uq::emit_outputs(result, fits, cfg.output);
  if (!quiet) std::cout << uq::summary_text(result, fits) << log.str();
  return result.all_passed() ? 0 : 1;
}

int cmd_fit(const std::string& csv, const std::string& metric, std::uint64_t seed) {
  const auto records = uq::load_records(csv);
  const auto m = uq::parse_metric(metric);
  std::map<std::size_t, std::vector<uq::TrialRecord>> by_theta;
  for (const auto& r : records) by_theta[r.theta_index].push_back(r);
  if (by_theta.empty()) throw uq::AnalysisError("no records in " + csv);
  for (const auto& [ti, recs] : by_theta) {
    const auto f = uq::fit_rate_exponent(recs, m, seed);
    std::printf("theta %s  slope %.6f  90%% CI [%.6f, %.6f]  intercept %.6f  R^2 %.6f  n values %zu\n",
                uq::to_string(recs.front().theta).c_str(), f.slope, f.ci_lo, f.ci_hi, f.intercept, f.r2,
                f.n_values);
  }
  return 0;
}

int cmd_design(const std::string& family_cfg, const std::string& theta, std::size_t n, double rate, double p,
               std::uint64_t seed, std::size_t training, const std::string& out) {
  std::ifstream in(family_cfg);
  if (!in) throw uq::IoError("cannot open " + family_cfg);
  std::stringstream ss;
  ss << in.rdbuf();
  const auto family = uq::parse_family(ss.str());
  const uq::SourceModel model(family, parse_theta(theta));
  const auto spec = uq::DistortionSpec::for_support(p, family->support());
  uq::LloydBudget budget;
  budget.training_blocks = training;
  uq::LloydTrace trace;
  const auto cb = uq::lloyd_design(model, n, rate, spec, seed, budget, &trace);
  uq::write_codebook(out, cb);
  std::printf("wrote %zu codewords of length %zu to %s (%u iterations, final distortion %.6g)\n", cb.size(), cb.n,
              out.c_str(), cb.provenance.iterations, trace.history.empty() ? 0.0 : trace.history.back());
  return 0;
}

int cmd_encode(const std::string& config, const std::string& theta, std::size_t n, std::size_t blocks,
               std::uint64_t seed, const std::string& out) {
  const auto cfg = uq::load_config(config);
  const auto code = code_from_config(cfg, n);
  const uq::SourceModel model(cfg.family, parse_theta(theta));
  const auto stream = uq::sample(model, seed, blocks * n);
  const auto encoded = uq::encode_stream(code, stream);
  const auto bytes = uq::pack_stream(uq::layout_of(code.bank()), encoded);
  uq::write_file_bytes(out, bytes);
  std::printf("encoded %zu blocks of %zu letters into %zu bytes (%.5f bits/letter)\n", blocks, n, bytes.size(),
              uq::rate_per_letter(code));
  return 0;
}

int cmd_decode(const std::string& config, std::size_t n, const std::string& in, const std::string& out) {
  const auto cfg = uq::load_config(config);
  const auto code = code_from_config(cfg, n);
  const auto bytes = uq::read_file_bytes(in);
  const auto blocks = uq::unpack_stream(uq::layout_of(code.bank()), bytes);
  const auto decoded = uq::decode_stream(code, blocks);
  std::ostringstream o;
  o << "block,theta_hat,reproduction\n";
  for (std::size_t t = 0; t < decoded.size(); ++t) {
    o << t << "," << uq::to_string(decoded[t].theta_hat) << ",";
    for (std::size_t i = 0; i < decoded[t].reproduction.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", decoded[t].reproduction[i]);
      o << (i ? ";" : "") << buf;
    }
    o << "\n";
  }
  if (out.empty()) {
    std::cout << o.str();
  } else {
    const auto s = o.str();
    uq::write_file_bytes(out, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uqsim - two-stage universal lossy coding simulator"};
  app.require_subcommand(1);

  std::string run_cfg;
  unsigned threads = 0;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "run an experiment config; exit 0 only if every invariant holds");
  run->add_option("config", run_cfg, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--threads", threads, "worker threads (default: config, then hardware)");
  run->add_flag("--quiet", quiet, "do not print the summary");

  std::string fit_csv, fit_metric = "dv";
  std::uint64_t fit_seed = kFitSeed;
  auto* fit = app.add_subcommand("fit", "fit the rate exponent of a records CSV");
  fit->add_option("csv", fit_csv, "records CSV written by run")->required()->check(CLI::ExistingFile);
  fit->add_option("--metric", fit_metric, "dv or red")->check(CLI::IsMember({"dv", "red"}));
  fit->add_option("--seed", fit_seed, "bootstrap seed");

  std::string design_family, design_theta, design_out = "codebook.uqvq";
  std::size_t design_n = 1, design_training = 0;
  double design_rate = 1.0, design_p = 2.0;
  std::uint64_t design_seed = 1;
  auto* design = app.add_subcommand("design", "Lloyd-design a codebook for one source");
  design->add_option("--family", design_family, "config file holding a family")->required()->check(CLI::ExistingFile);
  design->add_option("--theta", design_theta, "comma-separated parameter")->required();
  design->add_option("--n", design_n, "block length")->required();
  design->add_option("--rate", design_rate, "bits per letter")->required();
  design->add_option("--p", design_p, "distortion exponent (1 or 2)");
  design->add_option("--seed", design_seed, "training seed");
  design->add_option("--training", design_training, "training blocks (default 200 per codeword)");
  design->add_option("--out", design_out, "output codebook file");

  auto* codec = app.add_subcommand("codec", "encode or decode wire-format streams");
  codec->require_subcommand(1);
  std::string enc_cfg, enc_theta, enc_out = "stream.uq2s";
  std::size_t enc_n = 64, enc_blocks = 16;
  std::uint64_t enc_seed = 1;
  auto* enc = codec->add_subcommand("encode", "encode a seeded source stream");
  enc->add_option("--config", enc_cfg, "experiment config supplying family, rate and design")
      ->required()
      ->check(CLI::ExistingFile);
  enc->add_option("--theta", enc_theta, "comma-separated source parameter")->required();
  enc->add_option("--n", enc_n, "block length");
  enc->add_option("--blocks", enc_blocks, "number of blocks");
  enc->add_option("--seed", enc_seed, "source seed");
  enc->add_option("--out", enc_out, "output stream file");

  std::string dec_cfg, dec_in, dec_out;
  std::size_t dec_n = 64;
  auto* dec = codec->add_subcommand("decode", "decode a stream to reproductions (CSV)");
  dec->add_option("--config", dec_cfg, "experiment config used to encode")->required()->check(CLI::ExistingFile);
  dec->add_option("--in", dec_in, "stream file")->required()->check(CLI::ExistingFile);
  dec->add_option("--n", dec_n, "block length");
  dec->add_option("--out", dec_out, "output CSV (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_cfg, threads, quiet);
    if (*fit) return cmd_fit(fit_csv, fit_metric, fit_seed);
    if (*design)
      return cmd_design(design_family, design_theta, design_n, design_rate, design_p, design_seed, design_training,
                        design_out);
    if (*enc) return cmd_encode(enc_cfg, enc_theta, enc_n, enc_blocks, enc_seed, enc_out);
    if (*dec) return cmd_decode(dec_cfg, dec_n, dec_in, dec_out);
  } catch (const uq::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
