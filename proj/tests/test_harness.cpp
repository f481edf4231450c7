#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "uq/errors.hpp"
#include "uq/harness.hpp"

using namespace uq;
using nlohmann::json;

namespace {

json base_config() {
  return json::parse(R"({
    "family": {
      "type": "mixture",
      "support": [0.0, 1.5],
      "components": [
        {"kind": "uniform", "a": 0.0, "b": 1.0},
        {"kind": "uniform", "a": 0.5, "b": 1.5}
      ]
    },
    "thetas": [[0.7, 0.3]],
    "n": [16],
    "rate": 1.0,
    "p": 2,
    "trials": 1,
    "blocks": 4,
    "seed": 5
  })");
}

std::vector<TrialRecord> planted(double (*law)(double), std::size_t trials = 20) {
  std::vector<TrialRecord> out;
  for (std::size_t n = 64; n <= 4096; n *= 2)
    for (std::size_t t = 0; t < trials; ++t) {
      TrialRecord r;
      r.theta = {0.7, 0.3};
      r.n = n;
      r.trial = t;
      r.seed = 1000 * n + t;
      r.dv_mean = r.dv_max = law(static_cast<double>(n));
      r.redundancy = r.dv_mean;
      out.push_back(r);
    }
  return out;
}

std::string field_of(const json& j) {
  try {
    validate_config(parse_config(j.dump()));
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

}  // namespace

TEST_CASE("single trial run") {
  const auto cfg = parse_config(base_config().dump());
  const auto res = run_experiment(cfg);
  REQUIRE(res.records.size() == 1);
  const auto& r = res.records[0];
  CHECK(r.n == 16);
  CHECK(r.roundtrip_ok);
  CHECK(r.dv_mean >= 0.0);
  CHECK(r.dv_mean <= 1.0);
  CHECK(r.rate_total == doctest::Approx(1.0 + static_cast<double>(r.header_bits) / 16));
  CHECK(res.all_passed());
}

TEST_CASE("matched oracle has zero redundancy") {
  auto j = base_config();
  j["mode"] = "matched_oracle";
  j["trials"] = 3;
  const auto res = run_experiment(parse_config(j.dump()));
  for (const auto& r : res.records) {
    CHECK(r.redundancy == 0.0);
    CHECK(r.distortion_twostage == r.distortion_matched);
  }
}

TEST_CASE("runs are deterministic across thread counts") {
  auto j = base_config();
  j["n"] = {16, 32};
  j["trials"] = 4;
  auto cfg = parse_config(j.dump());
  cfg.threads = 1;
  const auto a = records_to_csv(run_experiment(cfg).records);
  cfg.threads = 3;
  const auto b = records_to_csv(run_experiment(cfg).records);
  CHECK(a == b);
}

TEST_CASE("other modes") {
  auto j = base_config();
  j["mode"] = "nn_first_stage";
  j["trials"] = 2;
  CHECK(run_experiment(parse_config(j.dump())).all_passed());

  auto u = base_config();
  u["unbounded"] = {{"enabled", true}, {"delta", 0.2}, {"M", 0.05}, {"ref_letter", 0.75}};
  const auto res = run_experiment(parse_config(u.dump()));
  CHECK(res.records.size() == 1);
  CHECK(res.records[0].roundtrip_ok);
}

TEST_CASE("rate exponent fits") {
  const auto sqrt_law = planted([](double n) { return 0.8 / std::sqrt(n); });
  const auto f = fit_rate_exponent(sqrt_law, Metric::dv_error);
  CHECK(f.slope == doctest::Approx(-0.5).epsilon(1e-6));
  CHECK(f.r2 == doctest::Approx(1.0));
  CHECK(f.n_values == 7);
  CHECK(f.ci_lo <= f.slope + 1e-9);
  CHECK(f.ci_hi >= f.slope - 1e-9);

  const auto log_law = planted([](double n) { return 0.8 * std::sqrt(std::log(n) / n); });
  const double s = fit_rate_exponent(log_law, Metric::redundancy).slope;
  CHECK(s > -0.5);
  CHECK(s < -0.35);

  const auto flat = planted([](double) { return 0.3; });
  CHECK(fit_rate_exponent(flat, Metric::dv_error).slope == doctest::Approx(0.0).epsilon(1e-9));

  std::vector<TrialRecord> few;
  for (const auto& r : sqrt_law)
    if (r.n <= 256) few.push_back(r);
  CHECK_THROWS_AS(fit_rate_exponent(few, Metric::dv_error), AnalysisError);
  CHECK_THROWS_AS(fit_rate_exponent(planted([](double n) { return 1 / n; }, 5), Metric::dv_error), AnalysisError);
  CHECK_THROWS_AS(fit_rate_exponent(planted([](double) { return 0.0; }), Metric::dv_error), AnalysisError);

  CHECK(parse_metric("dv") == Metric::dv_error);
  CHECK(parse_metric("red") == Metric::redundancy);
  CHECK_THROWS(parse_metric("rate"));
}

TEST_CASE("CSV output and reload") {
  CHECK(records_to_csv({}) == csv_header() + "\n");
  std::stringstream hdr(csv_header());
  std::string col;
  std::size_t cols = 0;
  while (std::getline(hdr, col, ',')) ++cols;
  CHECK(cols == kCsvColumns);

  auto recs = planted([](double n) { return 0.8 * std::sqrt(std::log(n) / n); });
  for (std::size_t i = 0; i < recs.size(); ++i) recs[i].dv_mean *= 1.0 + 0.01 * std::sin(i * 1.7);
  const auto text = records_to_csv(recs);
  const auto back = parse_records_csv(text);
  REQUIRE(back.size() == recs.size());
  CHECK(records_to_csv(back) == text);
  const auto f1 = fit_rate_exponent(recs, Metric::dv_error);
  const auto f2 = fit_rate_exponent(back, Metric::dv_error);
  CHECK(f1.slope == f2.slope);
  CHECK(f1.ci_lo == f2.ci_lo);
  CHECK(f1.ci_hi == f2.ci_hi);

  CHECK_THROWS_AS(parse_records_csv("a,b\n"), FormatError);
  CHECK_THROWS_AS(parse_records_csv(csv_header() + "\n1,2,3\n"), FormatError);
}

TEST_CASE("emit outputs") {
  const auto dir = std::filesystem::temp_directory_path() / "uq_test_emit";
  std::filesystem::remove_all(dir);
  auto j = base_config();
  j["output"] = {{"csv", "out/records.csv"}, {"summary", "out/summary.txt"}, {"plot", "out/plot.csv"}};
  const auto cfg = parse_config(j.dump(), dir);
  const auto res = run_experiment(cfg);
  emit_outputs(res, {}, cfg.output);
  CHECK(std::filesystem::exists(dir / "out/records.csv"));
  CHECK(std::filesystem::exists(dir / "out/summary.txt"));
  CHECK(std::filesystem::exists(dir / "out/plot.csv"));
  CHECK(load_records(dir / "out/records.csv").size() == 1);
  std::filesystem::remove_all(dir);

  OutputPaths bad;
  bad.csv = "/proc/no/such/dir/records.csv";
  CHECK_THROWS_AS(emit_outputs(res, {}, bad), IoError);
}

TEST_CASE("config errors name the field") {
  auto j = base_config();
  j["n"] = {16, 3};
  CHECK(field_of(j) == "n[1]");
  j = base_config();
  j["n"] = {24};
  CHECK(field_of(j) == "n[0]");
  j = base_config();
  j["p"] = 3;
  CHECK(field_of(j) == "p");
  j = base_config();
  j["trials"] = 0;
  CHECK(field_of(j) == "trials");
  j = base_config();
  j["mode"] = "fast";
  CHECK(field_of(j) == "mode");
  j = base_config();
  j["vq"] = {{"dim", 2}, {"design", "density"}};
  CHECK(field_of(j) == "vq.design");
  j = base_config();
  j["unbounded"] = {{"enabled", true}, {"delta", 1.5}, {"M", 1.0}, {"ref_letter", 0.5}};
  CHECK(field_of(j) == "unbounded.delta");
  j["unbounded"].erase("M");
  CHECK(field_of(j) == "unbounded.M");
  j = base_config();
  j.erase("seed");
  CHECK(field_of(j) == "seed");
  j = base_config();
  j["thetas"] = {{0.8, 0.8}};
  CHECK(field_of(j).rfind("thetas", 0) == 0);
  j = base_config();
  j["family"]["components"][1]["kind"] = "cauchy";
  CHECK(field_of(j).rfind("family", 0) == 0);
  CHECK(field_of(base_config()).empty());
  CHECK_THROWS_AS(parse_config("{ not json"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), Error);
}
