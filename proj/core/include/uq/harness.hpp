#pragma once

// Seeded experiment runner, rate-law fitting and output emission.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uq/estimator.hpp"
#include "uq/sources.hpp"
#include "uq/two_stage.hpp"

namespace uq {

enum class Mode { two_stage, nn_first_stage, matched_oracle };

std::string to_string(Mode mode);

/// Reference-letter extension: every reproduction passes through robust_reencode.
struct UnboundedConfig {
  bool enabled = false;
  double delta = 0.1;
  double M = 1.0;
  double ref_letter = 0.0;
};

struct OutputPaths {
  std::filesystem::path csv;
  std::filesystem::path summary;
  std::filesystem::path plot;
};

struct ExperimentConfig {
  FamilyPtr family;
  std::string family_description;
  std::vector<ParamVector> thetas;
  std::vector<std::size_t> ns;
  double rate = 1.0;
  double p = 2.0;
  std::size_t trials = 1;
  std::size_t blocks = 16;
  std::uint64_t seed = 0;
  Mode mode = Mode::two_stage;
  EstimatorConfig estimator;
  CodeDesignConfig design;
  UnboundedConfig unbounded;
  OutputPaths output;
  std::size_t quadrature_points = QuadratureGrid::kDefaultPoints;
  unsigned threads = 0;  ///< 0: one per hardware thread
};

/// Parses a JSON experiment config. Relative output paths resolve against
/// base_dir. ConfigError names the offending field.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
/// Validates field ranges (n >= 4 and a power of two, trials >= 1, ...).
void validate_config(const ExperimentConfig& config);
/// The "family" object of a config file.
FamilyPtr parse_family(const std::string& json_text);

struct TrialRecord {
  ParamVector theta;
  std::size_t n = 0;
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  double dv_mean = 0.0;  ///< d_V(P_theta, P_theta_hat) over blocks t >= 2
  double dv_max = 0.0;
  double distortion_twostage = 0.0;
  double distortion_matched = 0.0;
  double redundancy = 0.0;
  double redundancy_se = 0.0;
  double rate_total = 0.0;
  unsigned header_bits = 0;
  std::size_t bound_violations = 0;
  // Not serialized.
  std::size_t theta_index = 0;
  std::size_t boundary_blocks = 0;
  std::size_t argmin_violations = 0;
  bool roundtrip_ok = true;
  double wall_seconds = 0.0;
};

inline constexpr std::size_t kCsvColumns = 13;
/// theta,n,trial,seed,dv_mean,dv_max,distortion_twostage,distortion_matched,
/// redundancy,redundancy_se,rate_total,header_bits,bound_violations
std::string csv_header();

/// Per-(theta, n) aggregate.
struct CellSummary {
  std::size_t theta_index = 0;
  ParamVector theta;
  std::size_t n = 0;
  std::size_t trials = 0;
  double dv_median = 0.0, dv_q25 = 0.0, dv_q75 = 0.0;
  double red_median = 0.0, red_q25 = 0.0, red_q75 = 0.0;
  double red_mean = 0.0;
  double red_pooled_se = 0.0;
  unsigned header_bits = 0;
  double header_bound = 0.0;
  std::size_t cells = 0;
  double rate_total = 0.0;
  double grid_slack = 0.0;     ///< 3 x nearest-candidate d_V
  double lipschitz = 0.0;      ///< bound used for the identification chain
  std::size_t boundary_blocks = 0;
  std::size_t bound_violations = 0;
  double wall_seconds = 0.0;
};

struct InvariantResult {
  std::string name;
  bool passed = true;
  std::string detail;
};

struct ExperimentResult {
  std::vector<TrialRecord> records;  ///< sorted by (theta, n, seed)
  std::vector<CellSummary> cells;
  std::vector<InvariantResult> invariants;
  double wall_seconds = 0.0;

  bool all_passed() const;
};

/// Runs every (theta, n, trial): T seeded blocks, encode and decode per mode,
/// metrics and in-run invariants. Deterministic in config.seed regardless of
/// the thread count.
ExperimentResult run_experiment(const ExperimentConfig& config);

enum class Metric { dv_error, redundancy };
Metric parse_metric(const std::string& name);

struct RateFit {
  Metric metric = Metric::dv_error;
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double ci_lo = 0.0;  ///< bootstrap 90% interval for the slope
  double ci_hi = 0.0;
  std::size_t n_values = 0;
};

/// Least squares of log(median metric) on log n over per-n medians, with a
/// seeded 200-resample bootstrap (trials resampled within each n).
/// AnalysisError with fewer than 4 n values, fewer than min_trials trials
/// for some n, or a nonpositive median.
RateFit fit_rate_exponent(std::span<const TrialRecord> records, Metric metric, std::uint64_t seed = 0xF17,
                          std::size_t min_trials = 20);

std::string records_to_csv(std::span<const TrialRecord> records);
/// FormatError on a malformed header or row.
std::vector<TrialRecord> parse_records_csv(const std::string& text);
std::vector<TrialRecord> load_records(const std::filesystem::path& path);

std::string summary_text(const ExperimentResult& result, std::span<const RateFit> fits);
/// n, median and quartiles per (metric, theta, n).
std::string plot_csv(const ExperimentResult& result);

/// Writes whichever of csv / summary / plot are set. IoError if unwritable.
void emit_outputs(const ExperimentResult& result, std::span<const RateFit> fits, const OutputPaths& paths);

}  // namespace uq
