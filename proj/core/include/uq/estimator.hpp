#pragma once

// Minimum-distance (Yatracos) density estimation over a parametric family,
// plus brute-force VC machinery used to check the Yatracos class.

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "uq/errors.hpp"
#include "uq/sources.hpp"

namespace uq {

/// A_{theta,eta} = {x : p_theta(x) > p_eta(x)}.
///
/// Membership is decided through the equivalent linear discriminant
/// (theta - eta) . phi(x) > offset, where offset = g(theta) - g(eta) for
/// exponential families and 0 for mixtures. A relative tolerance of 1e-12
/// treats rounding-level differences as ties, so regions where the two
/// densities coincide are never members.
class YatracosSet {
 public:
  YatracosSet(FamilyPtr family, ParamVector theta, ParamVector eta);

  const ParamVector& theta() const noexcept { return theta_; }
  const ParamVector& eta() const noexcept { return eta_; }
  const SourceFamily& family() const noexcept { return *family_; }
  std::span<const double> direction() const noexcept { return direction_; }
  double offset() const noexcept { return offset_; }

  bool contains(double x) const;
  /// Same test with precomputed features phi(x).
  bool contains_features(std::span<const double> phi, bool base_positive) const;

 private:
  FamilyPtr family_;
  ParamVector theta_;
  ParamVector eta_;
  std::vector<double> direction_;
  double offset_ = 0.0;
};

bool set_member(const YatracosSet& set, double x);

/// Z^n with its empirical distribution.
class EmpiricalSample {
 public:
  /// Throws DomainError if empty or if a value leaves the support.
  EmpiricalSample(std::vector<double> values, const Support& support);

  std::size_t size() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }

 private:
  std::vector<double> values_;
};

/// Fraction of sample points inside the set.
double empirical_measure(const EmpiricalSample& sample, const YatracosSet& set);

/// Indicator-weighted trapezoid sum of the model density over the set.
double model_measure(const SourceModel& model, const YatracosSet& set, const QuadratureGrid& quad);

struct EstimatorConfig {
  std::size_t pair_cap = 4096;
  std::uint64_t subsample_seed = 0x59A7'7C05ull;
  /// Finest candidate spacing per axis; the mesh step is max(1/ceil(sqrt n), min_step).
  double min_step = 1.0 / 64.0;
};

/// Finite candidate set and the Yatracos pairs searched over.
struct CandidateGrid {
  std::vector<ParamVector> points;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  std::size_t pair_cap = 0;
  double step = 0.0;
};

/// Mesh over Theta with step max(1/ceil(sqrt n), min_step): simplex lattice
/// points for mixtures, axis lattice (hi included) for boxes. Ordered pairs
/// are subsampled without replacement to pair_cap with a fixed seed.
CandidateGrid make_candidate_grid(const SourceFamily& family, std::size_t n, const EstimatorConfig& config = {});

/// Candidate grid over explicit points (all ordered pairs, subsampled to pair_cap).
CandidateGrid make_candidate_grid(std::vector<ParamVector> points, std::size_t pair_cap, std::uint64_t seed);

/// max over grid pairs of |P_eta(A) - P_{Z^n}(A)|, evaluated directly from
/// set_member. Reference implementation: O(|pairs| (N + n)).
double delta_stat(const SourceFamily& family, const ParamVector& eta, const EmpiricalSample& sample,
                  const CandidateGrid& grid, const QuadratureGrid& quad);

/// Grid point minimizing delta_stat; ties go to the lowest index.
ParamVector min_distance_estimate(const SourceFamily& family, const EmpiricalSample& sample,
                                  const CandidateGrid& grid, const QuadratureGrid& quad);

/// Precomputed minimum-distance estimator for one (family, grid, quadrature).
///
/// Pairs defining the same set (positively proportional discriminants) are
/// merged, each set is stored as index runs on the quadrature grid, and the
/// model measures P_c(A) of every candidate are tabulated when the table
/// fits in 2^24 entries (otherwise recomputed per call from prefix sums).
/// Results equal delta_stat / min_distance_estimate up to summation order.
class MinDistanceEstimator {
 public:
  struct Result {
    std::size_t index = 0;
    ParamVector theta;
    double delta = 0.0;
  };

  MinDistanceEstimator(FamilyPtr family, CandidateGrid grid, std::shared_ptr<const QuadratureGrid> quad);

  Result estimate(std::span<const double> sample) const;
  double delta(const ParamVector& eta, std::span<const double> sample) const;
  /// Model measures of every distinct set under eta.
  std::vector<double> model_measures(const ParamVector& eta) const;
  /// Empirical measures of every distinct set.
  std::vector<double> empirical_measures(std::span<const double> sample) const;

  const CandidateGrid& grid() const noexcept { return grid_; }
  const SourceFamily& family() const noexcept { return *family_; }
  const FamilyPtr& family_ptr() const noexcept { return family_; }
  const QuadratureGrid& quadrature() const noexcept { return *quad_; }
  std::size_t distinct_sets() const noexcept { return sets_.size(); }

 private:
  struct SetData {
    std::vector<double> direction;
    double offset;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> runs;  // [begin, end) on the quadrature grid
  };

  std::vector<double> measures_from_density(std::span<const double> weighted_density) const;

  FamilyPtr family_;
  CandidateGrid grid_;
  std::shared_ptr<const QuadratureGrid> quad_;
  std::vector<SetData> sets_;
  std::vector<double> table_;  // candidates x sets, row-major; empty when too large
};

/// d_V(P_theta, P_c) for the candidate c nearest in variational distance,
/// searched among the 16 Euclidean-nearest candidates (an upper bound on the
/// true minimum).
double nearest_candidate_distance(const SourceFamily& family, const ParamVector& theta, const CandidateGrid& grid,
                                  const QuadratureGrid& quad);

/// max over a seeded mesh of Theta of nearest_candidate_distance.
double grid_covering_radius(const SourceFamily& family, const CandidateGrid& grid, const QuadratureGrid& quad,
                            std::size_t mesh_points = 256, std::uint64_t seed = 7);

/// Right-hand side of d_V(P_theta, P_theta*) <= 2 Delta_theta + 3/(2n) + slack
/// for the finite-grid estimator. With c the candidate nearest to theta,
/// d_V(theta*, c) <= 2 Delta_c <= 2 Delta_theta + 2 d_V(theta, c), so the
/// slack is 3 d_V(theta, c).
struct MinDistanceBound {
  double delta_theta = 0.0;
  double slack = 0.0;
  double rhs = 0.0;
};

MinDistanceBound minimum_distance_bound(const MinDistanceEstimator& estimator, const ParamVector& theta,
                                        std::span<const double> sample, double nearest_distance);

// --- VC machinery ----------------------------------------------------------------

template <class S>
concept MembershipSet = requires(const S& s, double x) {
  { s.contains(x) } -> std::convertible_to<bool>;
};

inline constexpr std::size_t kShatterPointCap = 20;

/// Number of distinct membership patterns the sets induce on the points.
/// An empty class yields 0.
template <MembershipSet S>
std::size_t shatter_coefficient(std::span<const S> sets, std::span<const double> points) {
  if (points.size() > kShatterPointCap)
    throw CapacityError("shatter_coefficient is capped at " + std::to_string(kShatterPointCap) + " points");
  if (sets.empty()) return 0;
  std::vector<bool> seen(std::size_t{1} << points.size(), false);
  std::size_t count = 0;
  for (const auto& s : sets) {
    std::size_t pattern = 0;
    for (std::size_t i = 0; i < points.size(); ++i)
      if (s.contains(points[i])) pattern |= std::size_t{1} << i;
    if (!seen[pattern]) {
      seen[pattern] = true;
      ++count;
    }
  }
  return count;
}

struct VcCheckResult {
  bool passed = true;
  std::size_t trials = 0;
  std::size_t max_patterns = 0;  ///< largest shatter count seen on any point set
  std::optional<std::vector<double>> counterexample;
};

/// Draws `trials` seeded point sets of size points_per_trial in the support
/// and checks that none is shattered by a dense random subfamily of Yatracos
/// sets (`subfamily_size` random (theta, eta) pairs).
VcCheckResult vc_upper_check(const FamilyPtr& family, std::size_t trials, std::size_t points_per_trial,
                             std::uint64_t seed, std::size_t subfamily_size = 2048);

}  // namespace uq
