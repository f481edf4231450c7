#pragma once

// Parametric i.i.d. source families on a compact interval: finite mixtures
// of closed-form densities and exponential families over a reference density.

#include <array>
#include <cstddef>
#include <initializer_list>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace uq {

/// The source alphabet [lo, hi].
struct Support {
  double lo = 0.0;
  double hi = 1.0;

  Support() = default;
  Support(double lo, double hi);

  double width() const noexcept { return hi - lo; }
  bool contains(double x) const noexcept { return x >= lo && x <= hi; }
};

/// Equispaced trapezoid rule on a Support, endpoints included.
class QuadratureGrid {
 public:
  static constexpr std::size_t kDefaultPoints = std::size_t{1} << 14;
  static constexpr std::size_t kMinPoints = std::size_t{1} << 10;

  explicit QuadratureGrid(Support support, std::size_t points = kDefaultPoints);

  const Support& support() const noexcept { return support_; }
  std::size_t size() const noexcept { return points_.size(); }
  double spacing() const noexcept { return spacing_; }
  std::span<const double> points() const noexcept { return points_; }
  std::span<const double> weights() const noexcept { return weights_; }

  /// Trapezoid sum of already-tabulated values (one per grid point).
  double integrate(std::span<const double> values) const;

  template <class F>
  double integrate_fn(F&& f) const {
    double s = 0.0;
    for (std::size_t i = 0; i < points_.size(); ++i) s += weights_[i] * f(points_[i]);
    return s;
  }

 private:
  Support support_;
  double spacing_;
  std::vector<double> points_;
  std::vector<double> weights_;
};

/// Closed-form densities usable as mixture components or as the reference
/// density of an exponential family.
class Density {
 public:
  enum class Kind { uniform, truncated_gaussian, triangular };

  static Density uniform(double a, double b);
  /// Gaussian(mu, sigma) conditioned on [lo, hi].
  static Density truncated_gaussian(double mu, double sigma, double lo, double hi);
  static Density triangular(double a, double mode, double b);

  Kind kind() const noexcept { return kind_; }
  /// Endpoints of the density's own support.
  double lower() const noexcept { return lo_; }
  double upper() const noexcept { return hi_; }
  /// Shape parameters: uniform (a, b); truncated_gaussian (mu, sigma);
  /// triangular (a, mode, b).
  std::span<const double> params() const noexcept { return {params_.data(), nparams_}; }

  double pdf(double x) const;
  double cdf(double x) const;
  /// Inverse CDF on (0, 1).
  double quantile(double u) const;
  double mean() const;

  std::string describe() const;

 private:
  Density(Kind kind, double lo, double hi) : kind_(kind), lo_(lo), hi_(hi) {}

  Kind kind_;
  double lo_;
  double hi_;
  std::array<double, 3> params_{};
  std::size_t nparams_ = 0;
  // truncated gaussian: Phi(alpha) and Phi(beta) - Phi(alpha)
  double cdf_lo_ = 0.0;
  double mass_ = 1.0;
};

/// Bounded sufficient statistic h(x) for exponential families.
class Statistic {
 public:
  enum class Kind { power, cosine, sine };

  static Statistic power(int exponent);
  static Statistic cosine(double frequency);
  static Statistic sine(double frequency);

  Kind kind() const noexcept { return kind_; }
  double param() const noexcept { return param_; }
  double operator()(double x) const;
  std::string describe() const;

 private:
  Statistic(Kind k, double p) : kind_(k), param_(p) {}
  Kind kind_;
  double param_;
};

/// Parameter vector theta (or eta).
struct ParamVector {
  std::vector<double> coords;

  ParamVector() = default;
  explicit ParamVector(std::vector<double> c) : coords(std::move(c)) {}
  ParamVector(std::initializer_list<double> c) : coords(c) {}

  std::size_t size() const noexcept { return coords.size(); }
  double operator[](std::size_t i) const { return coords[i]; }
  double& operator[](std::size_t i) { return coords[i]; }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

/// Euclidean norm of theta - eta.
double distance(const ParamVector& theta, const ParamVector& eta);
std::string to_string(const ParamVector& theta);

/// Axis-aligned compact box in R^k.
struct ThetaBox {
  std::vector<double> lo;
  std::vector<double> hi;
};

/// p_theta = sum_i theta_i p_i with theta in the probability simplex.
class MixtureFamily {
 public:
  /// Validates: k >= 2, components inside the support with unit mass, and a
  /// full-rank Gram matrix (linear independence).
  MixtureFamily(std::vector<Density> components, Support support);

  std::size_t k() const noexcept { return components_.size(); }
  const std::vector<Density>& components() const noexcept { return components_; }
  const Support& support() const noexcept { return support_; }

 private:
  std::vector<Density> components_;
  Support support_;
};

/// Numerical constants of the exponential-family Lipschitz bound
///   d_V(P_theta, P_eta) <= m0 exp(a_k |theta - eta|) |theta - eta|.
struct ExpFamilyConstants {
  double sup_log_ratio = 0.0;    ///< grid estimate of sup_theta |ln p/p_theta|_inf
  double gram_lambda_max = 0.0;  ///< largest eigenvalue of int h h^T dP
  double a_k = 0.0;              ///< sup_x |h(x)|
  double m0 = 0.0;               ///< (1/2) exp(sup_log_ratio / 2) sqrt(gram_lambda_max)
};

/// p_theta(x) = p(x) exp(theta . h(x) - g(theta)), theta in a box.
class ExpFamily {
 public:
  /// Validates: {1, h_1..h_k} independent under p, each h_i square
  /// integrable, g finite on the box, and sup |ln p/p_theta| <= 50.
  ExpFamily(Density reference, std::vector<Statistic> stats, ThetaBox box, Support support);

  std::size_t k() const noexcept { return stats_.size(); }
  const Density& reference() const noexcept { return reference_; }
  const std::vector<Statistic>& stats() const noexcept { return stats_; }
  const ThetaBox& theta_box() const noexcept { return box_; }
  const Support& support() const noexcept { return support_; }

  /// The grid the normalizer is integrated on.
  const QuadratureGrid& quadrature() const noexcept { return *quad_; }
  /// theta . h(x)
  double linear_term(const ParamVector& theta, double x) const;
  /// Constants estimated at construction on the family's grid.
  const ExpFamilyConstants& constants() const noexcept { return constants_; }

 private:
  Density reference_;
  std::vector<Statistic> stats_;
  ThetaBox box_;
  Support support_;
  std::shared_ptr<const QuadratureGrid> quad_;
  ExpFamilyConstants constants_;
};

/// A parametric family {P_theta : theta in Theta} of either kind.
class SourceFamily {
 public:
  explicit SourceFamily(MixtureFamily f) : impl_(std::move(f)) {}
  explicit SourceFamily(ExpFamily f) : impl_(std::move(f)) {}

  bool is_mixture() const noexcept { return std::holds_alternative<MixtureFamily>(impl_); }
  const MixtureFamily* mixture() const noexcept { return std::get_if<MixtureFamily>(&impl_); }
  const ExpFamily* exponential() const noexcept { return std::get_if<ExpFamily>(&impl_); }

  std::size_t dim() const noexcept;
  const Support& support() const noexcept;

  /// theta in Theta, within tol (simplex sum / box faces).
  bool contains(const ParamVector& theta, double tol = 1e-12) const;
  /// Throws DomainError naming the violated constraint.
  void require(const ParamVector& theta) const;

  /// Centroid of Theta (simplex barycenter or box center).
  ParamVector centroid() const;
  /// Lower corner and integer side J of the hypercube M containing Theta.
  std::vector<double> cube_lower() const;
  int cube_side() const;

  /// Features phi(x) such that p_theta(x) > p_eta(x) iff
  /// (theta - eta) . phi(x) > offset(theta, eta) and base_positive(x):
  /// component densities for mixtures, statistics for exponential families.
  void features(double x, std::span<double> out) const;
  bool base_positive(double x) const;

  /// g(theta); zero for mixtures.
  double log_normalizer(const ParamVector& theta) const;
  /// Density with a precomputed normalizer; x is assumed inside the support.
  double density(const ParamVector& theta, double log_norm, double x) const;

  std::string describe() const;

 private:
  std::variant<MixtureFamily, ExpFamily> impl_;
};

using FamilyPtr = std::shared_ptr<const SourceFamily>;

/// A family member P_theta. Immutable; caches g(theta).
class SourceModel {
 public:
  SourceModel(FamilyPtr family, ParamVector theta);

  const SourceFamily& family() const noexcept { return *family_; }
  const FamilyPtr& family_ptr() const noexcept { return family_; }
  const ParamVector& theta() const noexcept { return theta_; }
  double log_normalizer() const noexcept { return log_norm_; }

  /// Density without the support check.
  double pdf(double x) const { return family_->density(theta_, log_norm_, x); }

 private:
  FamilyPtr family_;
  ParamVector theta_;
  double log_norm_ = 0.0;
};

/// p_theta(x). DomainError when x lies outside the support.
double density(const SourceModel& model, double x);

/// n i.i.d. draws, deterministic in seed. Mixtures use two uniforms per draw
/// (component choice, then inverse CDF); exponential families invert the
/// tabulated CDF with linear interpolation.
std::vector<double> sample(const SourceModel& model, std::uint64_t seed, std::size_t n);

/// g(theta) = ln int exp(theta . h) p dx on the family's own grid.
double exp_normalizer(const ExpFamily& family, const ParamVector& theta);
double exp_normalizer(const ExpFamily& family, const ParamVector& theta, const QuadratureGrid& quad);

/// p_theta at every grid point.
std::vector<double> tabulate(const SourceModel& model, const QuadratureGrid& quad);

/// d_V(P_theta, P_eta) = (1/2) int |p_theta - p_eta|, clamped to [0, 1].
double variational_distance(const SourceFamily& family, const ParamVector& theta,
                            const ParamVector& eta, const QuadratureGrid& quad);
double variational_distance(std::span<const double> p, std::span<const double> q,
                            const QuadratureGrid& quad);

/// D(P_theta || P_eta) in nats. DivergenceInfiniteError if p_eta = 0 where
/// p_theta > 0 on some grid point.
double relative_entropy(const SourceFamily& family, const ParamVector& theta,
                        const ParamVector& eta, const QuadratureGrid& quad);

class ExpFamily;
ExpFamilyConstants estimate_exp_constants(const ExpFamily& family, const QuadratureGrid& quad,
                                          std::size_t theta_samples = 64, std::uint64_t seed = 1);

/// Upper bound on d_V(P_theta, P_eta) / |theta - eta| for |theta - eta| <= radius:
/// sqrt(k)/2 for mixtures, m0 exp(a_k radius) for exponential families.
double lipschitz_bound(const SourceFamily& family, double radius);

/// Uniform draw from Theta (flat Dirichlet on the simplex, uniform on boxes).
ParamVector random_parameter(const SourceFamily& family, std::uint64_t seed);

}  // namespace uq
