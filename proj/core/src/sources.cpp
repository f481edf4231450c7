#include "uq/sources.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include "uq/errors.hpp"
#include "uq/rng.hpp"

namespace uq {
namespace {

constexpr double kComponentMassTol = 1e-6;
constexpr double kQuadratureMassTol = 1e-4;
constexpr double kMaxLogRatio = 50.0;

const boost::math::normal& std_normal() {
  static const boost::math::normal n(0.0, 1.0);
  return n;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

// Rank of a symmetric positive semidefinite matrix, relative tolerance.
std::size_t psd_rank(const Eigen::MatrixXd& g, double* lambda_max = nullptr) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g, Eigen::EigenvaluesOnly);
  const auto& ev = eig.eigenvalues();
  const double top = ev.maxCoeff();
  if (lambda_max) *lambda_max = top;
  if (!(top > 0.0)) return 0;
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (ev[i] > 1e-10 * top) ++r;
  return r;
}

}  // namespace

// --- Support / QuadratureGrid -------------------------------------------------

Support::Support(double lo_, double hi_) : lo(lo_), hi(hi_) {
  if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi))
    throw DomainError("support requires finite lo < hi, got [" + fmt(lo) + ", " + fmt(hi) + "]");
}

QuadratureGrid::QuadratureGrid(Support support, std::size_t points) : support_(support) {
  if (points < kMinPoints)
    throw DomainError("quadrature grid needs at least " + std::to_string(kMinPoints) + " points");
  spacing_ = support.width() / static_cast<double>(points - 1);
  points_.resize(points);
  weights_.assign(points, spacing_);
  for (std::size_t i = 0; i < points; ++i) points_[i] = support.lo + spacing_ * static_cast<double>(i);
  points_.back() = support.hi;
  weights_.front() = weights_.back() = 0.5 * spacing_;
}

double QuadratureGrid::integrate(std::span<const double> values) const {
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) s += weights_[i] * values[i];
  return s;
}

// --- Density -------------------------------------------------------------------

Density Density::uniform(double a, double b) {
  if (!std::isfinite(a) || !std::isfinite(b) || !(a < b))
    throw DomainError("uniform(a, b) requires a < b");
  Density d(Kind::uniform, a, b);
  d.params_ = {a, b, 0.0};
  d.nparams_ = 2;
  return d;
}

Density Density::truncated_gaussian(double mu, double sigma, double lo, double hi) {
  if (!std::isfinite(mu) || !(sigma > 0.0) || !std::isfinite(sigma))
    throw DomainError("truncated_gaussian requires finite mu and sigma > 0");
  if (!(lo < hi)) throw DomainError("truncated_gaussian requires lo < hi");
  Density d(Kind::truncated_gaussian, lo, hi);
  d.params_ = {mu, sigma, 0.0};
  d.nparams_ = 2;
  d.cdf_lo_ = boost::math::cdf(std_normal(), (lo - mu) / sigma);
  d.mass_ = boost::math::cdf(std_normal(), (hi - mu) / sigma) - d.cdf_lo_;
  if (!(d.mass_ > 1e-300)) throw DomainError("truncated_gaussian has no mass on its interval");
  return d;
}

Density Density::triangular(double a, double mode, double b) {
  if (!(a < b) || mode < a || mode > b) throw DomainError("triangular requires a <= mode <= b, a < b");
  Density d(Kind::triangular, a, b);
  d.params_ = {a, mode, b};
  d.nparams_ = 3;
  return d;
}

double Density::pdf(double x) const {
  if (x < lo_ || x > hi_) return 0.0;
  switch (kind_) {
    case Kind::uniform:
      return 1.0 / (hi_ - lo_);
    case Kind::truncated_gaussian: {
      const double mu = params_[0], sigma = params_[1];
      const double z = (x - mu) / sigma;
      return std::exp(-0.5 * z * z) / (std::sqrt(2.0 * M_PI) * sigma * mass_);
    }
    case Kind::triangular: {
      const double a = params_[0], c = params_[1], b = params_[2];
      if (x < c) return 2.0 * (x - a) / ((b - a) * (c - a));
      if (x == c) return 2.0 / (b - a);
      return 2.0 * (b - x) / ((b - a) * (b - c));
    }
  }
  return 0.0;
}

double Density::cdf(double x) const {
  if (x <= lo_) return 0.0;
  if (x >= hi_) return 1.0;
  switch (kind_) {
    case Kind::uniform:
      return (x - lo_) / (hi_ - lo_);
    case Kind::truncated_gaussian: {
      const double v = (boost::math::cdf(std_normal(), (x - params_[0]) / params_[1]) - cdf_lo_) / mass_;
      return std::clamp(v, 0.0, 1.0);
    }
    case Kind::triangular: {
      const double a = params_[0], c = params_[1], b = params_[2];
      if (x <= c) return (x - a) * (x - a) / ((b - a) * (c - a));
      return 1.0 - (b - x) * (b - x) / ((b - a) * (b - c));
    }
  }
  return 0.0;
}

double Density::quantile(double u) const {
  u = std::clamp(u, 0.0, 1.0);
  double x = lo_;
  switch (kind_) {
    case Kind::uniform:
      x = lo_ + u * (hi_ - lo_);
      break;
    case Kind::truncated_gaussian: {
      const double p = std::clamp(cdf_lo_ + u * mass_, 1e-300, 1.0 - 1e-16);
      x = params_[0] + params_[1] * boost::math::quantile(std_normal(), p);
      break;
    }
    case Kind::triangular: {
      const double a = params_[0], c = params_[1], b = params_[2];
      const double fc = (c - a) / (b - a);
      x = u < fc ? a + std::sqrt(u * (b - a) * (c - a)) : b - std::sqrt((1.0 - u) * (b - a) * (b - c));
      break;
    }
  }
  return std::clamp(x, lo_, hi_);
}

double Density::mean() const {
  switch (kind_) {
    case Kind::uniform:
      return 0.5 * (lo_ + hi_);
    case Kind::truncated_gaussian: {
      const double mu = params_[0], sigma = params_[1];
      const double a = (lo_ - mu) / sigma, b = (hi_ - mu) / sigma;
      const double phi_a = boost::math::pdf(std_normal(), a);
      const double phi_b = boost::math::pdf(std_normal(), b);
      return mu + sigma * (phi_a - phi_b) / mass_;
    }
    case Kind::triangular:
      return (params_[0] + params_[1] + params_[2]) / 3.0;
  }
  return 0.0;
}

std::string Density::describe() const {
  switch (kind_) {
    case Kind::uniform:
      return "uniform(" + fmt(lo_) + "," + fmt(hi_) + ")";
    case Kind::truncated_gaussian:
      return "truncated_gaussian(" + fmt(params_[0]) + "," + fmt(params_[1]) + ";[" + fmt(lo_) + "," +
             fmt(hi_) + "])";
    case Kind::triangular:
      return "triangular(" + fmt(params_[0]) + "," + fmt(params_[1]) + "," + fmt(params_[2]) + ")";
  }
  return "?";
}

// --- Statistic -----------------------------------------------------------------

Statistic Statistic::power(int exponent) {
  if (exponent < 1) throw DomainError("power statistic needs exponent >= 1");
  return Statistic(Kind::power, exponent);
}
Statistic Statistic::cosine(double frequency) { return Statistic(Kind::cosine, frequency); }
Statistic Statistic::sine(double frequency) { return Statistic(Kind::sine, frequency); }

double Statistic::operator()(double x) const {
  switch (kind_) {
    case Kind::power: {
      const int e = static_cast<int>(param_);
      double v = 1.0;
      for (int i = 0; i < e; ++i) v *= x;
      return v;
    }
    case Kind::cosine:
      return std::cos(param_ * x);
    case Kind::sine:
      return std::sin(param_ * x);
  }
  return 0.0;
}

std::string Statistic::describe() const {
  switch (kind_) {
    case Kind::power:
      return "x^" + std::to_string(static_cast<int>(param_));
    case Kind::cosine:
      return "cos(" + fmt(param_) + "x)";
    case Kind::sine:
      return "sin(" + fmt(param_) + "x)";
  }
  return "?";
}

// --- ParamVector ---------------------------------------------------------------

double distance(const ParamVector& theta, const ParamVector& eta) {
  double s = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double d = theta[i] - eta[i];
    s += d * d;
  }
  return std::sqrt(s);
}

std::string to_string(const ParamVector& theta) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < theta.size(); ++i) os << (i ? ";" : "") << theta[i];
  return os.str();
}

// --- Families ------------------------------------------------------------------

MixtureFamily::MixtureFamily(std::vector<Density> components, Support support)
    : components_(std::move(components)), support_(support) {
  const std::size_t k = components_.size();
  if (k < 2) throw DomainError("mixture family needs k >= 2 components");
  const QuadratureGrid quad(support_);
  std::vector<std::vector<double>> tab(k, std::vector<double>(quad.size()));
  for (std::size_t i = 0; i < k; ++i) {
    const Density& c = components_[i];
    if (c.lower() < support_.lo - 1e-12 || c.upper() > support_.hi + 1e-12)
      throw DomainError("component " + std::to_string(i) + " (" + c.describe() + ") leaves the support");
    const double exact = c.cdf(support_.hi) - c.cdf(support_.lo);
    if (std::abs(exact - 1.0) > kComponentMassTol)
      throw DomainError("component " + std::to_string(i) + " does not integrate to 1");
    for (std::size_t j = 0; j < quad.size(); ++j) tab[i][j] = c.pdf(quad.points()[j]);
    if (std::abs(quad.integrate(tab[i]) - 1.0) > kQuadratureMassTol)
      throw DomainError("component " + std::to_string(i) + " quadrature mass off by more than 1e-4");
  }
  Eigen::MatrixXd gram(k, k);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a; b < k; ++b) {
      double s = 0.0;
      for (std::size_t j = 0; j < quad.size(); ++j) s += quad.weights()[j] * tab[a][j] * tab[b][j];
      gram(a, b) = gram(b, a) = s;
    }
  if (psd_rank(gram) != k) throw DomainError("mixture components are linearly dependent");
}

ExpFamily::ExpFamily(Density reference, std::vector<Statistic> stats, ThetaBox box, Support support)
    : reference_(std::move(reference)),
      stats_(std::move(stats)),
      box_(std::move(box)),
      support_(support),
      quad_(std::make_shared<QuadratureGrid>(support)) {
  const std::size_t k = stats_.size();
  if (k < 1) throw DomainError("exponential family needs at least one statistic");
  if (box_.lo.size() != k || box_.hi.size() != k)
    throw DomainError("theta_box dimension does not match the number of statistics");
  for (std::size_t i = 0; i < k; ++i)
    if (!std::isfinite(box_.lo[i]) || !std::isfinite(box_.hi[i]) || !(box_.lo[i] < box_.hi[i]))
      throw DomainError("theta_box axis " + std::to_string(i) + " needs finite lo < hi");
  if (reference_.lower() < support_.lo - 1e-12 || reference_.upper() > support_.hi + 1e-12)
    throw DomainError("reference density leaves the support");

  const QuadratureGrid& quad = *quad_;
  // Gram matrix of {1, h_1..h_k} under P.
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(k + 1, k + 1);
  std::vector<double> f(k + 1);
  for (std::size_t j = 0; j < quad.size(); ++j) {
    const double x = quad.points()[j];
    const double wp = quad.weights()[j] * reference_.pdf(x);
    if (wp == 0.0) continue;
    f[0] = 1.0;
    for (std::size_t i = 0; i < k; ++i) f[i + 1] = stats_[i](x);
    for (std::size_t a = 0; a <= k; ++a)
      for (std::size_t b = 0; b <= k; ++b) gram(a, b) += wp * f[a] * f[b];
  }
  for (std::size_t i = 1; i <= k; ++i)
    if (!std::isfinite(gram(i, i))) throw DomainError("statistic " + std::to_string(i - 1) + " is not square integrable");
  if (psd_rank(gram) != k + 1) throw DomainError("{1, h_1..h_k} are linearly dependent under the reference density");

  // g must be finite on the box: corners (for small k) and center.
  std::vector<ParamVector> probes;
  ParamVector center{std::vector<double>(k)};
  for (std::size_t i = 0; i < k; ++i) center[i] = 0.5 * (box_.lo[i] + box_.hi[i]);
  probes.push_back(center);
  if (k <= 10) {
    for (std::size_t mask = 0; mask < (std::size_t{1} << k); ++mask) {
      ParamVector c{std::vector<double>(k)};
      for (std::size_t i = 0; i < k; ++i) c[i] = (mask >> i) & 1u ? box_.hi[i] : box_.lo[i];
      probes.push_back(std::move(c));
    }
  }
  for (const auto& t : probes) (void)exp_normalizer(*this, t);

  constants_ = estimate_exp_constants(*this, quad, 64, 1);
  if (!(constants_.sup_log_ratio <= kMaxLogRatio))
    throw DomainError("sup |ln p/p_theta| estimate " + fmt(constants_.sup_log_ratio) + " exceeds 50");
}

double ExpFamily::linear_term(const ParamVector& theta, double x) const {
  double s = 0.0;
  for (std::size_t i = 0; i < stats_.size(); ++i) s += theta[i] * stats_[i](x);
  return s;
}

std::size_t SourceFamily::dim() const noexcept {
  return std::visit([](const auto& f) { return f.k(); }, impl_);
}

const Support& SourceFamily::support() const noexcept {
  return std::visit([](const auto& f) -> const Support& { return f.support(); }, impl_);
}

bool SourceFamily::contains(const ParamVector& theta, double tol) const {
  if (theta.size() != dim()) return false;
  for (double v : theta.coords)
    if (!std::isfinite(v)) return false;
  if (const auto* m = mixture()) {
    (void)m;
    double sum = 0.0;
    for (double v : theta.coords) {
      if (v < -tol) return false;
      sum += v;
    }
    return std::abs(sum - 1.0) <= tol;
  }
  const ThetaBox& box = exponential()->theta_box();
  for (std::size_t i = 0; i < theta.size(); ++i)
    if (theta[i] < box.lo[i] - tol || theta[i] > box.hi[i] + tol) return false;
  return true;
}

void SourceFamily::require(const ParamVector& theta) const {
  if (theta.size() != dim())
    throw DomainError("parameter has dimension " + std::to_string(theta.size()) + ", family expects " +
                      std::to_string(dim()));
  if (!contains(theta))
    throw DomainError("parameter (" + to_string(theta) + ") is outside Theta" +
                      (is_mixture() ? " (probability simplex)" : " (theta_box)"));
}

ParamVector SourceFamily::centroid() const {
  const std::size_t k = dim();
  if (is_mixture()) return ParamVector(std::vector<double>(k, 1.0 / static_cast<double>(k)));
  const ThetaBox& box = exponential()->theta_box();
  ParamVector c{std::vector<double>(k)};
  for (std::size_t i = 0; i < k; ++i) c[i] = 0.5 * (box.lo[i] + box.hi[i]);
  return c;
}

std::vector<double> SourceFamily::cube_lower() const {
  if (is_mixture()) return std::vector<double>(dim(), 0.0);
  return exponential()->theta_box().lo;
}

int SourceFamily::cube_side() const {
  if (is_mixture()) return 1;
  const ThetaBox& box = exponential()->theta_box();
  double side = 0.0;
  for (std::size_t i = 0; i < box.lo.size(); ++i) side = std::max(side, box.hi[i] - box.lo[i]);
  return std::max(1, static_cast<int>(std::ceil(side - 1e-12)));
}

void SourceFamily::features(double x, std::span<double> out) const {
  if (const auto* m = mixture()) {
    for (std::size_t i = 0; i < m->k(); ++i) out[i] = m->components()[i].pdf(x);
    return;
  }
  const auto* e = exponential();
  for (std::size_t i = 0; i < e->k(); ++i) out[i] = e->stats()[i](x);
}

bool SourceFamily::base_positive(double x) const {
  if (is_mixture()) return true;
  return exponential()->reference().pdf(x) > 0.0;
}

double SourceFamily::log_normalizer(const ParamVector& theta) const {
  if (is_mixture()) return 0.0;
  return exp_normalizer(*exponential(), theta);
}

double SourceFamily::density(const ParamVector& theta, double log_norm, double x) const {
  if (const auto* m = mixture()) {
    double s = 0.0;
    for (std::size_t i = 0; i < m->k(); ++i)
      if (theta[i] != 0.0) s += theta[i] * m->components()[i].pdf(x);
    return s;
  }
  const auto* e = exponential();
  const double p = e->reference().pdf(x);
  if (p == 0.0) return 0.0;
  return p * std::exp(e->linear_term(theta, x) - log_norm);
}

std::string SourceFamily::describe() const {
  std::string s;
  if (const auto* m = mixture()) {
    s = "mixture{";
    for (std::size_t i = 0; i < m->k(); ++i) s += (i ? "," : "") + m->components()[i].describe();
    return s + "}";
  }
  const auto* e = exponential();
  s = "exp{" + e->reference().describe() + ";";
  for (std::size_t i = 0; i < e->k(); ++i) s += (i ? "," : "") + e->stats()[i].describe();
  return s + "}";
}

// --- SourceModel and operations -------------------------------------------------

SourceModel::SourceModel(FamilyPtr family, ParamVector theta) : family_(std::move(family)), theta_(std::move(theta)) {
  if (!family_) throw DomainError("source model needs a family");
  family_->require(theta_);
  log_norm_ = family_->log_normalizer(theta_);
}

double density(const SourceModel& model, double x) {
  if (!model.family().support().contains(x))
    throw DomainError("x = " + fmt(x) + " is outside the support [" + fmt(model.family().support().lo) + ", " +
                      fmt(model.family().support().hi) + "]");
  return model.pdf(x);
}

std::vector<double> sample(const SourceModel& model, std::uint64_t seed, std::size_t n) {
  std::vector<double> out(n);
  Rng rng(seed);
  const Support& sup = model.family().support();
  if (const auto* m = model.family().mixture()) {
    const auto& theta = model.theta();
    std::vector<double> cum(m->k());
    std::partial_sum(theta.coords.begin(), theta.coords.end(), cum.begin());
    std::size_t last = 0;
    for (std::size_t i = 0; i < m->k(); ++i)
      if (theta[i] > 0.0) last = i;
    for (std::size_t t = 0; t < n; ++t) {
      const double u1 = rng.uniform();
      const double u2 = rng.uniform_open();
      std::size_t j = last;
      for (std::size_t i = 0; i < m->k(); ++i)
        if (theta[i] > 0.0 && u1 < cum[i]) {
          j = i;
          break;
        }
      out[t] = std::clamp(m->components()[j].quantile(u2), sup.lo, sup.hi);
    }
    return out;
  }

  // Exponential family: inverse of the tabulated trapezoid CDF.
  const auto& quad = model.family().exponential()->quadrature();
  const auto pts = quad.points();
  std::vector<double> cdf(quad.size(), 0.0);
  double prev = model.pdf(pts[0]);
  for (std::size_t i = 1; i < quad.size(); ++i) {
    const double cur = model.pdf(pts[i]);
    cdf[i] = cdf[i - 1] + 0.5 * quad.spacing() * (prev + cur);
    prev = cur;
  }
  const double total = cdf.back();
  if (!(total > 0.0) || !std::isfinite(total)) throw NumericError("degenerate tabulated CDF");
  for (double& c : cdf) c /= total;
  for (std::size_t t = 0; t < n; ++t) {
    const double u = rng.uniform_open();
    (void)rng.uniform();  // keep two draws per sample, as for mixtures
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) {
      out[t] = sup.hi;
      continue;
    }
    const std::size_t hi = static_cast<std::size_t>(it - cdf.begin());
    const std::size_t lo = hi - 1;
    const double span = cdf[hi] - cdf[lo];
    const double frac = span > 0.0 ? (u - cdf[lo]) / span : 0.0;
    out[t] = std::clamp(pts[lo] + frac * (pts[hi] - pts[lo]), sup.lo, sup.hi);
  }
  return out;
}

double exp_normalizer(const ExpFamily& family, const ParamVector& theta) {
  return exp_normalizer(family, theta, family.quadrature());
}

double exp_normalizer(const ExpFamily& family, const ParamVector& theta, const QuadratureGrid& quad) {
  if (theta.size() != family.k()) throw DomainError("parameter dimension mismatch in exp_normalizer");
  const auto pts = quad.points();
  double shift = -std::numeric_limits<double>::infinity();
  std::vector<double> lin(quad.size());
  for (std::size_t i = 0; i < quad.size(); ++i) {
    lin[i] = family.linear_term(theta, pts[i]);
    if (family.reference().pdf(pts[i]) > 0.0) shift = std::max(shift, lin[i]);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < quad.size(); ++i) {
    const double p = family.reference().pdf(pts[i]);
    if (p > 0.0) s += quad.weights()[i] * p * std::exp(lin[i] - shift);
  }
  const double g = std::log(s) + shift;
  if (!std::isfinite(g)) throw NumericError("normalizer g(theta) is not finite at theta = (" + to_string(theta) + ")");
  return g;
}

std::vector<double> tabulate(const SourceModel& model, const QuadratureGrid& quad) {
  std::vector<double> v(quad.size());
  const auto pts = quad.points();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = model.pdf(pts[i]);
  return v;
}

double variational_distance(std::span<const double> p, std::span<const double> q, const QuadratureGrid& quad) {
  const auto w = quad.weights();
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += w[i] * std::abs(p[i] - q[i]);
  return std::clamp(0.5 * s, 0.0, 1.0);
}

double variational_distance(const SourceFamily& family, const ParamVector& theta, const ParamVector& eta,
                            const QuadratureGrid& quad) {
  auto fam = std::shared_ptr<const SourceFamily>(std::shared_ptr<const SourceFamily>{}, &family);
  const SourceModel a(fam, theta), b(fam, eta);
  const auto p = tabulate(a, quad);
  const auto q = tabulate(b, quad);
  return variational_distance(p, q, quad);
}

double relative_entropy(const SourceFamily& family, const ParamVector& theta, const ParamVector& eta,
                        const QuadratureGrid& quad) {
  auto fam = std::shared_ptr<const SourceFamily>(std::shared_ptr<const SourceFamily>{}, &family);
  const SourceModel a(fam, theta), b(fam, eta);
  const auto pts = quad.points();
  const auto w = quad.weights();
  // Pointwise p ln(p/q) - p + q >= 0; integrates to D when both are normalized.
  double s = 0.0;
  for (std::size_t i = 0; i < quad.size(); ++i) {
    const double p = a.pdf(pts[i]);
    const double q = b.pdf(pts[i]);
    if (p > 0.0) {
      if (!(q > 0.0))
        throw DivergenceInfiniteError("p_eta vanishes at x = " + fmt(pts[i]) + " where p_theta > 0");
      s += w[i] * (p * std::log(p / q) - p + q);
    } else {
      s += w[i] * q;
    }
  }
  return s;
}

ExpFamilyConstants estimate_exp_constants(const ExpFamily& family, const QuadratureGrid& quad,
                                          std::size_t theta_samples, std::uint64_t seed) {
  const std::size_t k = family.k();
  const ThetaBox& box = family.theta_box();
  const auto pts = quad.points();

  std::vector<ParamVector> thetas;
  if (k <= 10) {
    for (std::size_t mask = 0; mask < (std::size_t{1} << k); ++mask) {
      ParamVector c{std::vector<double>(k)};
      for (std::size_t i = 0; i < k; ++i) c[i] = (mask >> i) & 1u ? box.hi[i] : box.lo[i];
      thetas.push_back(std::move(c));
    }
  }
  Rng rng(seed);
  for (std::size_t s = 0; s < theta_samples; ++s) {
    ParamVector c{std::vector<double>(k)};
    for (std::size_t i = 0; i < k; ++i) c[i] = rng.uniform(box.lo[i], box.hi[i]);
    thetas.push_back(std::move(c));
  }

  ExpFamilyConstants out;
  std::vector<double> lin(quad.size());
  for (const auto& t : thetas) {
    const double g = exp_normalizer(family, t, quad);
    for (std::size_t i = 0; i < quad.size(); ++i) {
      if (family.reference().pdf(pts[i]) == 0.0) continue;
      out.sup_log_ratio = std::max(out.sup_log_ratio, std::abs(family.linear_term(t, pts[i]) - g));
    }
  }

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(k, k);
  std::vector<double> h(k);
  for (std::size_t i = 0; i < quad.size(); ++i) {
    const double p = family.reference().pdf(pts[i]);
    if (p == 0.0) continue;
    double norm2 = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
      h[a] = family.stats()[a](pts[i]);
      norm2 += h[a] * h[a];
    }
    out.a_k = std::max(out.a_k, std::sqrt(norm2));
    const double wp = quad.weights()[i] * p;
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) gram(a, b) += wp * h[a] * h[b];
  }
  psd_rank(gram, &out.gram_lambda_max);
  out.m0 = 0.5 * std::exp(0.5 * out.sup_log_ratio) * std::sqrt(out.gram_lambda_max);
  return out;
}

double lipschitz_bound(const SourceFamily& family, double radius) {
  if (family.is_mixture()) return 0.5 * std::sqrt(static_cast<double>(family.dim()));
  const auto& c = family.exponential()->constants();
  return c.m0 * std::exp(c.a_k * radius);
}

ParamVector random_parameter(const SourceFamily& family, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t k = family.dim();
  ParamVector t{std::vector<double>(k)};
  if (family.is_mixture()) {
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      t[i] = -std::log(rng.uniform_open());
      sum += t[i];
    }
    for (std::size_t i = 0; i < k; ++i) t[i] /= sum;
    // Absorb rounding so the coordinates sum to 1 to within an ulp.
    double rest = 1.0;
    for (std::size_t i = 0; i + 1 < k; ++i) rest -= t[i];
    t[k - 1] = std::max(0.0, rest);
    return t;
  }
  const ThetaBox& box = family.exponential()->theta_box();
  for (std::size_t i = 0; i < k; ++i) t[i] = rng.uniform(box.lo[i], box.hi[i]);
  return t;
}

}  // namespace uq
