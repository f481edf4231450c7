#include "uq/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_set>

#include "uq/rng.hpp"

namespace uq {
namespace {

constexpr double kTieTolerance = 1e-12;
constexpr std::size_t kTableCap = std::size_t{1} << 24;
constexpr std::size_t kNearestCandidates = 16;

FamilyPtr borrow(const SourceFamily& family) {
  return std::shared_ptr<const SourceFamily>(std::shared_ptr<const SourceFamily>{}, &family);
}

bool discriminant_positive(std::span<const double> direction, double offset, std::span<const double> phi) {
  double s = -offset;
  double scale = std::abs(offset);
  for (std::size_t i = 0; i < direction.size(); ++i) {
    const double t = direction[i] * phi[i];
    s += t;
    scale += std::abs(t);
  }
  return s > kTieTolerance * scale;
}

// Canonical key of the set {a . phi > b}: invariant under positive scaling.
std::vector<long long> set_key(std::span<const double> a, double b) {
  double s = std::abs(b);
  for (double v : a) s = std::max(s, std::abs(v));
  std::vector<long long> key(a.size() + 1, 0);
  if (s == 0.0) return key;
  for (std::size_t i = 0; i < a.size(); ++i) key[i] = std::llround(a[i] / s * 1e9);
  key.back() = std::llround(b / s * 1e9);
  return key;
}

std::vector<ParamVector> simplex_lattice(std::size_t k, int m) {
  std::vector<ParamVector> out;
  std::vector<int> c(k, 0);
  // Lexicographic enumeration of compositions of m into k nonnegative parts.
  auto rec = [&](auto&& self, std::size_t i, int left) -> void {
    if (i + 1 == k) {
      c[i] = left;
      ParamVector t{std::vector<double>(k)};
      for (std::size_t j = 0; j < k; ++j) t[j] = static_cast<double>(c[j]) / m;
      out.push_back(std::move(t));
      return;
    }
    for (int v = 0; v <= left; ++v) {
      c[i] = v;
      self(self, i + 1, left - v);
    }
  };
  rec(rec, 0, m);
  return out;
}

std::vector<ParamVector> box_lattice(const ThetaBox& box, int m) {
  const std::size_t k = box.lo.size();
  std::vector<std::vector<double>> axes(k);
  const double step = 1.0 / m;
  for (std::size_t i = 0; i < k; ++i) {
    const double w = box.hi[i] - box.lo[i];
    const auto count = static_cast<std::size_t>(std::floor(w * m + 1e-9));
    for (std::size_t j = 0; j <= count; ++j) axes[i].push_back(box.lo[i] + step * static_cast<double>(j));
    if (box.hi[i] - axes[i].back() > 1e-9) axes[i].push_back(box.hi[i]);
    axes[i].back() = std::min(axes[i].back(), box.hi[i]);
  }
  std::vector<ParamVector> out;
  std::vector<std::size_t> idx(k, 0);
  while (true) {
    ParamVector t{std::vector<double>(k)};
    for (std::size_t i = 0; i < k; ++i) t[i] = axes[i][idx[i]];
    out.push_back(std::move(t));
    std::size_t d = k;
    while (d > 0) {
      --d;
      if (++idx[d] < axes[d].size()) break;
      idx[d] = 0;
      if (d == 0) return out;
    }
  }
}

}  // namespace

// --- Sets and measures -------------------------------------------------------------

YatracosSet::YatracosSet(FamilyPtr family, ParamVector theta, ParamVector eta)
    : family_(std::move(family)), theta_(std::move(theta)), eta_(std::move(eta)) {
  if (!family_) throw DomainError("Yatracos set needs a family");
  family_->require(theta_);
  family_->require(eta_);
  if (theta_ == eta_) throw DomainError("Yatracos set requires theta != eta");
  direction_.resize(theta_.size());
  for (std::size_t i = 0; i < theta_.size(); ++i) direction_[i] = theta_[i] - eta_[i];
  offset_ = family_->log_normalizer(theta_) - family_->log_normalizer(eta_);
}

bool YatracosSet::contains_features(std::span<const double> phi, bool base_positive) const {
  return base_positive && discriminant_positive(direction_, offset_, phi);
}

bool YatracosSet::contains(double x) const {
  std::vector<double> phi(direction_.size());
  family_->features(x, phi);
  return contains_features(phi, family_->base_positive(x));
}

bool set_member(const YatracosSet& set, double x) { return set.contains(x); }

EmpiricalSample::EmpiricalSample(std::vector<double> values, const Support& support) : values_(std::move(values)) {
  if (values_.empty()) throw DomainError("empirical sample must be nonempty");
  for (double v : values_)
    if (!support.contains(v)) throw DomainError("sample value outside the support");
}

double empirical_measure(const EmpiricalSample& sample, const YatracosSet& set) {
  std::size_t hits = 0;
  for (double x : sample.values())
    if (set.contains(x)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(sample.size());
}

double model_measure(const SourceModel& model, const YatracosSet& set, const QuadratureGrid& quad) {
  const auto pts = quad.points();
  const auto w = quad.weights();
  double s = 0.0;
  for (std::size_t i = 0; i < quad.size(); ++i)
    if (set.contains(pts[i])) s += w[i] * model.pdf(pts[i]);
  return std::clamp(s, 0.0, 1.0);
}

// --- Candidate grids -----------------------------------------------------------------

CandidateGrid make_candidate_grid(std::vector<ParamVector> points, std::size_t pair_cap, std::uint64_t seed) {
  if (points.empty()) throw DomainError("candidate grid needs at least one point");
  CandidateGrid grid;
  grid.pair_cap = pair_cap;
  const std::uint64_t m = points.size();
  const std::uint64_t total = m * (m - 1);
  auto decode = [m](std::uint64_t idx) {
    const auto i = static_cast<std::uint32_t>(idx / (m - 1));
    auto j = static_cast<std::uint32_t>(idx % (m - 1));
    if (j >= i) ++j;
    return std::pair{i, j};
  };
  if (total <= pair_cap) {
    for (std::uint64_t idx = 0; idx < total; ++idx) grid.pairs.push_back(decode(idx));
  } else {
    // Floyd's sampling of pair_cap distinct indices, then sorted.
    Rng rng(seed);
    std::unordered_set<std::uint64_t> chosen;
    chosen.reserve(pair_cap * 2);
    for (std::uint64_t j = total - pair_cap; j < total; ++j) {
      const std::uint64_t t = rng.below(j + 1);
      if (!chosen.insert(t).second) chosen.insert(j);
    }
    std::vector<std::uint64_t> idx(chosen.begin(), chosen.end());
    std::sort(idx.begin(), idx.end());
    for (auto v : idx) grid.pairs.push_back(decode(v));
  }
  grid.points = std::move(points);
  return grid;
}

CandidateGrid make_candidate_grid(const SourceFamily& family, std::size_t n, const EstimatorConfig& config) {
  if (n < 1) throw DomainError("block length must be >= 1");
  const int root = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n)) - 1e-12));
  const int finest = std::max(1, static_cast<int>(std::lround(1.0 / config.min_step)));
  const int m = std::min(std::max(root, 1), finest);
  std::vector<ParamVector> pts =
      family.is_mixture() ? simplex_lattice(family.dim(), m) : box_lattice(family.exponential()->theta_box(), m);
  CandidateGrid grid = make_candidate_grid(std::move(pts), config.pair_cap, config.subsample_seed);
  grid.step = 1.0 / m;
  return grid;
}

double delta_stat(const SourceFamily& family, const ParamVector& eta, const EmpiricalSample& sample,
                  const CandidateGrid& grid, const QuadratureGrid& quad) {
  if (grid.points.empty()) throw DomainError("candidate grid is empty");
  const FamilyPtr fam = borrow(family);
  const SourceModel model(fam, eta);
  double best = 0.0;
  for (const auto& [i, j] : grid.pairs) {
    const YatracosSet set(fam, grid.points[i], grid.points[j]);
    best = std::max(best, std::abs(model_measure(model, set, quad) - empirical_measure(sample, set)));
  }
  return best;
}

ParamVector min_distance_estimate(const SourceFamily& family, const EmpiricalSample& sample, const CandidateGrid& grid,
                                  const QuadratureGrid& quad) {
  if (grid.points.empty()) throw DomainError("candidate grid is empty");
  const MinDistanceEstimator est(borrow(family), grid,
                                 std::shared_ptr<const QuadratureGrid>(std::shared_ptr<const QuadratureGrid>{}, &quad));
  return est.estimate(sample.values()).theta;
}

// --- MinDistanceEstimator ----------------------------------------------------------------

MinDistanceEstimator::MinDistanceEstimator(FamilyPtr family, CandidateGrid grid,
                                           std::shared_ptr<const QuadratureGrid> quad)
    : family_(std::move(family)), grid_(std::move(grid)), quad_(std::move(quad)) {
  if (grid_.points.empty()) throw DomainError("candidate grid is empty");
  const std::size_t k = family_->dim();
  const std::size_t npts = grid_.points.size();

  std::vector<double> lognorm(npts);
  for (std::size_t c = 0; c < npts; ++c) {
    family_->require(grid_.points[c]);
    lognorm[c] = family_->log_normalizer(grid_.points[c]);
  }

  // Features on the quadrature grid, shared by every set.
  const auto pts = quad_->points();
  std::vector<double> phi(quad_->size() * k);
  std::vector<char> base(quad_->size());
  for (std::size_t i = 0; i < quad_->size(); ++i) {
    family_->features(pts[i], std::span<double>(phi.data() + i * k, k));
    base[i] = family_->base_positive(pts[i]) ? 1 : 0;
  }

  std::map<std::vector<long long>, std::size_t> seen;
  std::vector<double> dir(k);
  for (const auto& [a, b] : grid_.pairs) {
    for (std::size_t d = 0; d < k; ++d) dir[d] = grid_.points[a][d] - grid_.points[b][d];
    const double off = lognorm[a] - lognorm[b];
    auto key = set_key(dir, off);
    if (seen.count(key)) continue;
    seen.emplace(std::move(key), sets_.size());
    SetData s{dir, off, {}};
    bool inside = false;
    std::uint32_t start = 0;
    for (std::size_t i = 0; i < quad_->size(); ++i) {
      const bool in = base[i] && discriminant_positive(dir, off, std::span<const double>(phi.data() + i * k, k));
      if (in && !inside) start = static_cast<std::uint32_t>(i);
      if (!in && inside) s.runs.emplace_back(start, static_cast<std::uint32_t>(i));
      inside = in;
    }
    if (inside) s.runs.emplace_back(start, static_cast<std::uint32_t>(quad_->size()));
    sets_.push_back(std::move(s));
  }

  if (npts * sets_.size() <= kTableCap) {
    table_.resize(npts * sets_.size());
    for (std::size_t c = 0; c < npts; ++c) {
      const auto row = model_measures(grid_.points[c]);
      std::copy(row.begin(), row.end(), table_.begin() + static_cast<std::ptrdiff_t>(c * sets_.size()));
    }
  }
}

std::vector<double> MinDistanceEstimator::measures_from_density(std::span<const double> wp) const {
  std::vector<double> prefix(wp.size() + 1, 0.0);
  for (std::size_t i = 0; i < wp.size(); ++i) prefix[i + 1] = prefix[i] + wp[i];
  std::vector<double> out(sets_.size());
  for (std::size_t s = 0; s < sets_.size(); ++s) {
    double m = 0.0;
    for (const auto& [b, e] : sets_[s].runs) m += prefix[e] - prefix[b];
    out[s] = std::clamp(m, 0.0, 1.0);
  }
  return out;
}

std::vector<double> MinDistanceEstimator::model_measures(const ParamVector& eta) const {
  const SourceModel model(family_, eta);
  const auto pts = quad_->points();
  const auto w = quad_->weights();
  std::vector<double> wp(quad_->size());
  for (std::size_t i = 0; i < wp.size(); ++i) wp[i] = w[i] * model.pdf(pts[i]);
  return measures_from_density(wp);
}

std::vector<double> MinDistanceEstimator::empirical_measures(std::span<const double> sample) const {
  const std::size_t k = family_->dim();
  const std::size_t n = sample.size();
  if (n == 0) throw DomainError("empirical sample must be nonempty");
  std::vector<double> phi(n * k);
  std::vector<char> base(n);
  for (std::size_t j = 0; j < n; ++j) {
    family_->features(sample[j], std::span<double>(phi.data() + j * k, k));
    base[j] = family_->base_positive(sample[j]) ? 1 : 0;
  }
  std::vector<double> out(sets_.size());
  for (std::size_t s = 0; s < sets_.size(); ++s) {
    std::size_t hits = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (base[j] && discriminant_positive(sets_[s].direction, sets_[s].offset,
                                           std::span<const double>(phi.data() + j * k, k)))
        ++hits;
    out[s] = static_cast<double>(hits) / static_cast<double>(n);
  }
  return out;
}

double MinDistanceEstimator::delta(const ParamVector& eta, std::span<const double> sample) const {
  const auto model = model_measures(eta);
  const auto emp = empirical_measures(sample);
  double best = 0.0;
  for (std::size_t s = 0; s < emp.size(); ++s) best = std::max(best, std::abs(model[s] - emp[s]));
  return best;
}

MinDistanceEstimator::Result MinDistanceEstimator::estimate(std::span<const double> sample) const {
  const auto emp = empirical_measures(sample);
  const std::size_t ns = sets_.size();
  Result best;
  best.delta = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < grid_.points.size(); ++c) {
    std::vector<double> row_storage;
    const double* row;
    if (!table_.empty()) {
      row = table_.data() + c * ns;
    } else {
      row_storage = model_measures(grid_.points[c]);
      row = row_storage.data();
    }
    double d = 0.0;
    for (std::size_t s = 0; s < ns; ++s) d = std::max(d, std::abs(row[s] - emp[s]));
    if (d < best.delta) {
      best.delta = d;
      best.index = c;
    }
  }
  if (ns == 0) best.delta = 0.0;
  best.theta = grid_.points[best.index];
  return best;
}

// --- Grid slack ---------------------------------------------------------------------------

double nearest_candidate_distance(const SourceFamily& family, const ParamVector& theta, const CandidateGrid& grid,
                                  const QuadratureGrid& quad) {
  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(grid.points.size());
  for (std::size_t c = 0; c < grid.points.size(); ++c) order.emplace_back(distance(theta, grid.points[c]), c);
  const std::size_t take = std::min(kNearestCandidates, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end());
  const FamilyPtr fam = borrow(family);
  const auto p = tabulate(SourceModel(fam, theta), quad);
  double best = 1.0;
  for (std::size_t i = 0; i < take; ++i) {
    const auto q = tabulate(SourceModel(fam, grid.points[order[i].second]), quad);
    best = std::min(best, variational_distance(p, q, quad));
  }
  return best;
}

double grid_covering_radius(const SourceFamily& family, const CandidateGrid& grid, const QuadratureGrid& quad,
                            std::size_t mesh_points, std::uint64_t seed) {
  double worst = 0.0;
  for (std::size_t i = 0; i < mesh_points; ++i) {
    const ParamVector t = random_parameter(family, derive_seed(seed, {i}));
    worst = std::max(worst, nearest_candidate_distance(family, t, grid, quad));
  }
  return worst;
}

MinDistanceBound minimum_distance_bound(const MinDistanceEstimator& estimator, const ParamVector& theta,
                                        std::span<const double> sample, double nearest_distance) {
  MinDistanceBound b;
  b.delta_theta = estimator.delta(theta, sample);
  b.slack = 3.0 * nearest_distance;
  b.rhs = 2.0 * b.delta_theta + 1.5 / static_cast<double>(sample.size()) + b.slack;
  return b;
}

// --- VC check ------------------------------------------------------------------------------

VcCheckResult vc_upper_check(const FamilyPtr& family, std::size_t trials, std::size_t points_per_trial,
                             std::uint64_t seed, std::size_t subfamily_size) {
  if (points_per_trial > kShatterPointCap) throw CapacityError("vc_upper_check point sets are capped at 20");
  std::vector<YatracosSet> sets;
  sets.reserve(subfamily_size);
  for (std::size_t s = 0; sets.size() < subfamily_size && s < 4 * subfamily_size; ++s) {
    ParamVector a = random_parameter(*family, derive_seed(seed, {1, s}));
    ParamVector b = random_parameter(*family, derive_seed(seed, {2, s}));
    if (a == b) continue;
    sets.emplace_back(family, std::move(a), std::move(b));
  }
  const std::size_t k = family->dim();
  const Support& sup = family->support();
  const std::size_t full = std::size_t{1} << points_per_trial;

  // Features of each point once; membership through the discriminant.
  VcCheckResult result;
  result.trials = trials;
  std::vector<double> phi(points_per_trial * k);
  std::vector<char> base(points_per_trial);
  std::vector<bool> seen(full);
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, {3, t}));
    std::vector<double> pts(points_per_trial);
    for (auto& x : pts) x = rng.uniform(sup.lo, sup.hi);
    for (std::size_t i = 0; i < points_per_trial; ++i) {
      family->features(pts[i], std::span<double>(phi.data() + i * k, k));
      base[i] = family->base_positive(pts[i]) ? 1 : 0;
    }
    std::fill(seen.begin(), seen.end(), false);
    std::size_t count = 0;
    for (const auto& s : sets) {
      std::size_t pattern = 0;
      for (std::size_t i = 0; i < points_per_trial; ++i)
        if (s.contains_features(std::span<const double>(phi.data() + i * k, k), base[i])) pattern |= std::size_t{1} << i;
      if (!seen[pattern]) {
        seen[pattern] = true;
        ++count;
      }
    }
    result.max_patterns = std::max(result.max_patterns, count);
    if (count == full) {
      result.passed = false;
      result.counterexample = pts;
      return result;
    }
  }
  return result;
}

}  // namespace uq
