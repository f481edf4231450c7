#include "uq/vq.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>

#include "uq/bitio.hpp"
#include "uq/errors.hpp"
#include "uq/rng.hpp"

namespace uq {
namespace {

constexpr unsigned kMaxRateBits = 20;
constexpr char kCodebookMagic[4] = {'U', 'Q', 'V', 'Q'};

std::size_t floor_count(double delta, std::size_t n) {
  return static_cast<std::size_t>(std::floor(delta * static_cast<double>(n) + 1e-9));
}

unsigned bits_for_count(std::size_t count) {
  unsigned b = 0;
  while ((std::size_t{1} << b) < count) ++b;
  return b;
}

double weighted_median(std::vector<std::pair<double, double>>& vw) {
  std::sort(vw.begin(), vw.end());
  double total = 0.0;
  for (const auto& [v, w] : vw) total += w;
  double acc = 0.0;
  for (const auto& [v, w] : vw) {
    acc += w;
    if (acc >= 0.5 * total) return v;
  }
  return vw.back().first;
}

// Weighted generalized Lloyd on N points of dimension n.
class Lloyd {
 public:
  Lloyd(std::span<const double> points, std::span<const double> weights, std::size_t n, const DistortionSpec& spec,
        const Support& range)
      : pts_(points), w_(weights), n_(n), spec_(spec), range_(range), count_(points.size() / n),
        assign_(count_, std::numeric_limits<std::size_t>::max()) {
    total_w_ = 0.0;
    for (std::size_t i = 0; i < count_; ++i) total_w_ += weight(i);
  }

  double weight(std::size_t i) const { return w_.empty() ? 1.0 : w_[i]; }

  // One partition + centroid pass per iteration; returns the number of passes.
  std::size_t run(std::vector<double>& cw, std::size_t max_iters, double tol, std::vector<double>* history) {
    double prev = std::numeric_limits<double>::infinity();
    std::size_t it = 0;
    while (it < max_iters) {
      const bool changed = partition(cw);
      const double d = distortion_;
      if (history) history->push_back(d);
      ++it;
      if (!changed) break;
      if (std::isfinite(prev) && (prev - d <= tol * prev || d == 0.0)) break;
      prev = d;
      centroids(cw);
    }
    return it;
  }

  std::vector<double> global_centroid() const {
    std::vector<double> c(n_);
    std::vector<std::size_t> all(count_);
    std::iota(all.begin(), all.end(), std::size_t{0});
    cell_centroid(all, c);
    return c;
  }

  bool partition(const std::vector<double>& cw) {
    const std::size_t k = cw.size() / n_;
    cell_sum_.assign(k, 0.0);
    bool changed = false;
    double total = 0.0;
    for (std::size_t i = 0; i < count_; ++i) {
      std::span<const double> x(pts_.data() + i * n_, n_);
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = block_distortion(x, {cw.data() + c * n_, n_}, spec_);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign_[i] != best) changed = true;
      assign_[i] = best;
      const double wd = weight(i) * best_d;
      cell_sum_[best] += wd;
      total += wd;
    }
    distortion_ = total / (total_w_ * static_cast<double>(n_));
    return changed;
  }

  void centroids(std::vector<double>& cw) {
    const std::size_t k = cw.size() / n_;
    std::vector<std::vector<std::size_t>> members(k);
    for (std::size_t i = 0; i < count_; ++i)
      if (weight(i) > 0.0) members[assign_[i]].push_back(i);
    std::vector<double> c(n_);
    std::vector<std::size_t> empty;
    for (std::size_t j = 0; j < k; ++j) {
      if (members[j].empty()) {
        empty.push_back(j);
        continue;
      }
      cell_centroid(members[j], c);
      std::copy(c.begin(), c.end(), cw.begin() + static_cast<std::ptrdiff_t>(j * n_));
    }
    // Refill empty cells next to the worst cell's codeword; an extra codeword
    // never raises the partition distortion.
    for (std::size_t j : empty) {
      std::size_t worst = 0;
      for (std::size_t c2 = 1; c2 < k; ++c2)
        if (cell_sum_[c2] > cell_sum_[worst]) worst = c2;
      const double eps = 1e-3 * std::max(range_.width(), 1e-12);
      for (std::size_t d = 0; d < n_; ++d)
        cw[j * n_ + d] = std::clamp(cw[worst * n_ + d] + eps, range_.lo, range_.hi);
      cell_sum_[worst] *= 0.5;
      cell_sum_[j] = cell_sum_[worst];
    }
  }

  std::size_t points() const { return count_; }

 private:
  void cell_centroid(const std::vector<std::size_t>& idx, std::vector<double>& c) const {
    for (std::size_t d = 0; d < n_; ++d) {
      if (spec_.p == 1.0) {
        std::vector<std::pair<double, double>> vw;
        vw.reserve(idx.size());
        for (std::size_t i : idx) vw.emplace_back(pts_[i * n_ + d], weight(i));
        c[d] = weighted_median(vw);
      } else {
        double s = 0.0, ws = 0.0;
        for (std::size_t i : idx) {
          s += weight(i) * pts_[i * n_ + d];
          ws += weight(i);
        }
        c[d] = ws > 0.0 ? s / ws : 0.5 * (range_.lo + range_.hi);
      }
      c[d] = std::clamp(c[d], range_.lo, range_.hi);
    }
  }

  std::span<const double> pts_;
  std::span<const double> w_;
  std::size_t n_;
  DistortionSpec spec_;
  Support range_;
  std::size_t count_;
  std::vector<std::size_t> assign_;
  std::vector<double> cell_sum_;
  double total_w_ = 0.0;
  double distortion_ = 0.0;
};

void require_block(std::span<const double> x, std::size_t n) {
  if (x.size() != n)
    throw DomainError("block length " + std::to_string(x.size()) + " does not match codebook length " +
                      std::to_string(n));
}

McEstimate mean_se(const std::vector<double>& v) {
  McEstimate e;
  if (v.empty()) return e;
  double s = 0.0;
  for (double x : v) s += x;
  e.mean = s / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - e.mean) * (x - e.mean);
    e.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return e;
}

std::vector<double> per_block_distortion(const Codebook& cb, std::span<const double> blocks,
                                         const DistortionSpec& spec) {
  if (blocks.empty() || blocks.size() % cb.n != 0)
    throw DomainError("sample must hold a nonzero number of whole blocks");
  const std::size_t b = blocks.size() / cb.n;
  std::vector<double> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    double d = 0.0;
    nn_encode(cb, blocks.subspan(i * cb.n, cb.n), spec, d);
    out[i] = d / static_cast<double>(cb.n);
  }
  return out;
}

}  // namespace

DistortionSpec::DistortionSpec(double p_, double d_max_) : p(p_), d_max(d_max_) {
  if (!(p > 0.0) || !std::isfinite(p)) throw DomainError("distortion exponent p must be positive");
  if (!(d_max > 0.0) || !std::isfinite(d_max)) throw DomainError("d_max must be positive and finite");
}

void validate_codebook(const Codebook& cb) {
  if (cb.n == 0) throw FormatError("codebook block length is zero");
  if (cb.codewords.empty() || cb.codewords.size() % cb.n != 0)
    throw FormatError("codebook storage is not a whole number of blocks");
  if (cb.rate_bits > 32 || cb.size() > (std::uint64_t{1} << cb.rate_bits))
    throw FormatError("codebook holds more than 2^rate_bits codewords");
  for (double v : cb.codewords)
    if (!std::isfinite(v)) throw FormatError("codebook holds a non-finite value");
}

double block_distortion(std::span<const double> x, std::span<const double> c, const DistortionSpec& spec) {
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) d += spec.rho(x[i], c[i]);
  return d;
}

std::size_t nn_encode(const Codebook& cb, std::span<const double> x_block, const DistortionSpec& spec,
                      double& distortion) {
  require_block(x_block, cb.n);
  const std::size_t k = cb.size();
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    const double d = block_distortion(x_block, cb.codeword(c), spec);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  distortion = best_d;
  return best;
}

std::size_t nn_encode(const Codebook& cb, std::span<const double> x_block, const DistortionSpec& spec) {
  double d;
  return nn_encode(cb, x_block, spec, d);
}

std::size_t nn_encode_truncated(const Codebook& cb, std::span<const double> x_block, const DistortionSpec& spec,
                                double M) {
  require_block(x_block, cb.n);
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < cb.size(); ++c) {
    const auto cw = cb.codeword(c);
    double d = 0.0;
    for (std::size_t i = 0; i < cb.n; ++i) d += spec.rho_truncated(x_block[i], cw[i], M);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

double distortion_on_sample(const Codebook& cb, std::span<const double> blocks, const DistortionSpec& spec) {
  return distortion_estimate(cb, blocks, spec).mean;
}

McEstimate distortion_estimate(const Codebook& cb, std::span<const double> blocks, const DistortionSpec& spec) {
  return mean_se(per_block_distortion(cb, blocks, spec));
}

double expected_distortion(const Codebook& cb, std::span<const double> density, const QuadratureGrid& quad,
                           const DistortionSpec& spec) {
  if (cb.n != 1) throw DomainError("expected_distortion needs a scalar codebook");
  if (density.size() != quad.size()) throw DomainError("density does not match the quadrature grid");
  const auto x = quad.points();
  const auto w = quad.weights();
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (density[i] == 0.0) continue;
    double best = std::numeric_limits<double>::infinity();
    for (double c : cb.codewords) best = std::min(best, spec.rho(x[i], c));
    s += w[i] * density[i] * best;
  }
  return s;
}

unsigned rate_bits_for(std::size_t n, double rate) {
  if (!(rate >= 0.0) || !std::isfinite(rate)) throw DomainError("rate must be a nonnegative number");
  const double bits = std::ceil(static_cast<double>(n) * rate - 1e-9);
  if (bits > kMaxRateBits)
    throw CapacityError("codebook of 2^" + std::to_string(static_cast<long long>(bits)) +
                        " codewords exceeds the 2^20 cap");
  return static_cast<unsigned>(std::max(0.0, bits));
}

Codebook lloyd_design_blocks(std::span<const double> training, std::size_t n, unsigned rate_bits,
                             const DistortionSpec& spec, const Support& range, const LloydBudget& budget,
                             LloydTrace* trace, std::span<const double> weights) {
  if (n == 0 || training.empty() || training.size() % n != 0)
    throw DomainError("training data must hold a nonzero number of whole blocks");
  if (rate_bits > kMaxRateBits) throw CapacityError("rate_bits above 20");
  if (spec.p != 1.0 && spec.p != 2.0) throw DomainError("Lloyd design supports p = 1 and p = 2 only");
  const std::size_t count = std::size_t{1} << rate_bits;
  const std::size_t blocks = training.size() / n;
  if (!weights.empty() && weights.size() != blocks) throw DomainError("one weight per training block required");

  Codebook cb;
  cb.n = n;
  cb.rate_bits = rate_bits;
  cb.p = spec.p;
  cb.provenance.training_size = blocks;
  if (trace) trace->history.clear();

  bool degenerate = true;
  for (std::size_t i = 1; i < blocks && degenerate; ++i)
    for (std::size_t d = 0; d < n; ++d)
      if (training[i * n + d] != training[d]) {
        degenerate = false;
        break;
      }
  if (degenerate) {
    cb.codewords.resize(count * n);
    for (std::size_t c = 0; c < count; ++c)
      for (std::size_t d = 0; d < n; ++d) cb.codewords[c * n + d] = std::clamp(training[d], range.lo, range.hi);
    if (trace) trace->history.push_back(0.0);
    return cb;
  }

  Lloyd lloyd(training, weights, n, spec, range);
  std::vector<double> cw = lloyd.global_centroid();
  const double eps = 1e-3 * range.width();
  std::uint32_t iters = 0;
  while (cw.size() / n < count) {
    std::vector<double> next;
    next.reserve(cw.size() * 2);
    for (std::size_t c = 0; c < cw.size() / n; ++c) {
      for (std::size_t d = 0; d < n; ++d) next.push_back(std::clamp(cw[c * n + d] - eps, range.lo, range.hi));
      for (std::size_t d = 0; d < n; ++d) next.push_back(std::clamp(cw[c * n + d] + eps, range.lo, range.hi));
    }
    cw = std::move(next);
    const bool last = cw.size() / n == count;
    if (last && trace) trace->history.clear();
    iters += static_cast<std::uint32_t>(
        lloyd.run(cw, budget.max_iters, budget.tolerance, last && trace ? &trace->history : nullptr));
  }
  if (count == 1) iters = static_cast<std::uint32_t>(lloyd.run(cw, 1, 0.0, trace ? &trace->history : nullptr));
  if (n == 1) std::sort(cw.begin(), cw.end());
  cb.codewords = std::move(cw);
  cb.provenance.iterations = iters;
  return cb;
}

Codebook lloyd_design(const SourceModel& model, std::size_t n, double rate, const DistortionSpec& spec,
                      std::uint64_t seed, const LloydBudget& budget, LloydTrace* trace) {
  if (n == 0) throw DomainError("block length must be >= 1");
  const unsigned bits = rate_bits_for(n, rate);
  const std::size_t count = std::size_t{1} << bits;
  std::size_t blocks = budget.training_blocks ? budget.training_blocks : 200 * count;
  if (blocks < 10 * count)
    throw DomainError("training budget " + std::to_string(blocks) + " is below 10 blocks per codeword");
  const auto data = sample(model, seed, blocks * n);
  Codebook cb = lloyd_design_blocks(data, n, bits, spec, model.family().support(), budget, trace);
  cb.provenance.seed = seed;
  return cb;
}

Codebook lloyd_design_density(std::span<const double> density, const QuadratureGrid& quad, unsigned rate_bits,
                              const DistortionSpec& spec, std::size_t max_iters, LloydTrace* trace) {
  if (density.size() != quad.size()) throw DomainError("density does not match the quadrature grid");
  if (rate_bits > kMaxRateBits) throw CapacityError("rate_bits above 20");
  if (spec.p != 1.0 && spec.p != 2.0) throw DomainError("Lloyd design supports p = 1 and p = 2 only");
  const std::size_t count = std::size_t{1} << rate_bits;
  const auto x = quad.points();
  const auto w = quad.weights();
  std::vector<double> mass(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mass[i] = std::max(0.0, density[i]) * w[i];
    total += mass[i];
  }
  if (!(total > 0.0)) throw NumericError("density has no mass on the grid");

  // Quantile initialization: codeword c sits at the (c + 1/2)/count quantile.
  std::vector<double> cw(count);
  double acc = 0.0;
  std::size_t i = 0;
  for (std::size_t c = 0; c < count; ++c) {
    const double target = (static_cast<double>(c) + 0.5) / static_cast<double>(count) * total;
    while (i + 1 < x.size() && acc + mass[i] < target) acc += mass[i++];
    cw[c] = x[i];
  }

  Codebook cb;
  cb.n = 1;
  cb.rate_bits = rate_bits;
  cb.p = spec.p;
  cb.provenance.training_size = x.size();
  if (trace) trace->history.clear();
  Lloyd lloyd(x, mass, 1, spec, quad.support());
  cb.provenance.iterations =
      static_cast<std::uint32_t>(lloyd.run(cw, max_iters, 0.0, trace ? &trace->history : nullptr));
  std::sort(cw.begin(), cw.end());
  cb.codewords = std::move(cw);
  return cb;
}

Codebook random_codebook(std::size_t n, std::size_t count, const Support& range, std::uint64_t seed) {
  if (n == 0 || count == 0) throw DomainError("random codebook needs n >= 1 and count >= 1");
  Rng rng(seed);
  Codebook cb;
  cb.n = n;
  cb.rate_bits = bits_for_count(count);
  cb.codewords.resize(n * count);
  for (double& v : cb.codewords) v = rng.uniform(range.lo, range.hi);
  cb.provenance.seed = seed;
  return cb;
}

MismatchGap mismatch_gap(const Codebook& cb, const SourceModel& p_model, const SourceModel& q_model,
                         const DistortionSpec& spec, std::size_t mc_blocks, std::uint64_t seed) {
  if (mc_blocks < 2) throw DomainError("mismatch_gap needs at least 2 Monte Carlo blocks");
  const auto xp = sample(p_model, seed, mc_blocks * cb.n);
  const auto xq = sample(q_model, seed, mc_blocks * cb.n);
  const auto dp = per_block_distortion(cb, xp, spec);
  const auto dq = per_block_distortion(cb, xq, spec);
  const double DP = mean_se(dp).mean;
  const double DQ = mean_se(dq).mean;
  const double ip = 1.0 / spec.p;

  MismatchGap g;
  g.lhs = std::abs(std::pow(DP, ip) - std::pow(DQ, ip));
  // Delta method on the paired per-block values; near D = 0 the derivative
  // blows up, so fall back to the (D + se)^{1/p} - D^{1/p} envelope there.
  auto deriv = [&](double D) { return D > 0.0 ? ip * std::pow(D, ip - 1.0) : 0.0; };
  std::vector<double> z(mc_blocks);
  for (std::size_t b = 0; b < mc_blocks; ++b) z[b] = deriv(DP) * dp[b] - deriv(DQ) * dq[b];
  g.sigma = mean_se(z).se;
  const double seP = mean_se(dp).se, seQ = mean_se(dq).se;
  g.sigma = std::max(g.sigma, 0.0);
  if (DP < 4.0 * seP || DQ < 4.0 * seQ)
    g.sigma += std::pow(DP + seP, ip) - std::pow(DP, ip) + std::pow(DQ + seQ, ip) - std::pow(DQ, ip);

  const Support& sp = p_model.family().support();
  const Support& sq = q_model.family().support();
  QuadratureGrid quad(Support(std::min(sp.lo, sq.lo), std::max(sp.hi, sq.hi)));
  std::vector<double> fp(quad.size()), fq(quad.size());
  const auto pts = quad.points();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    fp[i] = sp.contains(pts[i]) ? p_model.pdf(pts[i]) : 0.0;
    fq[i] = sq.contains(pts[i]) ? q_model.pdf(pts[i]) : 0.0;
  }
  g.d_v = variational_distance(fp, fq, quad);
  g.rhs = std::pow(2.0, ip) * spec.d_max * g.d_v;
  return g;
}

AugmentedCodebook::AugmentedCodebook(Codebook base, double delta, double ref_letter, double M)
    : base_(std::move(base)), delta_(delta), ref_(ref_letter), M_(M) {
  validate_codebook(base_);
  if (!(delta > 0.0 && delta < 1.0)) throw DomainError("delta must lie in (0, 1)");
  if (!(M > 0.0)) throw DomainError("threshold M must be positive");
  if (!std::isfinite(ref_letter)) throw DomainError("reference letter must be finite");
  max_sub_ = floor_count(delta, base_.n);
}

std::uint64_t AugmentedCodebook::count() const {
  constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t n = base_.n;
  std::uint64_t binom = 1, sum = 0;
  for (std::uint64_t i = 0; i <= max_sub_; ++i) {
    if (sum > kMax - binom) throw CapacityError("augmented codebook count overflows 64 bits");
    sum += binom;
    if (i == max_sub_) break;
    // C(n, i+1) = C(n, i) (n - i) / (i + 1), exact because C(n, i)(n - i) is divisible by i + 1.
    if (binom > kMax / (n - i)) throw CapacityError("augmented codebook count overflows 64 bits");
    binom = binom * (n - i) / (i + 1);
  }
  const std::uint64_t b = base_.size();
  if (sum > (kMax - 1) / b) throw CapacityError("augmented codebook count overflows 64 bits");
  return b * sum + 1;
}

double AugmentedCodebook::log2_count() const {
  const double n = static_cast<double>(base_.n);
  double lmax = -std::numeric_limits<double>::infinity();
  std::vector<double> terms;
  for (std::size_t i = 0; i <= max_sub_; ++i) {
    const double di = static_cast<double>(i);
    terms.push_back(std::lgamma(n + 1) - std::lgamma(di + 1) - std::lgamma(n - di + 1));
    lmax = std::max(lmax, terms.back());
  }
  double s = 0.0;
  for (double t : terms) s += std::exp(t - lmax);
  const double ln_main = std::log(static_cast<double>(base_.size())) + lmax + std::log(s);
  // + 1 for the all-reference block
  return (ln_main + std::log1p(std::exp(-ln_main))) / std::log(2.0);
}

bool AugmentedCodebook::contains(std::span<const double> block) const {
  if (block.size() != base_.n) return false;
  if (std::all_of(block.begin(), block.end(), [&](double v) { return v == ref_; })) return true;
  for (std::size_t c = 0; c < base_.size(); ++c) {
    const auto cw = base_.codeword(c);
    std::size_t subs = 0;
    bool ok = true;
    for (std::size_t i = 0; i < block.size() && ok; ++i) {
      if (block[i] == cw[i]) continue;
      if (block[i] != ref_ || ++subs > max_sub_) ok = false;
    }
    if (ok) return true;
  }
  return false;
}

std::vector<double> AugmentedCodebook::materialize() const {
  const std::size_t n = base_.n;
  if (n > kMaterializeMaxN)
    throw CapacityError("augmented codebooks are only materialized up to n = " + std::to_string(kMaterializeMaxN));
  const std::uint64_t total = count();
  if (total > kMaterializeMaxEntries / n) throw CapacityError("augmented codebook too large to materialize");
  std::vector<double> out;
  out.reserve(total * n);
  std::vector<std::size_t> idx;
  for (std::size_t c = 0; c < base_.size(); ++c) {
    const auto cw = base_.codeword(c);
    for (std::size_t size = 0; size <= max_sub_; ++size) {
      idx.resize(size);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      while (true) {
        const std::size_t start = out.size();
        out.insert(out.end(), cw.begin(), cw.end());
        for (std::size_t j : idx) out[start + j] = ref_;
        // next combination in lexicographic order
        std::size_t pos = size;
        while (pos > 0 && idx[pos - 1] == n - size + pos - 1) --pos;
        if (pos == 0) break;
        ++idx[pos - 1];
        for (std::size_t j = pos; j < size; ++j) idx[j] = idx[j - 1] + 1;
      }
    }
  }
  out.insert(out.end(), n, ref_);
  return out;
}

std::vector<double> robust_reencode(std::span<const double> x_block, std::span<const double> base_reproduction,
                                    double delta, double ref_letter, double M, const DistortionSpec& spec) {
  if (x_block.size() != base_reproduction.size()) throw DomainError("block and reproduction lengths differ");
  if (!(delta > 0.0 && delta < 1.0)) throw DomainError("delta must lie in (0, 1)");
  const std::size_t allowed = floor_count(delta, x_block.size());
  std::vector<double> out(base_reproduction.begin(), base_reproduction.end());
  std::size_t violators = 0;
  for (std::size_t i = 0; i < x_block.size(); ++i)
    if (spec.rho(x_block[i], base_reproduction[i]) > M) ++violators;
  if (violators > allowed) {
    std::fill(out.begin(), out.end(), ref_letter);
    return out;
  }
  for (std::size_t i = 0; i < x_block.size(); ++i)
    if (spec.rho(x_block[i], base_reproduction[i]) > M) out[i] = ref_letter;
  return out;
}

UnboundedCheck unbounded_extension_check(const SourceModel& model, const Codebook& base, double delta,
                                         double ref_letter, double M, const DistortionSpec& spec,
                                         std::size_t mc_blocks, std::uint64_t seed) {
  if (mc_blocks < 2) throw DomainError("unbounded_extension_check needs at least 2 blocks");
  if (!(delta > 0.0 && delta < 1.0)) throw DomainError("delta must lie in (0, 1)");
  if (!(M > 0.0)) throw DomainError("threshold M must be positive");
  const std::size_t n = base.n;
  const auto x = sample(model, seed, mc_blocks * n);
  std::vector<double> d(mc_blocks), dbar(mc_blocks);
  for (std::size_t b = 0; b < mc_blocks; ++b) {
    std::span<const double> xb(x.data() + b * n, n);
    const auto cw = base.codeword(nn_encode_truncated(base, xb, spec, M));
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += spec.rho_truncated(xb[i], cw[i], M);
    dbar[b] = s / static_cast<double>(n);
    const auto out = robust_reencode(xb, cw, delta, ref_letter, M, spec);
    d[b] = block_distortion(xb, out, spec) / static_cast<double>(n);
  }

  UnboundedCheck r;
  r.augmented = mean_se(d);
  r.truncated = mean_se(dbar);
  QuadratureGrid quad(model.family().support());
  r.G = quad.integrate_fn([&](double t) {
    const double q = spec.rho(t, ref_letter);
    return model.pdf(t) * q * q;
  });
  r.G_prime = r.G * (1.0 + 2.0 / delta);
  const double Db = r.truncated.mean;
  r.bound = Db + std::sqrt(r.G_prime * Db / M);
  // Linearize D - bound in Dbar around its estimate.
  const double slope = Db > 0.0 ? 1.0 + 0.5 * std::sqrt(r.G_prime / (M * Db)) : 1.0;
  std::vector<double> z(mc_blocks);
  for (std::size_t b = 0; b < mc_blocks; ++b) z[b] = d[b] - slope * dbar[b];
  r.sigma = mean_se(z).se;
  return r;
}

std::vector<std::uint8_t> serialize_codebook(const Codebook& cb) {
  validate_codebook(cb);
  std::vector<std::uint8_t> out(std::begin(kCodebookMagic), std::end(kCodebookMagic));
  le::put<std::uint16_t>(out, kCodebookFormatVersion);
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(cb.n));
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(cb.size()));
  le::put<double>(out, cb.p);
  for (double v : cb.codewords) le::put<double>(out, v);
  le::put<std::uint64_t>(out, cb.provenance.seed);
  le::put<std::uint64_t>(out, cb.provenance.training_size);
  return out;
}

Codebook deserialize_codebook(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(bytes.begin(), bytes.begin() + 4, std::begin(kCodebookMagic)))
    throw FormatError("not a codebook file (bad magic)");
  std::size_t off = 4;
  const auto version = le::get<std::uint16_t>(bytes, off);
  if (version != kCodebookFormatVersion)
    throw FormatError("unsupported codebook format version " + std::to_string(version));
  Codebook cb;
  cb.n = le::get<std::uint32_t>(bytes, off);
  const std::uint64_t count = le::get<std::uint32_t>(bytes, off);
  cb.p = le::get<double>(bytes, off);
  if (cb.n == 0 || count == 0) throw FormatError("codebook has zero length or zero codewords");
  if (!(cb.p > 0.0) || !std::isfinite(cb.p)) throw FormatError("codebook exponent is not positive");
  const std::uint64_t values = count * cb.n;
  if (bytes.size() - off != values * 8 + 16) throw FormatError("codebook size does not match its header");
  cb.codewords.resize(values);
  for (auto& v : cb.codewords) v = le::get<double>(bytes, off);
  cb.provenance.seed = le::get<std::uint64_t>(bytes, off);
  cb.provenance.training_size = le::get<std::uint64_t>(bytes, off);
  cb.rate_bits = bits_for_count(count);
  validate_codebook(cb);
  return cb;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error writing " + path.string());
}

void write_codebook(const std::filesystem::path& path, const Codebook& cb) {
  write_file_bytes(path, serialize_codebook(cb));
}

Codebook read_codebook(const std::filesystem::path& path) { return deserialize_codebook(read_file_bytes(path)); }

}  // namespace uq
