#pragma once

// Fixed-rate block quantizers: codebooks, nearest-neighbor encoding, Lloyd
// design, distortion evaluation, the mismatch bound, and the reference-letter
// augmentation for unbounded distortion.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uq/sources.hpp"

namespace uq {

/// rho(x, y) = |x - y|^p on the reals.
struct DistortionSpec {
  double p = 2.0;
  double d_max = 1.0;  ///< diameter of support and reproduction range

  DistortionSpec() = default;
  DistortionSpec(double p, double d_max);
  /// d_max taken from the support width.
  static DistortionSpec for_support(double p, const Support& support) { return {p, support.width()}; }

  double rho(double x, double y) const noexcept {
    const double d = x > y ? x - y : y - x;
    if (p == 2.0) return d * d;
    if (p == 1.0) return d;
    return std::pow(d, p);
  }
  double rho_max() const noexcept { return std::pow(d_max, p); }
  /// rho_M = min(rho, M).
  double rho_truncated(double x, double y, double M) const noexcept {
    const double r = rho(x, y);
    return r < M ? r : M;
  }
};

struct CodebookProvenance {
  std::uint64_t seed = 0;
  std::uint64_t training_size = 0;
  std::uint32_t iterations = 0;
};

/// Codewords of block length n, stored row-major.
struct Codebook {
  std::size_t n = 1;
  std::vector<double> codewords;
  unsigned rate_bits = 0;
  double p = 2.0;  ///< exponent the code was designed for
  CodebookProvenance provenance;

  std::size_t size() const noexcept { return n ? codewords.size() / n : 0; }
  std::span<const double> codeword(std::size_t i) const { return {codewords.data() + i * n, n}; }
};

/// Throws FormatError unless 1 <= size <= 2^rate_bits and the storage is whole blocks.
void validate_codebook(const Codebook& cb);

/// Block distortion sum_i rho(x_i, c_i).
double block_distortion(std::span<const double> x, std::span<const double> c, const DistortionSpec& spec);

/// Index of the codeword with least block distortion; ties go to the lowest index.
std::size_t nn_encode(const Codebook& cb, std::span<const double> x_block, const DistortionSpec& spec);
/// Same, also returning the block distortion of the chosen codeword.
std::size_t nn_encode(const Codebook& cb, std::span<const double> x_block, const DistortionSpec& spec,
                      double& distortion);
/// Nearest neighbor under rho_M.
std::size_t nn_encode_truncated(const Codebook& cb, std::span<const double> x_block, const DistortionSpec& spec,
                                double M);

struct McEstimate {
  double mean = 0.0;
  double se = 0.0;  ///< standard error of the mean
};

/// Mean over blocks of (1/n) min-codeword distortion. `blocks` holds whole
/// blocks back to back; DomainError if it is empty or ragged.
double distortion_on_sample(const Codebook& cb, std::span<const double> blocks, const DistortionSpec& spec);
McEstimate distortion_estimate(const Codebook& cb, std::span<const double> blocks, const DistortionSpec& spec);

/// Exact per-letter distortion of a scalar (n = 1) code on the quadrature grid.
double expected_distortion(const Codebook& cb, std::span<const double> density, const QuadratureGrid& quad,
                           const DistortionSpec& spec);

struct LloydBudget {
  std::size_t training_blocks = 0;  ///< 0 selects 200 per codeword
  std::size_t max_iters = 50;
  double tolerance = 1e-6;  ///< stop when the relative improvement falls below this
};

struct LloydTrace {
  /// Distortion of each nearest-neighbor partition in the final stage.
  std::vector<double> history;
};

/// 2^ceil(nR) codewords; CapacityError above 2^20.
unsigned rate_bits_for(std::size_t n, double rate);

/// Generalized Lloyd design on seeded training blocks drawn from the model:
/// LBG splitting from the global centroid, nearest-neighbor partition then
/// p-power centroid (mean for p = 2, componentwise median for p = 1), empty
/// cells refilled by splitting the worst cell. Deterministic in seed.
Codebook lloyd_design(const SourceModel& model, std::size_t n, double rate, const DistortionSpec& spec,
                      std::uint64_t seed, const LloydBudget& budget = {}, LloydTrace* trace = nullptr);

/// Lloyd design on explicit training blocks (weights default to uniform).
/// All-identical data yields the repeated block as every codeword.
Codebook lloyd_design_blocks(std::span<const double> training, std::size_t n, unsigned rate_bits,
                             const DistortionSpec& spec, const Support& range, const LloydBudget& budget = {},
                             LloydTrace* trace = nullptr, std::span<const double> weights = {});

/// Scalar Lloyd-Max design against the tabulated density itself (the
/// infinite-training limit of lloyd_design for n = 1). Iterates until the
/// partition is stable or max_iters.
Codebook lloyd_design_density(std::span<const double> density, const QuadratureGrid& quad, unsigned rate_bits,
                              const DistortionSpec& spec, std::size_t max_iters = 1000,
                              LloydTrace* trace = nullptr);

/// Codebook of uniform random codewords in the range, seeded.
Codebook random_codebook(std::size_t n, std::size_t count, const Support& range, std::uint64_t seed);

struct MismatchGap {
  double lhs = 0.0;    ///< |D_P^{1/p} - D_Q^{1/p}| by Monte Carlo
  double rhs = 0.0;    ///< 2^{1/p} d_max d_V(P, Q) by quadrature
  double sigma = 0.0;  ///< Monte Carlo standard error of lhs
  double d_v = 0.0;
};

/// Both models are sampled with the same seed (common random numbers).
MismatchGap mismatch_gap(const Codebook& cb, const SourceModel& p_model, const SourceModel& q_model,
                         const DistortionSpec& spec, std::size_t mc_blocks, std::uint64_t seed);

/// Base code plus every codeword with at most floor(delta n) components
/// replaced by the reference letter, plus the all-reference block.
class AugmentedCodebook {
 public:
  static constexpr std::size_t kMaterializeMaxN = 24;
  static constexpr std::size_t kMaterializeMaxEntries = std::size_t{1} << 26;

  AugmentedCodebook(Codebook base, double delta, double ref_letter, double M);

  const Codebook& base() const noexcept { return base_; }
  double delta() const noexcept { return delta_; }
  double ref_letter() const noexcept { return ref_; }
  double threshold() const noexcept { return M_; }
  /// floor(delta n)
  std::size_t max_substitutions() const noexcept { return max_sub_; }

  /// |base| sum_{i <= floor(delta n)} C(n, i) + 1, counted with multiplicity.
  /// CapacityError if it does not fit in 64 bits.
  std::uint64_t count() const;
  /// log2 of count(), valid for any n.
  double log2_count() const;

  /// Procedural membership test; never enumerates.
  bool contains(std::span<const double> block) const;

  /// All codewords row-major: per base codeword, substitution sets by size
  /// then lexicographically, and the all-reference block last. CapacityError
  /// above n = 24 or 2^26 stored values.
  std::vector<double> materialize() const;

 private:
  Codebook base_;
  double delta_;
  double ref_;
  double M_;
  std::size_t max_sub_;
};

/// Substitution rule: when at most floor(delta n) components have
/// rho(x_i, xbar_i) > M, those components become a*; otherwise a*^n.
std::vector<double> robust_reencode(std::span<const double> x_block, std::span<const double> base_reproduction,
                                    double delta, double ref_letter, double M, const DistortionSpec& spec);

struct UnboundedCheck {
  McEstimate augmented;  ///< D of the augmented code under rho
  McEstimate truncated;  ///< Dbar of the base code under rho_M
  double G = 0.0;        ///< E rho^2(X, a*) by quadrature
  double G_prime = 0.0;  ///< G (1 + 2/delta)
  double bound = 0.0;    ///< Dbar + sqrt(G' Dbar / M)
  double sigma = 0.0;    ///< standard error of D - bound
};

/// Monte Carlo check of D(augmented) <= Dbar(base under rho_M) + sqrt(G' Dbar / M).
/// The base encoder is nearest neighbor under rho_M; per-block differences
/// are paired so sigma is the standard error of the paired difference.
UnboundedCheck unbounded_extension_check(const SourceModel& model, const Codebook& base, double delta,
                                         double ref_letter, double M, const DistortionSpec& spec,
                                         std::size_t mc_blocks, std::uint64_t seed);

// --- codebook files ------------------------------------------------------------

inline constexpr std::uint16_t kCodebookFormatVersion = 1;

std::vector<std::uint8_t> serialize_codebook(const Codebook& cb);
/// FormatError on bad magic, version, sizes or trailing bytes.
Codebook deserialize_codebook(std::span<const std::uint8_t> bytes);
void write_codebook(const std::filesystem::path& path, const Codebook& cb);
Codebook read_codebook(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace uq
