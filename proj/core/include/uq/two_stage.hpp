#pragma once

// The (n, n)-block two-stage code: the header is the quantized
// minimum-distance estimate from the previous block, the body is the
// nearest-neighbor index in that cell's codebook.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "uq/estimator.hpp"
#include "uq/param_codec.hpp"
#include "uq/sources.hpp"
#include "uq/vq.hpp"

namespace uq {

enum class DesignMethod {
  density,  ///< scalar Lloyd-Max on the tabulated density (sub_dim 1 only)
  samples,  ///< Lloyd on seeded training blocks
};

/// How per-cell codebooks are built. An n-block code is the product of one
/// sub_dim-dimensional codebook applied to n / sub_dim consecutive sub-blocks.
struct CodeDesignConfig {
  std::size_t sub_dim = 1;
  DesignMethod method = DesignMethod::density;
  /// Every cell (and the matched baseline) trains on the same seed.
  std::uint64_t design_seed = 0xD3516Eull;
  LloydBudget budget;
};

/// Lazily designed codebooks for every Theta-intersecting cell.
/// Safe to share across threads; each cell is designed at most once.
class CodeBank {
 public:
  CodeBank(FamilyPtr family, std::size_t n, double rate, DistortionSpec spec, CodeDesignConfig design,
           std::shared_ptr<const QuadratureGrid> quad);

  const SourceFamily& family() const noexcept { return *family_; }
  const FamilyPtr& family_ptr() const noexcept { return family_; }
  const ParamGrid& grid() const noexcept { return grid_; }
  const DistortionSpec& spec() const noexcept { return spec_; }
  const CodeDesignConfig& design() const noexcept { return design_; }
  const QuadratureGrid& quadrature() const noexcept { return *quad_; }

  std::size_t n() const noexcept { return n_; }
  std::size_t sub_dim() const noexcept { return design_.sub_dim; }
  std::size_t sub_blocks() const noexcept { return n_ / design_.sub_dim; }
  unsigned sub_rate_bits() const noexcept { return sub_bits_; }
  /// Body width: sub_blocks * sub_rate_bits.
  unsigned rate_bits() const noexcept { return static_cast<unsigned>(sub_blocks()) * sub_bits_; }
  unsigned header_bits() const noexcept { return grid_.header_bits(); }

  /// Sub-codebook of a cell, designed for its representative on first use.
  const Codebook& codebook(std::size_t cell) const;
  /// Sub-codebook designed for an arbitrary parameter (uncached).
  Codebook design_for(const ParamVector& theta) const;
  std::size_t designed_count() const;

 private:
  FamilyPtr family_;
  std::size_t n_;
  DistortionSpec spec_;
  CodeDesignConfig design_;
  std::shared_ptr<const QuadratureGrid> quad_;
  ParamGrid grid_;
  unsigned sub_bits_ = 0;
  std::unique_ptr<std::once_flag[]> once_;
  std::unique_ptr<std::unique_ptr<const Codebook>[]> books_;
};

/// Block code under a product codebook: sub-block indices, in order.
struct EncodedBlock {
  HeaderBits header;
  std::vector<std::uint32_t> body;

  friend bool operator==(const EncodedBlock&, const EncodedBlock&) = default;
};

struct DecodedBlock {
  std::vector<double> reproduction;
  ParamVector theta_hat;
};

/// Body of x_block under a cell's code; adds the block distortion (sum of rho).
EncodedBlock encode_with_cell(const CodeBank& bank, std::size_t cell, std::span<const double> x_block,
                              double* distortion = nullptr);
/// Body of x_block under an explicit sub-codebook with an empty header.
std::vector<std::uint32_t> encode_body(const Codebook& sub, std::span<const double> x_block,
                                       const DistortionSpec& spec, double* distortion = nullptr);
/// Concatenated sub-codewords of a body.
std::vector<double> reproduce_body(const Codebook& sub, std::span<const std::uint32_t> body);

class TwoStageCode {
 public:
  TwoStageCode(std::shared_ptr<const CodeBank> bank, std::shared_ptr<const MinDistanceEstimator> estimator);

  /// Bank, candidate grid and estimator for one block length.
  static TwoStageCode build(FamilyPtr family, std::size_t n, double rate, const DistortionSpec& spec,
                            const CodeDesignConfig& design, const EstimatorConfig& est,
                            std::shared_ptr<const QuadratureGrid> quad);

  const CodeBank& bank() const noexcept { return *bank_; }
  const std::shared_ptr<const CodeBank>& bank_ptr() const noexcept { return bank_; }
  const MinDistanceEstimator& estimator() const noexcept { return *estimator_; }
  std::size_t n() const noexcept { return bank_->n(); }
  /// Cell holding the centroid of Theta; used for the first block.
  std::size_t initial_cell() const noexcept { return initial_cell_; }

 private:
  std::shared_ptr<const CodeBank> bank_;
  std::shared_ptr<const MinDistanceEstimator> estimator_;
  std::size_t initial_cell_ = 0;
};

struct BlockTrace {
  std::size_t cell = 0;
  bool initial = false;                ///< t = 1, coded with the initialization cell
  MinDistanceEstimator::Result estimate;  ///< from the previous block (unset for t = 1)
  double distortion = 0.0;             ///< per letter
};

/// Encodes T = stream.size() / n blocks. DomainError unless the stream is a
/// nonzero whole number of blocks.
std::vector<EncodedBlock> encode_stream(const TwoStageCode& code, std::span<const double> stream,
                                        std::vector<BlockTrace>* trace = nullptr);

/// FormatError on a header or body that does not fit the code.
std::vector<DecodedBlock> decode_stream(const TwoStageCode& code, std::span<const EncodedBlock> encoded);

/// (rate_bits + header_bits) / n.
double rate_per_letter(const TwoStageCode& code);
double rate_per_letter(const CodeBank& bank);

/// Zero-memory baseline: the cell whose code has least distortion on the
/// block itself (ties to the lowest cell). Designs every cell's codebook.
EncodedBlock nn_first_stage_encode(const CodeBank& bank, std::span<const double> x_block,
                                   double* distortion = nullptr);

// --- wire format -----------------------------------------------------------------

inline constexpr std::uint16_t kStreamFormatVersion = 1;

struct StreamLayout {
  std::uint32_t n = 0;
  std::uint16_t rate_bits = 0;
  std::uint16_t header_bits = 0;
  std::uint32_t sub_blocks = 0;
  std::uint16_t sub_rate_bits = 0;
  std::uint64_t cell_count = 0;
};

StreamLayout layout_of(const CodeBank& bank);

/// "UQ2S", version, n, rate_bits, header_bits, block count, then per block the
/// header and body bits MSB first, padded to a byte; a CRC-32 of everything
/// before it closes the stream.
std::vector<std::uint8_t> pack_stream(const StreamLayout& layout, std::span<const EncodedBlock> blocks);
/// FormatError on any mismatch, truncation, trailing data or checksum failure;
/// nothing is returned unless the whole stream is valid.
std::vector<EncodedBlock> unpack_stream(const StreamLayout& layout, std::span<const std::uint8_t> bytes);

}  // namespace uq
