#pragma once

// Parameter-space quantizer: Theta is covered by a hypercube M of integer
// side J, M is cut into cells of side 1/ceil(sqrt n), and every cell that
// meets Theta gets a fixed-length binary index and a representative.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "uq/sources.hpp"

namespace uq {

/// Fixed-width cell index (big-endian when packed).
struct HeaderBits {
  std::uint64_t value = 0;
  unsigned width = 0;

  friend bool operator==(const HeaderBits&, const HeaderBits&) = default;
};

class ParamGrid {
 public:
  struct Cell {
    std::uint64_t index = 0;            ///< position among Theta-intersecting cells
    std::vector<std::int64_t> corner;   ///< integer lower corner, in cell units from M's corner
    ParamVector representative;
    bool projected = false;  ///< representative was pulled onto the boundary of Theta
  };

  /// Cells per unit length: ceil(sqrt n).
  int cells_per_unit() const noexcept { return per_unit_; }
  /// Side J of the bounding hypercube M.
  int cube_side() const noexcept { return side_; }
  const std::vector<double>& cube_lower() const noexcept { return lower_; }
  double cell_side() const noexcept { return 1.0 / per_unit_; }
  std::size_t dim() const noexcept { return lower_.size(); }

  const std::vector<Cell>& cells() const noexcept { return cells_; }
  std::size_t cell_count() const noexcept { return cells_.size(); }
  /// ceil(log2(cell_count)); zero for a single cell.
  unsigned header_bits() const noexcept { return header_bits_; }

  /// Cell index holding theta, or cell_count() if none does.
  std::size_t locate(const ParamVector& theta) const;
  /// theta in Theta within tol.
  bool in_theta(const ParamVector& theta, double tol) const;

 private:
  friend ParamGrid build_grid(const SourceFamily& family, std::size_t n);

  std::uint64_t linear_id(const std::vector<std::int64_t>& corner) const;

  int per_unit_ = 1;
  int side_ = 1;
  std::vector<double> lower_;
  std::vector<Cell> cells_;
  std::vector<std::uint64_t> ids_;  // sorted linear ids, parallel to cells_
  unsigned header_bits_ = 0;
  bool simplex_ = true;
  ThetaBox box_;
};

/// Cells are half-open on the low side, (a, a + 1/m], except the first cell
/// on each axis which also holds its lower face; a point on a shared face
/// therefore belongs to the cell with the smaller corner. Theta-intersecting
/// cells are indexed in lexicographic corner order. Representatives are the
/// projection of the cell center onto cell-closure intersect Theta (a clamp
/// for boxes, a clamped simplex projection for mixtures).
ParamGrid build_grid(const SourceFamily& family, std::size_t n);

/// Header of the cell containing theta. DomainError when theta is outside Theta.
HeaderBits encode_param(const ParamGrid& grid, const ParamVector& theta);

/// Representative of the header's cell. FormatError on out-of-range values
/// or a width that does not match the grid.
const ParamVector& decode_param(const ParamGrid& grid, const HeaderBits& bits);

/// Upper bound k (log2 ceil(sqrt n) + log2 J) + 1 on the header length.
double header_bits_bound(std::size_t k, std::size_t n, int cube_side);

}  // namespace uq
