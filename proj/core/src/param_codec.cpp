#include "uq/param_codec.hpp"

#include <algorithm>
#include <cmath>

#include "uq/errors.hpp"

namespace uq {
namespace {

constexpr double kSnap = 1e-9;

// Cell index along one axis for scaled coordinate u = m (theta - lower):
// cells are (j, j+1], the first one closed; values within kSnap of an
// integer are treated as that integer.
std::int64_t axis_cell(double u, std::int64_t count) {
  const double r = std::round(u);
  std::int64_t j = std::abs(u - r) < kSnap ? static_cast<std::int64_t>(r) - 1
                                           : static_cast<std::int64_t>(std::ceil(u)) - 1;
  if (j < 0 && u > -kSnap) j = 0;
  if (j >= count && u < static_cast<double>(count) + kSnap) j = count - 1;
  return j;
}

bool simplex_meets(const std::vector<std::int64_t>& corner, std::int64_t m) {
  std::int64_t s = 0;
  for (auto j : corner) s += j;
  // sum(u) = m with u_i in (j_i, j_i + 1] (or [0, 1] when j_i = 0).
  bool all_zero = std::all_of(corner.begin(), corner.end(), [](auto j) { return j == 0; });
  const bool low_ok = s < m || (s == m && all_zero);
  return low_ok && m <= s + static_cast<std::int64_t>(corner.size());
}

// Euclidean projection of c onto {lo <= x <= hi, sum x = 1} by bisection on the shift.
std::vector<double> project_box_simplex(const std::vector<double>& c, const std::vector<double>& lo,
                                        const std::vector<double>& hi) {
  auto eval = [&](double tau) {
    double s = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) s += std::clamp(c[i] - tau, lo[i], hi[i]);
    return s;
  };
  double a = -2.0, b = 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (a + b);
    if (eval(mid) > 1.0) a = mid; else b = mid;
  }
  std::vector<double> x(c.size());
  const double tau = 0.5 * (a + b);
  for (std::size_t i = 0; i < c.size(); ++i) x[i] = std::clamp(c[i] - tau, lo[i], hi[i]);
  double sum = 0.0;
  for (double v : x) sum += v;
  for (double& v : x) v /= sum;
  return x;
}

}  // namespace

double header_bits_bound(std::size_t k, std::size_t n, int cube_side) {
  const double m = std::ceil(std::sqrt(static_cast<double>(n)) - 1e-12);
  return static_cast<double>(k) * (std::log2(m) + std::log2(static_cast<double>(cube_side))) + 1.0;
}

std::uint64_t ParamGrid::linear_id(const std::vector<std::int64_t>& corner) const {
  const auto per_axis = static_cast<std::uint64_t>(per_unit_) * static_cast<std::uint64_t>(side_);
  std::uint64_t id = 0;
  for (auto j : corner) id = id * per_axis + static_cast<std::uint64_t>(j);
  return id;
}

ParamGrid build_grid(const SourceFamily& family, std::size_t n) {
  if (n < 1) throw DomainError("block length must be >= 1");
  ParamGrid g;
  g.simplex_ = family.is_mixture();
  if (!g.simplex_) g.box_ = family.exponential()->theta_box();
  g.per_unit_ = std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n)) - 1e-12)));
  g.side_ = family.cube_side();
  g.lower_ = family.cube_lower();
  const std::size_t k = family.dim();
  const std::int64_t m = g.per_unit_;
  const std::int64_t per_axis = m * g.side_;
  const double h = 1.0 / static_cast<double>(m);

  std::vector<std::int64_t> corner(k, 0);
  const ThetaBox* box = family.is_mixture() ? nullptr : &family.exponential()->theta_box();
  while (true) {
    bool meets;
    if (!box) {
      meets = simplex_meets(corner, m);
    } else {
      meets = true;
      for (std::size_t i = 0; i < k && meets; ++i) {
        const double a = g.lower_[i] + static_cast<double>(corner[i]) * h;
        const double b = a + h;
        // (a, b] meets [lo, hi]  (closed [a, b] for the first cell)
        meets = (corner[i] == 0 ? a <= box->hi[i] : a < box->hi[i]) && b >= box->lo[i];
      }
    }
    if (meets) {
      ParamGrid::Cell cell;
      cell.index = g.cells_.size();
      cell.corner = corner;
      std::vector<double> lo(k), hi(k), center(k);
      for (std::size_t i = 0; i < k; ++i) {
        lo[i] = g.lower_[i] + static_cast<double>(corner[i]) * h;
        hi[i] = lo[i] + h;
        center[i] = lo[i] + 0.5 * h;
      }
      if (!box) {
        cell.representative = ParamVector(project_box_simplex(center, lo, hi));
      } else {
        std::vector<double> r(k);
        for (std::size_t i = 0; i < k; ++i)
          r[i] = std::clamp(center[i], std::max(lo[i], box->lo[i]), std::min(hi[i], box->hi[i]));
        cell.representative = ParamVector(std::move(r));
      }
      for (std::size_t i = 0; i < k; ++i) {
        const double r = cell.representative[i];
        if (!box ? r <= 1e-12 : (std::abs(r - center[i]) > 1e-12 && (r == box->lo[i] || r == box->hi[i])))
          cell.projected = true;
      }
      g.ids_.push_back(g.linear_id(corner));
      g.cells_.push_back(std::move(cell));
    }
    std::size_t d = k;
    bool done = false;
    while (true) {
      if (d == 0) {
        done = true;
        break;
      }
      --d;
      if (++corner[d] < per_axis) break;
      corner[d] = 0;
    }
    if (done) break;
  }
  if (g.cells_.empty()) throw DomainError("parameter grid has no cells intersecting Theta");
  g.header_bits_ = 0;
  while ((std::uint64_t{1} << g.header_bits_) < g.cells_.size()) ++g.header_bits_;
  return g;
}

std::size_t ParamGrid::locate(const ParamVector& theta) const {
  const std::size_t k = dim();
  const std::int64_t per_axis = static_cast<std::int64_t>(per_unit_) * side_;
  std::vector<std::int64_t> corner(k);
  for (std::size_t i = 0; i < k; ++i) {
    corner[i] = axis_cell((theta[i] - lower_[i]) * per_unit_, per_axis);
    if (corner[i] < 0 || corner[i] >= per_axis) return cells_.size();
  }
  auto find = [&](const std::vector<std::int64_t>& c) -> std::size_t {
    const auto id = linear_id(c);
    auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    return (it != ids_.end() && *it == id) ? static_cast<std::size_t>(it - ids_.begin()) : cells_.size();
  };
  std::size_t idx = find(corner);
  if (idx < cells_.size()) return idx;

  // Rounding can put a point of Theta into a neighbouring cell that misses
  // Theta; take the smallest kept neighbour whose closure holds theta.
  const double tol = 1e-9;
  std::size_t best = cells_.size();
  std::vector<std::int64_t> probe(k);
  std::size_t total = 1;
  for (std::size_t i = 0; i < k; ++i) total *= 3;
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    bool ok = true;
    for (std::size_t i = 0; i < k; ++i) {
      probe[i] = corner[i] + static_cast<std::int64_t>(c % 3) - 1;
      c /= 3;
      if (probe[i] < 0 || probe[i] >= per_axis) ok = false;
    }
    if (!ok) continue;
    for (std::size_t i = 0; i < k && ok; ++i) {
      const double u = (theta[i] - lower_[i]) * per_unit_;
      ok = u >= static_cast<double>(probe[i]) - tol && u <= static_cast<double>(probe[i] + 1) + tol;
    }
    if (!ok) continue;
    const std::size_t cand = find(probe);
    if (cand < best) best = cand;
  }
  return best;
}

bool ParamGrid::in_theta(const ParamVector& theta, double tol) const {
  if (theta.size() != dim()) return false;
  if (simplex_) {
    double sum = 0.0;
    for (double v : theta.coords) {
      if (!(v >= -tol)) return false;
      sum += v;
    }
    return std::abs(sum - 1.0) <= tol;
  }
  for (std::size_t i = 0; i < theta.size(); ++i)
    if (!(theta[i] >= box_.lo[i] - tol && theta[i] <= box_.hi[i] + tol)) return false;
  return true;
}

HeaderBits encode_param(const ParamGrid& grid, const ParamVector& theta) {
  if (theta.size() != grid.dim()) throw DomainError("parameter dimension does not match the grid");
  if (!grid.in_theta(theta, 1e-9))
    throw DomainError("parameter (" + to_string(theta) + ") is outside Theta");
  const std::size_t idx = grid.locate(theta);
  if (idx >= grid.cell_count()) throw DomainError("parameter (" + to_string(theta) + ") lies in no grid cell");
  return HeaderBits{static_cast<std::uint64_t>(idx), grid.header_bits()};
}

const ParamVector& decode_param(const ParamGrid& grid, const HeaderBits& bits) {
  if (bits.width != grid.header_bits()) throw FormatError("header width does not match the parameter grid");
  if (bits.value >= grid.cell_count())
    throw FormatError("header value " + std::to_string(bits.value) + " exceeds the cell count " +
                      std::to_string(grid.cell_count()));
  return grid.cells()[bits.value].representative;
}

}  // namespace uq
