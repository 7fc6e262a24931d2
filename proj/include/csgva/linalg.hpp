#pragma once

// Kernels for lower-triangular factors whose nonzeros lie in a block band.
//
// Storage follows vech order (column-major, diagonal-down) restricted to the
// band. Because every column of a block-banded lower-triangular matrix has a
// contiguous run of rows starting at the diagonal, a column is stored as one
// contiguous slice: column j holds rows [j, row_end(j)).

#include "csgva/types.hpp"

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace csgva {

class IndexMap {
 public:
  /// Pattern of a lower-triangular matrix made of n x n blocks of size L,
  /// keeping blocks (i, j) with 0 <= i - j <= ell.
  static IndexMap build(Index n, Index L, Index ell) {
    if (n < 1 || L < 1) {
      throw InvalidArgument("build_pattern: block count and block size must be positive");
    }
    if (ell < 0 || ell >= n) {
      throw InvalidArgument("build_pattern: bandwidth must satisfy 0 <= ell < n (ell=" +
                            std::to_string(ell) + ", n=" + std::to_string(n) + ")");
    }
    IndexMap map;
    map.n_ = n;
    map.L_ = L;
    map.ell_ = ell;
    const Index dim = n * L;
    map.col_start_.resize(static_cast<std::size_t>(dim) + 1);
    map.row_end_.resize(static_cast<std::size_t>(dim));
    Index offset = 0;
    for (Index j = 0; j < dim; ++j) {
      const Index block = j / L;
      const Index last_block = std::min(n - 1, block + ell);
      map.col_start_[j] = offset;
      map.row_end_[j] = (last_block + 1) * L;
      offset += map.row_end_[j] - j;
    }
    map.col_start_[dim] = offset;
    return map;
  }

  /// Full lower triangle of a dim x dim matrix.
  static IndexMap full(Index dim) { return build(dim, 1, dim - 1); }

  Index blocks() const { return n_; }
  Index block_size() const { return L_; }
  Index bandwidth() const { return ell_; }
  Index dim() const { return n_ * L_; }
  Index size() const { return col_start_.back(); }

  Index column_begin(Index col) const { return col_start_[col]; }
  Index row_end(Index col) const { return row_end_[col]; }
  Index diagonal_offset(Index col) const { return col_start_[col]; }

  bool contains(Index row, Index col) const {
    return col >= 0 && col < dim() && row >= col && row < row_end_[col];
  }

  /// Storage offset of (row, col), or -1 when the position is structurally zero.
  Index offset(Index row, Index col) const {
    return contains(row, col) ? col_start_[col] + (row - col) : -1;
  }

  std::vector<std::pair<Index, Index>> positions() const {
    std::vector<std::pair<Index, Index>> out;
    out.reserve(static_cast<std::size_t>(size()));
    for (Index j = 0; j < dim(); ++j) {
      for (Index i = j; i < row_end_[j]; ++i) out.emplace_back(i, j);
    }
    return out;
  }

  std::vector<bool> diagonal_mask() const {
    std::vector<bool> mask(static_cast<std::size_t>(size()), false);
    for (Index j = 0; j < dim(); ++j) mask[col_start_[j]] = true;
    return mask;
  }

  friend bool operator==(const IndexMap& a, const IndexMap& b) {
    return a.n_ == b.n_ && a.L_ == b.L_ && a.ell_ == b.ell_;
  }

 private:
  Index n_ = 0;
  Index L_ = 0;
  Index ell_ = 0;
  std::vector<Index> col_start_;
  std::vector<Index> row_end_;
};

using PatternPtr = std::shared_ptr<const IndexMap>;

inline PatternPtr build_pattern(Index n, Index L, Index ell) {
  return std::make_shared<const IndexMap>(IndexMap::build(n, L, ell));
}

inline PatternPtr full_pattern(Index dim) {
  return std::make_shared<const IndexMap>(IndexMap::full(dim));
}

/// Lower-triangular matrix stored on an IndexMap. Used both for factors
/// (positive diagonal) and for their log-diagonal "star" form.
class LowerFactor {
 public:
  LowerFactor() = default;

  LowerFactor(PatternPtr map, Vector values) : map_(std::move(map)), values_(std::move(values)) {
    if (!map_) throw InvalidArgument("LowerFactor: null pattern");
    if (values_.size() != map_->size()) {
      throw InvalidArgument("LowerFactor: expected " + std::to_string(map_->size()) +
                            " entries, got " + std::to_string(values_.size()));
    }
  }

  static LowerFactor identity(PatternPtr map) {
    Vector v = Vector::Zero(map->size());
    for (Index j = 0; j < map->dim(); ++j) v[map->diagonal_offset(j)] = 1.0;
    return LowerFactor(std::move(map), std::move(v));
  }

  static LowerFactor zeros(PatternPtr map) {
    const Index size = map->size();
    return LowerFactor(std::move(map), Vector::Zero(size));
  }

  /// Restriction of a dense matrix to the pattern (entries outside are dropped).
  static LowerFactor from_dense(PatternPtr map, const Matrix& dense) {
    if (dense.rows() != map->dim() || dense.cols() != map->dim()) {
      throw InvalidArgument("LowerFactor::from_dense: dimension mismatch");
    }
    Vector v(map->size());
    for (Index j = 0; j < map->dim(); ++j) {
      for (Index i = j; i < map->row_end(j); ++i) v[map->offset(i, j)] = dense(i, j);
    }
    return LowerFactor(std::move(map), std::move(v));
  }

  const IndexMap& map() const { return *map_; }
  const PatternPtr& map_ptr() const { return map_; }
  const Vector& values() const { return values_; }
  Vector& values() { return values_; }
  Index dim() const { return map_->dim(); }

  double operator()(Index row, Index col) const {
    const Index k = map_->offset(row, col);
    return k < 0 ? 0.0 : values_[k];
  }

  double diagonal(Index j) const { return values_[map_->diagonal_offset(j)]; }

  Matrix to_dense() const {
    Matrix out = Matrix::Zero(dim(), dim());
    for (Index j = 0; j < dim(); ++j) {
      const Index base = map_->column_begin(j);
      for (Index i = j; i < map_->row_end(j); ++i) out(i, j) = values_[base + i - j];
    }
    return out;
  }

  /// T x
  Vector multiply(const Vector& x) const {
    check_length(x, "multiply");
    Vector out = Vector::Zero(dim());
    for (Index j = 0; j < dim(); ++j) {
      const Index base = map_->column_begin(j);
      const double xj = x[j];
      for (Index i = j; i < map_->row_end(j); ++i) out[i] += values_[base + i - j] * xj;
    }
    return out;
  }

  /// T' x
  Vector multiply_transpose(const Vector& x) const {
    check_length(x, "multiply_transpose");
    Vector out(dim());
    for (Index j = 0; j < dim(); ++j) {
      const Index base = map_->column_begin(j);
      double acc = 0.0;
      for (Index i = j; i < map_->row_end(j); ++i) acc += values_[base + i - j] * x[i];
      out[j] = acc;
    }
    return out;
  }

  /// Sum of log diagonal entries.
  double log_det() const {
    double acc = 0.0;
    for (Index j = 0; j < dim(); ++j) acc += std::log(diagonal(j));
    return acc;
  }

  void check_length(const Vector& x, const char* what) const {
    if (x.size() != dim()) {
      throw InvalidArgument(std::string(what) + ": vector length " + std::to_string(x.size()) +
                            " does not match factor dimension " + std::to_string(dim()));
    }
  }

 private:
  PatternPtr map_;
  Vector values_;
};

namespace detail {

inline double checked_pivot(const LowerFactor& T, Index j) {
  const double pivot = T.diagonal(j);
  if (!(pivot > 0.0) || !std::isfinite(pivot)) {
    throw SingularFactor("triangular solve: diagonal entry " + std::to_string(j) +
                         " is not a finite positive number");
  }
  return pivot;
}

}  // namespace detail

/// Solves T x = b by forward substitution.
inline Vector solve_lower(const LowerFactor& T, const Vector& b) {
  T.check_length(b, "solve_lower");
  const IndexMap& map = T.map();
  const Vector& vals = T.values();
  Vector x = b;
  for (Index j = 0; j < T.dim(); ++j) {
    const double xj = x[j] / detail::checked_pivot(T, j);
    x[j] = xj;
    const Index base = map.column_begin(j);
    for (Index i = j + 1; i < map.row_end(j); ++i) x[i] -= vals[base + i - j] * xj;
  }
  return x;
}

/// Solves T' x = b by back substitution.
inline Vector solve_upper_transpose(const LowerFactor& T, const Vector& b) {
  T.check_length(b, "solve_upper_transpose");
  const IndexMap& map = T.map();
  const Vector& vals = T.values();
  Vector x(T.dim());
  for (Index j = T.dim() - 1; j >= 0; --j) {
    const double pivot = detail::checked_pivot(T, j);
    const Index base = map.column_begin(j);
    double acc = b[j];
    for (Index i = j + 1; i < map.row_end(j); ++i) acc -= vals[base + i - j] * x[i];
    x[j] = acc / pivot;
  }
  return x;
}

/// Exponentiates the diagonal of a star-form matrix. Overflow is allowed to
/// produce +inf; solves reject such factors.
inline LowerFactor star_to_factor(const LowerFactor& star) {
  Vector v = star.values();
  for (Index j = 0; j < star.dim(); ++j) {
    const Index k = star.map().diagonal_offset(j);
    v[k] = std::exp(v[k]);
  }
  return LowerFactor(star.map_ptr(), std::move(v));
}

inline LowerFactor factor_to_star(const LowerFactor& factor) {
  Vector v = factor.values();
  for (Index j = 0; j < factor.dim(); ++j) {
    const Index k = factor.map().diagonal_offset(j);
    v[k] = std::log(v[k]);
  }
  return LowerFactor(factor.map_ptr(), std::move(v));
}

/// Multiplies the diagonal-position entries of v by the factor's diagonal,
/// i.e. applies the Jacobian of the star map.
inline Vector dstar_scale(const LowerFactor& C, const Vector& v) {
  if (v.size() != C.map().size()) {
    throw InvalidArgument("dstar_scale: vector does not match the factor pattern");
  }
  Vector out = v;
  for (Index j = 0; j < C.dim(); ++j) {
    const Index k = C.map().diagonal_offset(j);
    out[k] *= C.values()[k];
  }
  return out;
}

/// vech(u v') evaluated only on the pattern positions.
inline Vector pattern_outer_vech(const Vector& u, const Vector& v, const IndexMap& map) {
  if (u.size() != map.dim() || v.size() != map.dim()) {
    throw InvalidArgument("pattern_outer_vech: vector lengths must equal the pattern dimension");
  }
  Vector out(map.size());
  for (Index j = 0; j < map.dim(); ++j) {
    const Index base = map.column_begin(j);
    const double vj = v[j];
    for (Index i = j; i < map.row_end(j); ++i) out[base + i - j] = u[i] * vj;
  }
  return out;
}

/// Adds vech(u v') restricted to the pattern into `acc`.
inline void accumulate_pattern_outer(const Vector& u, const Vector& v, const IndexMap& map,
                                     Vector& acc) {
  for (Index j = 0; j < map.dim(); ++j) {
    const Index base = map.column_begin(j);
    const double vj = v[j];
    for (Index i = j; i < map.row_end(j); ++i) acc[base + i - j] += u[i] * vj;
  }
}

/// vech(I) on the pattern: ones at diagonal positions.
inline Vector pattern_identity(const IndexMap& map) {
  Vector out = Vector::Zero(map.size());
  for (Index j = 0; j < map.dim(); ++j) out[map.diagonal_offset(j)] = 1.0;
  return out;
}

}  // namespace csgva
