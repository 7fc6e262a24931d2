#pragma once

// Conditionally structured Gaussian variational family.
//
//   q(thetaG)          = N(mu1, (C1 C1')^{-1})
//   q(thetaL | thetaG) = N(mu2, (C2 C2')^{-1})
//   mu2                = d + C2^{-T} D (mu1 - thetaG)
//   vech(C2*)          = f + F thetaG       (on the banded pattern only)
//
// Draws are generated as thetaG = mu1 + C1^{-T} s1 and
// thetaL = d + C2^{-T} (s2 - D C1^{-T} s1). Nothing here ever forms a
// Kronecker product or an elimination matrix; every gradient is two triangular
// solves plus pattern-restricted outer products.

#include "csgva/linalg.hpp"
#include "csgva/types.hpp"

#include <cassert>
#include <cmath>
#include <numbers>
#include <string>

namespace csgva {

/// Storage for the six blocks of lambda. Shared by parameters and gradients.
struct LambdaBlocks {
  Vector mu1;     // G
  Vector c1star;  // vech(C1*), G(G+1)/2
  Vector d;       // nL
  Matrix D;       // nL x G
  Vector f;       // pattern of vech(C2*), P
  Matrix F;       // P x G, rows follow the pattern

  Index flat_size() const {
    return mu1.size() + c1star.size() + d.size() + D.size() + f.size() + F.size();
  }

  /// Concatenation (mu1, vech(C1*), d, vec(D), f, vec(F)), vec column-major.
  Vector flatten() const {
    Vector out(flat_size());
    Index k = 0;
    auto put = [&](const auto& block) {
      out.segment(k, block.size()) = Eigen::Map<const Vector>(block.data(), block.size());
      k += block.size();
    };
    put(mu1);
    put(c1star);
    put(d);
    put(D);
    put(f);
    put(F);
    return out;
  }

  void assign_flat(const Vector& flat) {
    if (flat.size() != flat_size()) throw InvalidArgument("assign_flat: size mismatch");
    Index k = 0;
    auto take = [&](auto& block) {
      Eigen::Map<Vector>(block.data(), block.size()) = flat.segment(k, block.size());
      k += block.size();
    };
    take(mu1);
    take(c1star);
    take(d);
    take(D);
    take(f);
    take(F);
  }

  bool all_finite() const {
    return mu1.allFinite() && c1star.allFinite() && d.allFinite() && D.allFinite() &&
           f.allFinite() && F.allFinite();
  }

  void set_zero() {
    mu1.setZero();
    c1star.setZero();
    d.setZero();
    D.setZero();
    f.setZero();
    F.setZero();
  }

 protected:
  void resize_like(const LambdaBlocks& o) {
    mu1.resize(o.mu1.size());
    c1star.resize(o.c1star.size());
    d.resize(o.d.size());
    D.resize(o.D.rows(), o.D.cols());
    f.resize(o.f.size());
    F.resize(o.F.rows(), o.F.cols());
  }
};

struct LambdaGradient;

class VariationalParams : public LambdaBlocks {
 public:
  VariationalParams() = default;

  /// lambda = 0: standard normal q (C1 = I, C2 = I).
  static VariationalParams zeros(const ModelDims& dims, bool gaussian_mode = false) {
    VariationalParams p;
    p.global_pattern = full_pattern(dims.G);
    p.local_pattern = build_pattern(dims.n, dims.L, dims.ell);
    const Index P = p.local_pattern->size();
    p.mu1 = Vector::Zero(dims.G);
    p.c1star = Vector::Zero(p.global_pattern->size());
    p.d = Vector::Zero(dims.local_dim());
    p.D = Matrix::Zero(dims.local_dim(), dims.G);
    p.f = Vector::Zero(P);
    p.F = Matrix::Zero(P, dims.G);
    p.gaussian_mode = gaussian_mode;
    return p;
  }

  ModelDims dims() const {
    return {global_dim(), local_pattern->blocks(), local_pattern->block_size(),
            local_pattern->bandwidth()};
  }
  Index global_dim() const { return mu1.size(); }
  Index local_dim() const { return d.size(); }

  LowerFactor global_star() const { return LowerFactor(global_pattern, c1star); }
  LowerFactor global_factor() const { return star_to_factor(global_star()); }

  /// Throws when block shapes disagree with the patterns.
  void validate() const {
    if (!global_pattern || !local_pattern) throw InvalidArgument("VariationalParams: missing pattern");
    const Index G = mu1.size();
    const Index nL = d.size();
    const Index P = local_pattern->size();
    if (global_pattern->dim() != G || c1star.size() != global_pattern->size() ||
        local_pattern->dim() != nL || D.rows() != nL || D.cols() != G || f.size() != P ||
        F.rows() != P || F.cols() != G) {
      throw InvalidArgument("VariationalParams: block shapes inconsistent with (G, n, L, ell)");
    }
  }

  PatternPtr global_pattern;
  PatternPtr local_pattern;
  bool gaussian_mode = false;
};

struct LambdaGradient : LambdaBlocks {
  static LambdaGradient zeros_like(const LambdaBlocks& shape) {
    LambdaGradient g;
    g.resize_like(shape);
    g.set_zero();
    return g;
  }

  LambdaGradient& operator+=(const LambdaGradient& o) {
    mu1 += o.mu1;
    c1star += o.c1star;
    d += o.d;
    D += o.D;
    f += o.f;
    F += o.F;
    return *this;
  }

  LambdaGradient& operator-=(const LambdaGradient& o) {
    mu1 -= o.mu1;
    c1star -= o.c1star;
    d -= o.d;
    D -= o.D;
    f -= o.f;
    F -= o.F;
    return *this;
  }

  LambdaGradient& operator*=(double a) {
    mu1 *= a;
    c1star *= a;
    d *= a;
    D *= a;
    f *= a;
    F *= a;
    return *this;
  }

  /// this += a * o
  void add_scaled(double a, const LambdaGradient& o) {
    mu1 += a * o.mu1;
    c1star += a * o.c1star;
    d += a * o.d;
    D += a * o.D;
    f += a * o.f;
    F += a * o.F;
  }
};

/// One reparametrized sample with the quantities every gradient reuses.
struct Draw {
  Vector s1;
  Vector s2;
  Vector thetaG;
  Vector thetaL;
  Vector mu2;
  LowerFactor C1;
  LowerFactor C2;

  Vector s() const {
    Vector out(s1.size() + s2.size());
    out << s1, s2;
    return out;
  }
  Vector theta() const {
    Vector out(thetaG.size() + thetaL.size());
    out << thetaG, thetaL;
    return out;
  }
};

struct ConditionalParams {
  Vector mu2;
  LowerFactor C2;
};

/// C2 from vech(C2*) = f + F thetaG, and mu2 = d + C2^{-T} D (mu1 - thetaG).
inline ConditionalParams conditional_params(const VariationalParams& lambda, const Vector& thetaG) {
  Vector c2star = lambda.f;
  if (!lambda.gaussian_mode) c2star.noalias() += lambda.F * thetaG;
  if (!c2star.allFinite()) {
    throw NonFiniteParameter("conditional_params: vech(C2*) has non-finite entries");
  }
  LowerFactor C2 = star_to_factor(LowerFactor(lambda.local_pattern, std::move(c2star)));
  Vector mu2 = lambda.d + solve_upper_transpose(C2, lambda.D * (lambda.mu1 - thetaG));
  return {std::move(mu2), std::move(C2)};
}

/// theta = r_lambda(s) with s = (s1, s2).
inline Draw reparam(const VariationalParams& lambda, const Vector& s) {
  const Index G = lambda.global_dim();
  const Index nL = lambda.local_dim();
  if (s.size() != G + nL) throw InvalidArgument("reparam: s has wrong length");
  Draw draw;
  draw.s1 = s.head(G);
  draw.s2 = s.tail(nL);
  draw.C1 = lambda.global_factor();
  const Vector z = solve_upper_transpose(draw.C1, draw.s1);
  draw.thetaG = lambda.mu1 + z;
  Vector c2star = lambda.f;
  if (!lambda.gaussian_mode) c2star.noalias() += lambda.F * draw.thetaG;
  if (!c2star.allFinite()) throw NonFiniteParameter("reparam: vech(C2*) has non-finite entries");
  draw.C2 = star_to_factor(LowerFactor(lambda.local_pattern, std::move(c2star)));
  const Vector Dz = lambda.D * z;
  draw.thetaL = lambda.d + solve_upper_transpose(draw.C2, draw.s2 - Dz);
  draw.mu2 = lambda.d - solve_upper_transpose(draw.C2, Dz);
  return draw;
}

/// Recovers s (and the cached draw) from theta.
inline Draw inverse_reparam(const VariationalParams& lambda, const Vector& theta) {
  const Index G = lambda.global_dim();
  const Index nL = lambda.local_dim();
  if (theta.size() != G + nL) throw InvalidArgument("inverse_reparam: theta has wrong length");
  Draw draw;
  draw.thetaG = theta.head(G);
  draw.thetaL = theta.tail(nL);
  draw.C1 = lambda.global_factor();
  const Vector x = draw.thetaG - lambda.mu1;
  draw.s1 = draw.C1.multiply_transpose(x);
  auto cond = conditional_params(lambda, draw.thetaG);
  draw.C2 = std::move(cond.C2);
  draw.mu2 = std::move(cond.mu2);
  draw.s2 = draw.C2.multiply_transpose(draw.thetaL - draw.mu2);
  return draw;
}

/// log q(thetaG) + log q(thetaL | thetaG) = -(dim/2) log 2pi + log|C1 C2| - s's/2.
inline double log_density(const VariationalParams& lambda, const Draw& draw) {
  const double dim = static_cast<double>(lambda.global_dim() + lambda.local_dim());
  return -0.5 * dim * std::log(2.0 * std::numbers::pi) + draw.C1.log_det() + draw.C2.log_det() -
         0.5 * (draw.s1.squaredNorm() + draw.s2.squaredNorm());
}

/// Gradient of log q_lambda(theta) in theta, ordered (thetaG, thetaL).
inline Vector grad_theta_log_density(const VariationalParams& lambda, const Draw& draw) {
  const Index G = lambda.global_dim();
  const Index nL = lambda.local_dim();
  Vector out(G + nL);
  Vector gG = -draw.C1.multiply(draw.s1);
  gG.noalias() -= lambda.D.transpose() * draw.s2;
  if (!lambda.gaussian_mode) {
    const IndexMap& map = lambda.local_pattern.operator*();
    Vector a = pattern_identity(map) -
               dstar_scale(draw.C2, pattern_outer_vech(draw.thetaL - lambda.d, draw.s2, map));
    gG.noalias() += lambda.F.transpose() * a;
  }
  out.head(G) = gG;
  out.tail(nL) = -draw.C2.multiply(draw.s2);
  return out;
}

/// grad_lambda r_lambda(s) applied to (g1, g2).
inline LambdaGradient apply_jacobian(const VariationalParams& lambda, const Draw& draw,
                                     const Vector& g1, const Vector& g2) {
  const IndexMap& map = *lambda.local_pattern;
  const Vector z = draw.thetaG - lambda.mu1;  // C1^{-T} s1
  const Vector v = draw.thetaL - lambda.d;    // C2^{-T} (s2 - D z)
  assert(((draw.C2.multiply_transpose(v) - (draw.s2 - lambda.D * z)).lpNorm<Eigen::Infinity>() <=
          1e-8 * (1.0 + draw.s2.lpNorm<Eigen::Infinity>())));
  const Vector u2 = solve_lower(draw.C2, g2);  // C2^{-1} g2

  LambdaGradient out;
  out.f = -dstar_scale(draw.C2, pattern_outer_vech(v, u2, map));
  Vector h = g1;
  if (lambda.gaussian_mode) {
    out.F = Matrix::Zero(lambda.F.rows(), lambda.F.cols());
    out.mu1 = g1;
  } else {
    out.F = out.f * draw.thetaG.transpose();
    const Vector via_scale = lambda.F.transpose() * out.f;
    out.mu1 = g1 + via_scale;
    h += via_scale;
  }
  h.noalias() -= lambda.D.transpose() * u2;
  const Vector y = solve_lower(draw.C1, h);  // C1^{-1} h
  out.c1star = -dstar_scale(draw.C1, pattern_outer_vech(z, y, *lambda.global_pattern));
  out.d = g2;
  out.D = -u2 * z.transpose();
  return out;
}

/// Direct score grad_lambda log q_lambda(theta) with theta held fixed.
inline LambdaGradient lambda_score(const VariationalParams& lambda, const Draw& draw) {
  const IndexMap& map = *lambda.local_pattern;
  const Vector x = draw.thetaG - lambda.mu1;
  const Vector v = draw.thetaL - lambda.d;
  LambdaGradient out;
  out.mu1 = draw.C1.multiply(draw.s1);
  out.mu1.noalias() += lambda.D.transpose() * draw.s2;
  out.c1star = pattern_identity(*lambda.global_pattern) -
               dstar_scale(draw.C1, pattern_outer_vech(x, draw.s1, *lambda.global_pattern));
  out.d = draw.C2.multiply(draw.s2);
  out.D = -draw.s2 * x.transpose();
  out.f = pattern_identity(map) - dstar_scale(draw.C2, pattern_outer_vech(v, draw.s2, map));
  if (lambda.gaussian_mode) {
    out.F = Matrix::Zero(lambda.F.rows(), lambda.F.cols());
  } else {
    out.F = out.f * draw.thetaG.transpose();
  }
  return out;
}

/// Identifies a Gaussian approximation N((muL, muG), (T T')^{-1}) with
/// T = [TLL 0; TGL TGG] as a member of the family with F = 0.
inline VariationalParams from_gva(const Vector& muG, const Vector& muL, const LowerFactor& TGG,
                                  const Matrix& TGL, const LowerFactor& TLL) {
  const Index G = muG.size();
  const Index nL = muL.size();
  if (TGG.dim() != G || TLL.dim() != nL || TGL.rows() != G || TGL.cols() != nL) {
    throw InvalidArgument("from_gva: block dimensions disagree");
  }
  if (TGG.map().size() != G * (G + 1) / 2) {
    throw InvalidArgument("from_gva: TGG must be stored on the full lower pattern");
  }
  const IndexMap& local = TLL.map();
  VariationalParams p = VariationalParams::zeros(
      {G, local.blocks(), local.block_size(), local.bandwidth()});
  if (!(*p.local_pattern == local)) throw InvalidArgument("from_gva: TLL pattern mismatch");
  p.local_pattern = TLL.map_ptr();
  p.global_pattern = TGG.map_ptr();
  p.mu1 = muG;
  p.c1star = factor_to_star(TGG).values();
  p.d = muL;
  p.D = TGL.transpose();
  p.f = factor_to_star(TLL).values();
  p.F.setZero();
  p.gaussian_mode = false;
  return p;
}

/// Materializes Omega2 = C2 C2' (tests and diagnostics only).
inline Matrix conditional_precision(const LowerFactor& C2) {
  const Matrix C = C2.to_dense();
  return C * C.transpose();
}

}  // namespace csgva
