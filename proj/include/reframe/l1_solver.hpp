#pragma once

// Interior-point solver for weighted L1 programs
//
//   minimize    sum_i w_i |a_i^T x - b_i|
//   subject to  l_j <= g_j^T x <= u_j,   lo_k <= x_k <= hi_k  (all finite)
//
// Every absolute value becomes a pair of non-negative slacks (a^T x - b = t+ - t-)
// and every ranged row one bounded slack, giving a standard-form LP whose slack
// columns each touch a single row. The Newton system is therefore reduced to an
// n x n system in the original variables, which is banded for camera paths.
// After convergence an active-set projection moves the iterate onto the exact
// optimal face so that zero terms come out exactly zero.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "reframe/error.hpp"

namespace reframe::lp {

using Coefficients = std::vector<std::pair<int, double>>;

class L1Program {
 public:
  struct AbsTerm {
    Coefficients coef;
    double target = 0.0;
    double weight = 1.0;
  };
  struct Range {
    Coefficients coef;
    double lo = 0.0;
    double hi = 0.0;
  };

  explicit L1Program(int variables)
      : lower_(static_cast<std::size_t>(variables), 0.0), upper_(static_cast<std::size_t>(variables), 0.0) {}

  int variable_count() const { return static_cast<int>(lower_.size()); }
  const std::vector<AbsTerm>& terms() const { return terms_; }
  const std::vector<Range>& ranges() const { return ranges_; }
  double lower(int j) const { return lower_[static_cast<std::size_t>(j)]; }
  double upper(int j) const { return upper_[static_cast<std::size_t>(j)]; }

  void set_bounds(int j, double lo, double hi) {
    if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi))
      fail(ErrorKind::infeasible, "variable " + std::to_string(j) + " has empty or infinite bounds");
    lower_.at(static_cast<std::size_t>(j)) = lo;
    upper_.at(static_cast<std::size_t>(j)) = hi;
  }
  void fix(int j, double value) { set_bounds(j, value, value); }
  bool is_fixed(int j) const { return lower(j) == upper(j); }

  /// weight * |coef . x - target|; terms with zero weight are dropped.
  void add_abs_term(Coefficients coef, double target, double weight) {
    if (weight < 0.0) fail(ErrorKind::invalid_input, "negative term weight");
    if (weight == 0.0) return;
    terms_.push_back({std::move(coef), target, weight});
  }

  void add_range(Coefficients coef, double lo, double hi) {
    if (!(lo <= hi)) fail(ErrorKind::infeasible, "empty constraint range");
    ranges_.push_back({std::move(coef), lo, hi});
  }

  static double dot(const Coefficients& c, std::span<const double> x) {
    double s = 0.0;
    for (const auto& [j, a] : c) s += a * x[static_cast<std::size_t>(j)];
    return s;
  }

  double objective(std::span<const double> x) const {
    double f = 0.0;
    for (const auto& t : terms_) f += t.weight * std::abs(dot(t.coef, x) - t.target);
    return f;
  }

  /// Largest violation of any bound or range row.
  double max_violation(std::span<const double> x) const {
    double v = 0.0;
    for (int j = 0; j < variable_count(); ++j) {
      const double xj = x[static_cast<std::size_t>(j)];
      v = std::max({v, lower(j) - xj, xj - upper(j)});
    }
    for (const auto& r : ranges_) {
      const double g = dot(r.coef, x);
      v = std::max({v, r.lo - g, g - r.hi});
    }
    return v;
  }

 private:
  std::vector<double> lower_, upper_;
  std::vector<AbsTerm> terms_;
  std::vector<Range> ranges_;
};

struct SolveOptions {
  double gap_tolerance = 1e-9;  // relative duality gap at which the interior point stops
  double feasibility_tolerance = 1e-9;
  int max_iterations = 200;
  bool polish = true;
  double active_tolerance = 1e-7;  // in normalised units, for active-set detection
};

struct SolveResult {
  std::vector<double> x;
  double objective = 0.0;
  double relative_gap = 0.0;
  int iterations = 0;
  bool polished = false;
};

namespace detail {

using SpMat = Eigen::SparseMatrix<double>;
using SpRowMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// Standard-form image of an L1Program, with fixed variables substituted out and
// all data scaled to O(1).
struct StandardForm {
  int n = 0;   // free original variables
  int mt = 0;  // abs terms
  int mr = 0;  // ranged rows
  SpRowMat Ax;  // (mt + mr) x n
  SpMat AxT;
  Vec b;       // row right-hand sides
  Vec xi_u;    // upper bounds of shifted free variables (lower is 0)
  Vec w;       // term weights (scaled)
  Vec r_u;     // range widths

  int N() const { return n + 2 * mt + mr; }
  int m() const { return mt + mr; }
};

struct Iterate {
  Vec z, s, wb, v, y;  // wb, v live on bounded columns only: xi and range slacks
};

class Newton {
 public:
  explicit Newton(const StandardForm& sf) : sf_(sf) {}

  // Solve the reduced Newton system through the quasi-definite augmented matrix
  //   [ -D_x  A_x^T ] [dxi]   [rho_x]
  //   [ A_x   Lam   ] [dy ] = [q_s  ]
  // where Lam collects the slack columns of each row. A small regularisation keeps
  // the factorisation stable; refinement against the exact operator removes it.
  // D: column scaling (size N), rho: dual rhs (N), rb: primal rhs (m).
  bool solve(const Vec& D, const Vec& rho, const Vec& rb, Vec& dz, Vec& dy) {
    const int n = sf_.n, mt = sf_.mt, mr = sf_.mr, m = sf_.m();
    Vec lam(m);
    Vec qs = rb;
    for (int i = 0; i < mt; ++i) {
      lam[i] = 1.0 / D[n + i] + 1.0 / D[n + mt + i];
      qs[i] += -rho[n + i] / D[n + i] + rho[n + mt + i] / D[n + mt + i];
    }
    for (int j = 0; j < mr; ++j) {
      lam[mt + j] = 1.0 / D[n + 2 * mt + j];
      qs[mt + j] -= rho[n + 2 * mt + j] / D[n + 2 * mt + j];
    }
    const Vec Dx = D.head(n);

    constexpr double reg = 1e-10;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(n + m + 2 * sf_.Ax.nonZeros()));
    for (int j = 0; j < n; ++j) trip.emplace_back(j, j, -(Dx[j] + reg));
    for (int i = 0; i < m; ++i) trip.emplace_back(n + i, n + i, lam[i] + reg);
    for (int i = 0; i < m; ++i)
      for (SpRowMat::InnerIterator e(sf_.Ax, i); e; ++e) {
        trip.emplace_back(n + i, static_cast<int>(e.col()), e.value());
        trip.emplace_back(static_cast<int>(e.col()), n + i, e.value());
      }
    SpMat K(n + m, n + m);
    K.setFromTriplets(trip.begin(), trip.end());
    if (!analyzed_) {
      ldlt_.analyzePattern(K);
      analyzed_ = true;
    }
    ldlt_.factorize(K);
    if (ldlt_.info() != Eigen::Success) return false;

    Vec rhs(n + m);
    rhs.head(n) = rho.head(n);
    rhs.tail(m) = qs;
    auto apply_exact = [&](const Vec& v) {
      Vec out(n + m);
      out.head(n) = -Dx.cwiseProduct(v.head(n)) + sf_.AxT * v.tail(m);
      out.tail(m) = sf_.Ax * v.head(n) + lam.cwiseProduct(v.tail(m));
      return out;
    };
    Vec sol = ldlt_.solve(rhs);
    for (int r = 0; r < 3; ++r) {
      const Vec res = rhs - apply_exact(sol);
      if (!(res.cwiseAbs().maxCoeff() > 1e-15 * (1.0 + rhs.cwiseAbs().maxCoeff()))) break;
      sol += ldlt_.solve(res);
    }
    dy = sol.tail(m);
    dz = (apply_AT(dy) - rho).cwiseQuotient(D);
    dz.head(n) = sol.head(n);
    return dy.allFinite() && dz.allFinite();
  }

  Vec apply_A(const Vec& z) const {
    const int n = sf_.n, mt = sf_.mt, mr = sf_.mr;
    Vec out = sf_.Ax * z.head(n);
    for (int i = 0; i < mt; ++i) out[i] += -z[n + i] + z[n + mt + i];
    for (int j = 0; j < mr; ++j) out[mt + j] -= z[n + 2 * mt + j];
    return out;
  }

  Vec apply_AT(const Vec& y) const {
    const int n = sf_.n, mt = sf_.mt, mr = sf_.mr;
    Vec out(sf_.N());
    out.head(n) = sf_.AxT * y;
    for (int i = 0; i < mt; ++i) {
      out[n + i] = -y[i];
      out[n + mt + i] = y[i];
    }
    for (int j = 0; j < mr; ++j) out[n + 2 * mt + j] = -y[mt + j];
    return out;
  }

 private:
  const StandardForm& sf_;
  Eigen::SimplicialLDLT<SpMat> ldlt_;
  bool analyzed_ = false;
};

inline double max_step(const Vec& x, const Vec& dx) {
  double a = 1.0;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (dx[i] < 0.0) a = std::min(a, -x[i] / dx[i]);
  return a;
}

}  // namespace detail

/// Solve an L1Program to the requested relative gap; throws ErrorKind::infeasible when
/// the interior point method cannot reach a feasible optimum.
// Undo rounding from the normalised coordinates: a free variable sitting within `tol` of the
// target of a term on that variable alone is set to the target when nothing gets worse.
inline void snap_to_targets(const L1Program& prog, SolveResult& r, double tol) {
  std::vector<double> x = r.x;
  bool changed = false;
  for (const auto& t : prog.terms()) {
    if (t.coef.size() != 1 || std::abs(t.coef[0].second) != 1.0) continue;
    const int j = t.coef[0].first;
    if (prog.is_fixed(j)) continue;
    const double v = t.target * t.coef[0].second;
    auto& xj = x[static_cast<std::size_t>(j)];
    if (xj != v && std::abs(xj - v) <= tol && v >= prog.lower(j) && v <= prog.upper(j)) {
      xj = v;
      changed = true;
    }
  }
  if (!changed) return;
  const double obj = prog.objective(x);
  if (obj <= r.objective && prog.max_violation(x) <= std::max(prog.max_violation(r.x), tol)) {
    r.x = std::move(x);
    r.objective = obj;
  }
}

inline SolveResult solve(const L1Program& prog, const SolveOptions& opt = {}) {
  using namespace detail;
  const int n_all = prog.variable_count();

  // Fixed variables are substituted; the rest are shifted to [0, hi - lo].
  std::vector<int> free_index(static_cast<std::size_t>(n_all), -1);
  std::vector<int> free_vars;
  for (int j = 0; j < n_all; ++j)
    if (!prog.is_fixed(j)) {
      free_index[static_cast<std::size_t>(j)] = static_cast<int>(free_vars.size());
      free_vars.push_back(j);
    }

  // Data scale and weight scale, so that the problem the iteration sees is O(1).
  double unit = 0.0;
  for (int j = 0; j < n_all; ++j) unit = std::max({unit, std::abs(prog.lower(j)), std::abs(prog.upper(j))});
  for (const auto& t : prog.terms()) unit = std::max(unit, std::abs(t.target));
  for (const auto& r : prog.ranges()) unit = std::max({unit, std::abs(r.lo), std::abs(r.hi)});
  if (unit == 0.0) unit = 1.0;
  double wmax = 0.0;
  for (const auto& t : prog.terms()) wmax = std::max(wmax, t.weight);
  if (wmax == 0.0) wmax = 1.0;

  std::vector<double> base(static_cast<std::size_t>(n_all));
  for (int j = 0; j < n_all; ++j) base[static_cast<std::size_t>(j)] = prog.lower(j) / unit;

  StandardForm sf;
  sf.n = static_cast<int>(free_vars.size());
  sf.mt = static_cast<int>(prog.terms().size());
  sf.mr = static_cast<int>(prog.ranges().size());
  const int n = sf.n, mt = sf.mt, mr = sf.mr, m = sf.m();

  std::vector<Eigen::Triplet<double>> trip;
  sf.b.resize(m);
  sf.w.resize(mt);
  sf.r_u.resize(mr);
  auto add_row = [&](int row, const Coefficients& coef) {
    double offset = 0.0;
    for (const auto& [j, a] : coef) {
      offset += a * base[static_cast<std::size_t>(j)];
      const int f = free_index[static_cast<std::size_t>(j)];
      if (f >= 0) trip.emplace_back(row, f, a);
    }
    return offset;
  };
  for (int i = 0; i < mt; ++i) {
    const auto& t = prog.terms()[static_cast<std::size_t>(i)];
    sf.b[i] = t.target / unit - add_row(i, t.coef);
    sf.w[i] = t.weight / wmax;
  }
  constexpr double min_width = 1e-10;
  for (int j = 0; j < mr; ++j) {
    const auto& r = prog.ranges()[static_cast<std::size_t>(j)];
    const double off = add_row(mt + j, r.coef);
    sf.b[mt + j] = r.lo / unit - off;
    sf.r_u[j] = std::max((r.hi - r.lo) / unit, min_width);
  }
  sf.Ax.resize(m, n);
  sf.Ax.setFromTriplets(trip.begin(), trip.end());
  sf.Ax.makeCompressed();
  sf.AxT = SpMat(sf.Ax.transpose());
  sf.xi_u.resize(n);
  for (int f = 0; f < n; ++f) {
    const int j = free_vars[static_cast<std::size_t>(f)];
    sf.xi_u[f] = std::max((prog.upper(j) - prog.lower(j)) / unit, min_width);
  }

  auto assemble = [&](const Vec& xi) {
    std::vector<double> x(static_cast<std::size_t>(n_all));
    for (int j = 0; j < n_all; ++j) x[static_cast<std::size_t>(j)] = prog.lower(j);
    for (int f = 0; f < n; ++f) {
      const int j = free_vars[static_cast<std::size_t>(f)];
      x[static_cast<std::size_t>(j)] = std::clamp(prog.lower(j) + xi[f] * unit, prog.lower(j), prog.upper(j));
    }
    return x;
  };

  SolveResult result;
  if (n == 0) {
    result.x = assemble(Vec());
    result.objective = prog.objective(result.x);
    return result;
  }

  const int N = sf.N();
  // Bounded columns: xi (n) and range slacks (mr). Index map into wb/v vectors.
  const int nb = n + mr;
  Vec u_b(nb);
  u_b.head(n) = sf.xi_u;
  u_b.tail(mr) = sf.r_u;
  Vec c = Vec::Zero(N);
  c.segment(n, mt) = sf.w;
  c.segment(n + mt, mt) = sf.w;

  Newton newton(sf);
  Iterate it;
  it.z.resize(N);
  it.z.head(n) = 0.5 * sf.xi_u;
  {
    Vec r = sf.Ax.topRows(mt) * it.z.head(n) - sf.b.head(mt);
    for (int i = 0; i < mt; ++i) {
      it.z[n + i] = std::max(r[i], 0.0) + 1.0;
      it.z[n + mt + i] = std::max(-r[i], 0.0) + 1.0;
    }
  }
  it.z.tail(mr) = 0.5 * sf.r_u;
  it.wb.resize(nb);
  it.wb.head(n) = sf.xi_u - it.z.head(n);
  it.wb.tail(mr) = sf.r_u - it.z.tail(mr);
  it.s = Vec::Ones(N);
  it.v = Vec::Ones(nb);
  it.y = Vec::Zero(m);

  auto gather_b = [&](const Vec& full) {
    Vec out(nb);
    out.head(n) = full.head(n);
    out.tail(mr) = full.tail(mr);
    return out;
  };
  auto scatter_b = [&](const Vec& bvec) {
    Vec out = Vec::Zero(N);
    out.head(n) = bvec.head(n);
    out.tail(mr) = bvec.tail(mr);
    return out;
  };

  const double b_norm = 1.0 + sf.b.cwiseAbs().maxCoeff();
  const double c_norm = 1.0 + c.cwiseAbs().maxCoeff();
  const double u_norm = 1.0 + u_b.cwiseAbs().maxCoeff();
  bool converged = false;
  int iter = 0;
  double gap = std::numeric_limits<double>::infinity();

  for (; iter < opt.max_iterations; ++iter) {
    const Vec rb = sf.b - newton.apply_A(it.z);
    const Vec ru = u_b - gather_b(it.z) - it.wb;
    const Vec rc = c - newton.apply_AT(it.y) - it.s + scatter_b(it.v);
    const double pobj = c.dot(it.z);
    const double dobj = sf.b.dot(it.y) - u_b.dot(it.v);
    gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj));
    const double pinf = std::max(rb.cwiseAbs().maxCoeff() / b_norm, ru.size() ? ru.cwiseAbs().maxCoeff() / u_norm : 0.0);
    const double dinf = rc.cwiseAbs().maxCoeff() / c_norm;
    if (pinf <= opt.feasibility_tolerance && dinf <= opt.feasibility_tolerance && gap <= opt.gap_tolerance) {
      converged = true;
      break;
    }

    Vec D = it.s.cwiseQuotient(it.z);
    D += scatter_b(it.v.cwiseQuotient(it.wb));

    // rho = r_c - Z^{-1} r_zs + W^{-1}(r_wv - V r_u), with r_zs, r_wv supplied per step.
    auto direction = [&](const Vec& r_zs, const Vec& r_wv, Vec& dz, Vec& dy, Vec& ds, Vec& dw, Vec& dv) {
      Vec rho = rc - r_zs.cwiseQuotient(it.z) + scatter_b((r_wv - it.v.cwiseProduct(ru)).cwiseQuotient(it.wb));
      if (!newton.solve(D, rho, rb, dz, dy)) return false;
      ds = (r_zs - it.s.cwiseProduct(dz)).cwiseQuotient(it.z);
      dw = ru - gather_b(dz);
      dv = (r_wv - it.v.cwiseProduct(dw)).cwiseQuotient(it.wb);
      return true;
    };

    Vec dz, dy, ds, dw, dv;
    const Vec zs = it.z.cwiseProduct(it.s);
    const Vec wv = it.wb.cwiseProduct(it.v);
    if (!direction(-zs, -wv, dz, dy, ds, dw, dv)) break;
    double ap = std::min(max_step(it.z, dz), max_step(it.wb, dw));
    double ad = std::min(max_step(it.s, ds), max_step(it.v, dv));
    const double denom = static_cast<double>(N + nb);
    const double mu = (zs.sum() + wv.sum()) / denom;
    const double mu_aff = ((it.z + ap * dz).dot(it.s + ad * ds) + (it.wb + ap * dw).dot(it.v + ad * dv)) / denom;
    const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);

    const Vec r_zs = Vec::Constant(N, sigma * mu) - zs - dz.cwiseProduct(ds);
    const Vec r_wv = Vec::Constant(nb, sigma * mu) - wv - dw.cwiseProduct(dv);
    if (!direction(r_zs, r_wv, dz, dy, ds, dw, dv)) break;
    const double eta = std::max(0.99, 1.0 - 10.0 * mu);
    ap = std::min(1.0, eta * std::min(max_step(it.z, dz), max_step(it.wb, dw)));
    ad = std::min(1.0, eta * std::min(max_step(it.s, ds), max_step(it.v, dv)));
    it.z += ap * dz;
    it.wb += ap * dw;
    it.s += ad * ds;
    it.v += ad * dv;
    it.y += ad * dy;
  }
  if (!converged) {
    // Accept a stalled iterate only when it is feasible and practically optimal.
    const Vec rb = sf.b - newton.apply_A(it.z);
    if (!(rb.cwiseAbs().maxCoeff() / b_norm <= 1e-6 && gap <= std::max(1e-6, opt.gap_tolerance)))
      fail(ErrorKind::infeasible, "L1 program is infeasible or the interior point method stalled (gap " +
                                      std::to_string(gap) + ")");
  }

  Vec xi = it.z.head(n).cwiseMax(0.0).cwiseMin(sf.xi_u);
  result.iterations = iter;
  result.relative_gap = gap;
  result.x = assemble(xi);
  result.objective = prog.objective(result.x);

  if (!opt.polish) return result;

  // Active-set projection: force near-zero terms and near-tight bounds to be exact,
  // moving the iterate as little as possible.
  const double delta = opt.active_tolerance;
  std::vector<Eigen::Triplet<double>> mt_trip;
  std::vector<double> rhs;
  const Vec axi = sf.Ax * xi;
  int rows = 0;
  for (int i = 0; i < mt; ++i)
    if (std::abs(axi[i] - sf.b[i]) <= delta) {
      for (SpRowMat::InnerIterator e(sf.Ax, i); e; ++e) mt_trip.emplace_back(rows, static_cast<int>(e.col()), e.value());
      rhs.push_back(sf.b[i]);
      ++rows;
    }
  for (int j = 0; j < mr; ++j) {
    const double g = axi[mt + j];
    const double lo = sf.b[mt + j];
    const double hi = lo + sf.r_u[j];
    double target = std::numeric_limits<double>::quiet_NaN();
    if (sf.r_u[j] <= min_width)
      target = lo;
    else if (g - lo <= delta)
      target = lo;
    else if (hi - g <= delta)
      target = hi;
    if (std::isnan(target)) continue;
    for (SpRowMat::InnerIterator e(sf.Ax, mt + j); e; ++e) mt_trip.emplace_back(rows, static_cast<int>(e.col()), e.value());
    rhs.push_back(target);
    ++rows;
  }
  for (int f = 0; f < n; ++f) {
    if (xi[f] <= delta) {
      mt_trip.emplace_back(rows++, f, 1.0);
      rhs.push_back(0.0);
    } else if (sf.xi_u[f] - xi[f] <= delta) {
      mt_trip.emplace_back(rows++, f, 1.0);
      rhs.push_back(sf.xi_u[f]);
    }
  }
  if (rows == 0) return result;

  SpRowMat M(rows, n);
  M.setFromTriplets(mt_trip.begin(), mt_trip.end());
  const Vec target = Eigen::Map<const Vec>(rhs.data(), rows);
  SpMat MMt = SpMat(M * SpMat(M.transpose()));
  const double eps = 1e-11 * std::max(1.0, MMt.diagonal().maxCoeff());
  for (int r = 0; r < rows; ++r) MMt.coeffRef(r, r) += eps;
  Eigen::SimplicialLDLT<SpMat> proj(MMt);
  if (proj.info() != Eigen::Success) return result;
  Vec xp = xi;
  double res_norm = 0.0;
  for (int k = 0; k < 60; ++k) {
    const Vec res = target - M * xp;
    res_norm = res.cwiseAbs().maxCoeff();
    if (res_norm <= 1e-14) break;
    xp += M.transpose() * proj.solve(res);
  }
  if (!(res_norm <= 1e-11) || !xp.allFinite()) return result;
  xp = xp.cwiseMax(0.0).cwiseMin(sf.xi_u);

  auto polished = assemble(xp);
  const double before = result.objective;
  const double after = prog.objective(polished);
  const double slack = std::max(1e-9, opt.gap_tolerance) * (1.0 + std::abs(before));
  const double viol_before = prog.max_violation(result.x);
  const double viol_after = prog.max_violation(polished);
  if (after <= before + slack && viol_after <= std::max(viol_before, 1e-9 * unit)) {
    result.x = std::move(polished);
    result.objective = after;
    result.polished = true;
  }
  snap_to_targets(prog, result, 1e-9 * unit);
  return result;
}

}  // namespace reframe::lp
