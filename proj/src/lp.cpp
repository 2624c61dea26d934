#include "nanotile/lp.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace nanotile {

namespace {

constexpr double kEps = 1e-9;

class Tableau {
 public:
  // m constraint rows plus one objective row; last column is the rhs.
  Tableau(int m, int n) : m_(m), n_(n), t_((m + 1) * (n + 1), 0.0), basis_(m, -1) {}

  double& at(int r, int c) { return t_[static_cast<std::size_t>(r) * (n_ + 1) + c]; }
  double& rhs(int r) { return at(r, n_); }
  double& obj(int c) { return at(m_, c); }
  int& basis(int r) { return basis_[r]; }
  int rows() const { return m_; }
  int cols() const { return n_; }

  void pivot(int pr, int pc) {
    const double p = at(pr, pc);
    for (int c = 0; c <= n_; ++c) at(pr, c) /= p;
    for (int r = 0; r <= m_; ++r) {
      if (r == pr) continue;
      const double f = at(r, pc);
      if (f == 0.0) continue;
      for (int c = 0; c <= n_; ++c) at(r, c) -= f * at(pr, c);
    }
    basis_[pr] = pc;
  }

  // Minimizes the objective row over columns allowed by `usable`.
  // Returns false if unbounded.
  template <typename Usable>
  bool optimize(Usable usable) {
    for (int iter = 0; iter < 10000; ++iter) {
      int pc = -1;
      for (int c = 0; c < n_; ++c)
        if (usable(c) && obj(c) < -kEps) {
          pc = c;  // Bland: lowest index
          break;
        }
      if (pc < 0) return true;
      int pr = -1;
      double best = std::numeric_limits<double>::infinity();
      for (int r = 0; r < m_; ++r) {
        if (at(r, pc) <= kEps) continue;
        const double ratio = rhs(r) / at(r, pc);
        if (ratio < best - kEps || (std::abs(ratio - best) <= kEps && pr >= 0 && basis_[r] < basis_[pr])) {
          best = ratio;
          pr = r;
        }
      }
      if (pr < 0) return false;
      pivot(pr, pc);
    }
    throw std::runtime_error("simplex did not converge");
  }

 private:
  int m_, n_;
  std::vector<double> t_;
  std::vector<int> basis_;
};

}  // namespace

LpSolution solve_lp(const LinearProgram& lp) {
  const int nx = static_cast<int>(lp.c.size());
  const int m = static_cast<int>(lp.rows.size());
  int n_slack = 0, n_art = 0;
  for (const auto& r : lp.rows) {
    const bool flip = r.b < 0;
    auto rel = r.rel;
    if (flip && rel != LinearProgram::Rel::Eq) rel = rel == LinearProgram::Rel::Le ? LinearProgram::Rel::Ge : LinearProgram::Rel::Le;
    if (rel != LinearProgram::Rel::Eq) ++n_slack;
    if (rel != LinearProgram::Rel::Le) ++n_art;
  }
  const int n = nx + n_slack + n_art;
  const int art0 = nx + n_slack;
  Tableau t(m, n);

  int slack = nx, art = art0;
  for (int i = 0; i < m; ++i) {
    const auto& r = lp.rows[i];
    if (static_cast<int>(r.a.size()) != nx) throw std::invalid_argument("constraint width mismatch");
    const double sign = r.b < 0 ? -1.0 : 1.0;
    auto rel = r.rel;
    if (sign < 0 && rel != LinearProgram::Rel::Eq) rel = rel == LinearProgram::Rel::Le ? LinearProgram::Rel::Ge : LinearProgram::Rel::Le;
    for (int j = 0; j < nx; ++j) t.at(i, j) = sign * r.a[j];
    t.rhs(i) = sign * r.b;
    if (rel == LinearProgram::Rel::Le) {
      t.at(i, slack) = 1.0;
      t.basis(i) = slack++;
    } else {
      if (rel == LinearProgram::Rel::Ge) t.at(i, slack++) = -1.0;
      t.at(i, art) = 1.0;
      t.basis(i) = art++;
    }
  }

  LpSolution sol;
  // Phase 1: drive the artificials out.
  if (n_art > 0) {
    for (int c = 0; c <= n; ++c) t.obj(c) = 0.0;
    for (int i = 0; i < m; ++i)
      if (t.basis(i) >= art0)
        for (int c = 0; c <= n; ++c) t.obj(c) -= t.at(i, c);
    for (int c = art0; c < n; ++c) t.obj(c) = 0.0;
    t.optimize([](int) { return true; });
    if (-t.obj(n) > 1e-7) {
      sol.status = LpSolution::Status::Infeasible;
      return sol;
    }
    // Degenerate artificials left in the basis are pivoted onto any real column.
    for (int i = 0; i < m; ++i) {
      if (t.basis(i) < art0) continue;
      for (int c = 0; c < art0; ++c)
        if (std::abs(t.at(i, c)) > kEps) {
          t.pivot(i, c);
          break;
        }
    }
  }

  // Phase 2.
  for (int c = 0; c <= n; ++c) t.obj(c) = 0.0;
  for (int j = 0; j < nx; ++j) t.obj(j) = lp.c[j];
  for (int i = 0; i < m; ++i) {
    const int b = t.basis(i);
    if (b >= nx || t.obj(b) == 0.0) continue;
    const double f = t.obj(b);
    for (int c = 0; c <= n; ++c) t.obj(c) -= f * t.at(i, c);
  }
  if (!t.optimize([art0](int c) { return c < art0; })) {
    sol.status = LpSolution::Status::Unbounded;
    return sol;
  }
  sol.status = LpSolution::Status::Optimal;
  sol.x.assign(nx, 0.0);
  for (int i = 0; i < m; ++i)
    if (t.basis(i) < nx) sol.x[t.basis(i)] = t.rhs(i);
  sol.objective = 0.0;
  for (int j = 0; j < nx; ++j) sol.objective += lp.c[j] * sol.x[j];
  return sol;
}

}  // namespace nanotile
