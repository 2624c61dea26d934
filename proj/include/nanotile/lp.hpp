#pragma once

#include <vector>

namespace nanotile {

// Dense linear program: minimize c.x subject to rows a.x (<=, >=, =) b, x >= 0.
struct LinearProgram {
  enum class Rel { Le, Ge, Eq };
  struct Row {
    std::vector<double> a;
    Rel rel = Rel::Le;
    double b = 0.0;
  };
  std::vector<double> c;
  std::vector<Row> rows;
};

struct LpSolution {
  enum class Status { Optimal, Infeasible, Unbounded } status = Status::Infeasible;
  std::vector<double> x;
  double objective = 0.0;
};

// Two-phase tableau simplex with Bland's rule.
LpSolution solve_lp(const LinearProgram& lp);

}  // namespace nanotile
