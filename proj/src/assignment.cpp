#include "mvtrack/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mvtrack {

std::vector<int> solve_assignment(const std::vector<double>& cost, int rows, int cols) {
  const double inf = std::numeric_limits<double>::infinity();
  if (rows == 0 || cols == 0) return std::vector<int>(static_cast<size_t>(rows), -1);
  int n = std::max(rows, cols);
  // forbidden/dummy entries share one large finite cost, bigger than any
  // possible sum of allowed costs, so the optimum uses as many allowed pairs
  // as possible before minimizing their total
  double finite_sum = 1.0;
  for (double c : cost)
    if (std::isfinite(c)) finite_sum += std::abs(c);
  const double big = finite_sum;
  auto at = [&](int i, int j) -> double {
    if (i >= rows || j >= cols) return big;
    double c = cost[static_cast<size_t>(i) * cols + j];
    return std::isfinite(c) ? c : big;
  };

  // Hungarian algorithm with potentials, O(n^3), 1-based work arrays.
  std::vector<double> u(static_cast<size_t>(n + 1), 0.0), v(static_cast<size_t>(n + 1), 0.0);
  std::vector<int> p(static_cast<size_t>(n + 1), 0), way(static_cast<size_t>(n + 1), 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n + 1), inf);
    std::vector<char> used(static_cast<size_t>(n + 1), 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      int i0 = p[static_cast<size_t>(j0)], j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        double cur = at(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0);
  }

  std::vector<int> row_to_col(static_cast<size_t>(rows), -1);
  for (int j = 1; j <= n; ++j) {
    int i = p[static_cast<size_t>(j)] - 1;
    if (i < 0 || i >= rows || j - 1 >= cols) continue;
    double c = cost[static_cast<size_t>(i) * cols + (j - 1)];
    if (std::isfinite(c)) row_to_col[static_cast<size_t>(i)] = j - 1;
  }
  return row_to_col;
}

}  // namespace mvtrack
