#pragma once

#include <vector>

namespace mvtrack {

// Minimum-cost one-to-one assignment on a rows x cols cost matrix
// (row-major). Entries of +infinity are forbidden. Maximizes the number of
// allowed assignments first, then minimizes their total cost. Returns the
// assigned column per row, -1 where a row stays unassigned.
std::vector<int> solve_assignment(const std::vector<double>& cost, int rows, int cols);

}  // namespace mvtrack
