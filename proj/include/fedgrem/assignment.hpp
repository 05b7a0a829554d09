// Minimum-cost perfect matching on a square cost matrix (Hungarian method,
// O(n^3) potential form). Rows are matched to columns; returns row -> column.
#pragma once

#include <limits>
#include <vector>

#include "fedgrem/types.hpp"

namespace fedgrem {

inline std::vector<std::size_t> hungarian(const Matrix& cost) {
    if (cost.rows() == 0 || cost.rows() != cost.cols())
        throw ContractError("hungarian: square nonempty cost matrix required");
    const std::size_t n = cost.rows();
    const double inf = std::numeric_limits<double>::infinity();
    // 1-indexed potentials; p[j] is the row matched to column j (0 = free).
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> row_to_col(n, 0);
    for (std::size_t j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

}  // namespace fedgrem
