/// @file grid.hpp Rectangular pixel grid with row-major cell indexing.
///
/// Image-valued states are flattened row by row: cell (r, c) maps to index
/// r * cols + c. Neighborhoods use Chebyshev (chessboard) distance and do not
/// wrap around the borders, so corner cells simply have fewer neighbors.

#pragma once

#include <stdexcept>
#include <vector>

namespace lock {

struct GridSpec {
    int rows = 0;
    int cols = 0;

    GridSpec() = default;
    GridSpec(int rows_, int cols_) : rows(rows_), cols(cols_) {
        if (rows <= 0 || cols <= 0)
            throw std::invalid_argument("GridSpec: dimensions must be positive");
    }

    int cells() const { return rows * cols; }

    int index(int row, int col) const { return row * cols + col; }
    int row_of(int idx) const { return idx / cols; }
    int col_of(int idx) const { return idx % cols; }

    bool contains(int row, int col) const {
        return row >= 0 && row < rows && col >= 0 && col < cols;
    }

    /// Indices of all cells within Chebyshev distance `radius` of `idx`,
    /// including `idx` itself, in ascending index order.
    std::vector<int> neighborhood(int idx, int radius) const {
        if (radius < 0) throw std::invalid_argument("GridSpec: radius must be >= 0");
        const int r0 = row_of(idx), c0 = col_of(idx);
        std::vector<int> out;
        out.reserve(static_cast<std::size_t>(2 * radius + 1) * (2 * radius + 1));
        for (int r = r0 - radius; r <= r0 + radius; ++r)
            for (int c = c0 - radius; c <= c0 + radius; ++c)
                if (contains(r, c)) out.push_back(index(r, c));
        return out;
    }
};

}  // namespace lock
