#pragma once

// Minimal standalone SVG figures.

#include "absorb/matrix.hpp"

#include <string>
#include <vector>

namespace absorb {

// Diverging blue-white-red heatmap over [-1, 1] with the value in each cell.
std::string heatmap_svg(const Matrix & values, const std::string & title, const std::vector<std::string> & row_labels,
                        const std::vector<std::string> & col_labels);

struct LineSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

std::string line_chart_svg(const std::vector<LineSeries> & series, const std::string & title,
                           const std::string & x_label, const std::string & y_label);

}  // namespace absorb
