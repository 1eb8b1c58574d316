#pragma once

#include <string>
#include <vector>

#include "dada/image_io.hpp"

namespace dada::plot {

struct Bar {
    std::string label;  // drawn under the bar; digits, S, F, %, '.', '-' only
    double value = 0;   // bar height
    double lo = 0, hi = 0;  // whisker range
};

/// Static bar chart with min-max whiskers and a value label above each bar.
io::Image8 bar_chart(const std::vector<Bar>& bars, double y_max);

}  // namespace dada::plot
