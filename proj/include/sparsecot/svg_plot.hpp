#pragma once

#include <string>
#include <vector>

namespace sparsecot {

struct PlotSeries {
    std::string label;
    std::vector<double> x, y;
};

/// Minimal hand-rolled log-log line chart. Textual and deterministic, so
/// plots diff cleanly between runs.
std::string render_loglog_svg(const std::string &title, const std::string &x_label,
                              const std::string &y_label,
                              const std::vector<PlotSeries> &series);

} // namespace sparsecot
