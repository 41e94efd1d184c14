#include "sparsecot/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "sparsecot/errors.hpp"

namespace sparsecot {

namespace {

constexpr double kWidth = 640.0, kHeight = 480.0;
constexpr double kLeft = 72.0, kRight = 24.0, kTop = 40.0, kBottom = 56.0;

const char *kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(2);
    os << std::fixed << v;
    return os.str();
}

std::string fmt_pow10(int e) {
    std::ostringstream os;
    if (e >= 0 && e < 7) {
        os << static_cast<long long>(std::llround(std::pow(10.0, e)));
    } else {
        os << "1e" << e;
    }
    return os.str();
}

} // namespace

std::string render_loglog_svg(const std::string &title, const std::string &x_label,
                              const std::string &y_label,
                              const std::vector<PlotSeries> &series) {
    double lx_min = std::numeric_limits<double>::infinity(), lx_max = -lx_min;
    double ly_min = lx_min, ly_max = -lx_min;
    for (const PlotSeries &s : series) {
        if (s.x.size() != s.y.size()) {
            throw ArgumentError("svg plot: series '" + s.label + "' has mismatched x/y lengths");
        }
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (s.x[i] <= 0.0 || s.y[i] <= 0.0) {
                throw ArgumentError("svg plot: log-log axes need positive values");
            }
            lx_min = std::min(lx_min, std::log10(s.x[i]));
            lx_max = std::max(lx_max, std::log10(s.x[i]));
            ly_min = std::min(ly_min, std::log10(s.y[i]));
            ly_max = std::max(ly_max, std::log10(s.y[i]));
        }
    }
    if (!(lx_min <= lx_max)) {
        throw ArgumentError("svg plot: no data");
    }
    if (lx_max - lx_min < 1e-9) {
        lx_max = lx_min + 1.0;
    }
    if (ly_max - ly_min < 1e-9) {
        ly_max = ly_min + 1.0;
    }

    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;
    auto px = [&](double lx) { return kLeft + (lx - lx_min) / (lx_max - lx_min) * plot_w; };
    auto py = [&](double ly) { return kTop + (ly_max - ly) / (ly_max - ly_min) * plot_h; };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
        << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    svg << "<rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"15\">" << title << "</text>\n";

    svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << plot_w
        << "\" height=\"" << plot_h << "\" fill=\"none\" stroke=\"#333\"/>\n";

    // Decade grid lines with tick labels.
    for (int e = static_cast<int>(std::floor(lx_min)); e <= static_cast<int>(std::ceil(lx_max));
         ++e) {
        if (e < lx_min - 1e-9 || e > lx_max + 1e-9) {
            continue;
        }
        const double x = px(e);
        svg << "<line x1=\"" << fmt(x) << "\" y1=\"" << kTop << "\" x2=\"" << fmt(x)
            << "\" y2=\"" << kTop + plot_h << "\" stroke=\"#ddd\"/>\n";
        svg << "<text x=\"" << fmt(x) << "\" y=\"" << kTop + plot_h + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
            << fmt_pow10(e) << "</text>\n";
    }
    for (int e = static_cast<int>(std::floor(ly_min)); e <= static_cast<int>(std::ceil(ly_max));
         ++e) {
        if (e < ly_min - 1e-9 || e > ly_max + 1e-9) {
            continue;
        }
        const double y = py(e);
        svg << "<line x1=\"" << kLeft << "\" y1=\"" << fmt(y) << "\" x2=\"" << kLeft + plot_w
            << "\" y2=\"" << fmt(y) << "\" stroke=\"#ddd\"/>\n";
        svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << fmt(y + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
            << fmt_pow10(e) << "</text>\n";
    }

    svg << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 14
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << x_label
        << "</text>\n";
    svg << "<text x=\"18\" y=\"" << kTop + plot_h / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
        << "transform=\"rotate(-90 18 " << kTop + plot_h / 2 << ")\">" << y_label << "</text>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
        const PlotSeries &s = series[si];
        const char *color = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (i > 0) {
                svg << " ";
            }
            svg << fmt(px(std::log10(s.x[i]))) << "," << fmt(py(std::log10(s.y[i])));
        }
        svg << "\"/>\n";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            svg << "<circle cx=\"" << fmt(px(std::log10(s.x[i]))) << "\" cy=\""
                << fmt(py(std::log10(s.y[i]))) << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
        }
        const double ly = kTop + 16 + 16 * static_cast<double>(si);
        svg << "<line x1=\"" << kLeft + plot_w - 130 << "\" y1=\"" << fmt(ly - 4) << "\" x2=\""
            << kLeft + plot_w - 110 << "\" y2=\"" << fmt(ly - 4) << "\" stroke=\"" << color
            << "\" stroke-width=\"1.5\"/>\n";
        svg << "<text x=\"" << kLeft + plot_w - 104 << "\" y=\"" << fmt(ly)
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << s.label << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

} // namespace sparsecot
