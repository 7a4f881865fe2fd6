#include "absorb/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace absorb {

namespace {

std::string escape(const std::string & s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += ch;
        }
    }
    return out;
}

std::string fmt(const char * pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

std::string diverging(double v) {
    const double t = std::clamp(std::isfinite(v) ? v : 0.0, -1.0, 1.0);
    int r = 255, g = 255, b = 255;
    if (t > 0) {
        g = b = static_cast<int>(std::lround(255 * (1 - t)));
        r = static_cast<int>(std::lround(255 - 75 * t));
    } else {
        r = g = static_cast<int>(std::lround(255 * (1 + t)));
        b = static_cast<int>(std::lround(255 + 75 * t));
    }
    char buf[16];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return buf;
}

const char * kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

}  // namespace

std::string heatmap_svg(const Matrix & values, const std::string & title, const std::vector<std::string> & row_labels,
                        const std::vector<std::string> & col_labels) {
    const int cell = 48, left = 90, top = 60;
    const int w = left + cell * static_cast<int>(values.cols()) + 20;
    const int h = top + cell * static_cast<int>(values.rows()) + 20;
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" +
                    std::to_string(h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    s += "<text x=\"" + std::to_string(left) + "\" y=\"20\" font-size=\"14\">" + escape(title) + "</text>\n";
    for (std::size_t c = 0; c < values.cols(); ++c) {
        const auto label = c < col_labels.size() ? col_labels[c] : std::to_string(c);
        s += "<text x=\"" + std::to_string(left + cell * static_cast<int>(c) + cell / 2) + "\" y=\"" +
             std::to_string(top - 8) + "\" text-anchor=\"middle\">" + escape(label) + "</text>\n";
    }
    for (std::size_t r = 0; r < values.rows(); ++r) {
        const int y = top + cell * static_cast<int>(r);
        const auto label = r < row_labels.size() ? row_labels[r] : std::to_string(r);
        s += "<text x=\"" + std::to_string(left - 8) + "\" y=\"" + std::to_string(y + cell / 2 + 4) +
             "\" text-anchor=\"end\">" + escape(label) + "</text>\n";
        for (std::size_t c = 0; c < values.cols(); ++c) {
            const int x = left + cell * static_cast<int>(c);
            const double v = values(r, c);
            s += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) + "\" width=\"" +
                 std::to_string(cell) + "\" height=\"" + std::to_string(cell) + "\" fill=\"" + diverging(v) +
                 "\" stroke=\"#ccc\"/>\n";
            s += "<text x=\"" + std::to_string(x + cell / 2) + "\" y=\"" + std::to_string(y + cell / 2 + 4) +
                 "\" text-anchor=\"middle\">" + fmt("%.2f", v) + "</text>\n";
        }
    }
    s += "</svg>\n";
    return s;
}

std::string line_chart_svg(const std::vector<LineSeries> & series, const std::string & title,
                           const std::string & x_label, const std::string & y_label) {
    const double w = 480, h = 320, left = 60, right = 130, top = 40, bottom = 50;
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto & line : series) {
        for (double x : line.x) {
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
        }
        for (double y : line.y) {
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    }
    if (!std::isfinite(x0)) {
        x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    }
    if (x1 == x0) {
        x1 = x0 + 1;
    }
    if (y1 == y0) {
        y1 = y0 + 1;
    }
    const double pw = w - left - right, ph = h - top - bottom;
    auto px = [&](double x) { return left + pw * (x - x0) / (x1 - x0); };
    auto py = [&](double y) { return top + ph * (1 - (y - y0) / (y1 - y0)); };

    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"320\" "
                    "font-family=\"sans-serif\" font-size=\"11\">\n";
    s += "<text x=\"" + fmt("%.0f", left) + "\" y=\"22\" font-size=\"14\">" + escape(title) + "</text>\n";
    s += "<rect x=\"" + fmt("%.0f", left) + "\" y=\"" + fmt("%.0f", top) + "\" width=\"" + fmt("%.0f", pw) +
         "\" height=\"" + fmt("%.0f", ph) + "\" fill=\"none\" stroke=\"#888\"/>\n";
    s += "<text x=\"" + fmt("%.0f", left + pw / 2) + "\" y=\"" + fmt("%.0f", h - 12) + "\" text-anchor=\"middle\">" +
         escape(x_label) + "</text>\n";
    s += "<text x=\"14\" y=\"" + fmt("%.0f", top + ph / 2) + "\" transform=\"rotate(-90 14 " +
         fmt("%.0f", top + ph / 2) + ")\" text-anchor=\"middle\">" + escape(y_label) + "</text>\n";
    for (double t : {0.0, 0.5, 1.0}) {
        const double xv = x0 + t * (x1 - x0), yv = y0 + t * (y1 - y0);
        s += "<text x=\"" + fmt("%.1f", px(xv)) + "\" y=\"" + fmt("%.0f", top + ph + 14) +
             "\" text-anchor=\"middle\">" + fmt("%.3g", xv) + "</text>\n";
        s += "<text x=\"" + fmt("%.0f", left - 4) + "\" y=\"" + fmt("%.1f", py(yv) + 4) + "\" text-anchor=\"end\">" +
             fmt("%.3g", yv) + "</text>\n";
    }
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto & line = series[i];
        const char * color = kPalette[i % std::size(kPalette)];
        std::string points;
        for (std::size_t k = 0; k < std::min(line.x.size(), line.y.size()); ++k) {
            points += fmt("%.1f", px(line.x[k])) + "," + fmt("%.1f", py(line.y[k])) + " ";
        }
        s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + points +
             "\"/>\n";
        const double ly = top + 14 * static_cast<double>(i) + 8;
        s += "<text x=\"" + fmt("%.0f", w - right + 10) + "\" y=\"" + fmt("%.0f", ly) + "\" fill=\"" + color +
             "\">" + escape(line.name) + "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

}  // namespace absorb
