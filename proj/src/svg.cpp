#include "gvd/svg.hpp"

#include <algorithm>
#include <cstdio>

namespace gvd {

namespace {

constexpr int kW = 640, kH = 400;
constexpr int kLeft = 70, kRight = 20, kTop = 50, kBottom = 60;

std::string header(const std::string& title, const std::string& x_label,
                   const std::string& y_label, double max_v) {
    char buf[512];
    std::string s;
    std::snprintf(buf, sizeof(buf),
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
                  "viewBox=\"0 0 %d %d\">\n<rect width=\"%d\" height=\"%d\" fill=\"white\"/>\n",
                  kW, kH, kW, kH, kW, kH);
    s += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"28\" font-family=\"sans-serif\" font-size=\"16\" "
                  "text-anchor=\"middle\">%s</text>\n",
                  kW / 2, title.c_str());
    s += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"12\" "
                  "text-anchor=\"middle\">%s</text>\n",
                  kW / 2, kH - 15, x_label.c_str());
    s += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"18\" y=\"%d\" font-family=\"sans-serif\" font-size=\"12\" "
                  "text-anchor=\"middle\" transform=\"rotate(-90 18 %d)\">%s</text>\n",
                  kH / 2, kH / 2, y_label.c_str());
    s += buf;
    // axes
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n"
                  "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n",
                  kLeft, kH - kBottom, kW - kRight, kH - kBottom, kLeft, kTop, kLeft, kH - kBottom);
    s += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"11\" "
                  "text-anchor=\"end\">%.4g</text>\n",
                  kLeft - 6, kTop + 4, max_v);
    s += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"11\" "
                  "text-anchor=\"end\">0</text>\n",
                  kLeft - 6, kH - kBottom + 4);
    s += buf;
    return s;
}

}  // namespace

std::string svg_bar_chart(const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<double>& values) {
    double max_v = 1e-12;
    for (double v : values) max_v = std::max(max_v, v);
    std::string s = header(title, x_label, y_label, max_v);
    const double plot_w = kW - kLeft - kRight, plot_h = kH - kTop - kBottom;
    const double slot = plot_w / std::max<size_t>(values.size(), 1);
    char buf[256];
    for (size_t i = 0; i < values.size(); ++i) {
        const double bh = plot_h * values[i] / max_v;
        std::snprintf(buf, sizeof(buf),
                      "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" "
                      "fill=\"#4878a8\"/>\n",
                      kLeft + slot * i + slot * 0.15, kH - kBottom - bh, slot * 0.7, bh);
        s += buf;
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%.1f\" y=\"%d\" font-family=\"sans-serif\" font-size=\"11\" "
                      "text-anchor=\"middle\">%zu</text>\n",
                      kLeft + slot * i + slot * 0.5, kH - kBottom + 16, i);
        s += buf;
    }
    return s + "</svg>\n";
}

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<double>& values) {
    double max_v = 1e-12;
    for (double v : values) max_v = std::max(max_v, v);
    std::string s = header(title, x_label, y_label, max_v);
    const double plot_w = kW - kLeft - kRight, plot_h = kH - kTop - kBottom;
    std::string pts;
    char buf[64];
    for (size_t i = 0; i < values.size(); ++i) {
        const double x = kLeft + (values.size() > 1 ? plot_w * i / (values.size() - 1) : 0.0);
        const double y = kH - kBottom - plot_h * values[i] / max_v;
        std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", x, y);
        pts += buf;
    }
    s += "<polyline fill=\"none\" stroke=\"#a85048\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    return s + "</svg>\n";
}

}  // namespace gvd
