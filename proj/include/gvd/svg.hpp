#pragma once

#include <string>
#include <vector>

namespace gvd {

// Minimal self-contained SVG charts for the CLI outputs.
std::string svg_bar_chart(const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<double>& values);
std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<double>& values);

}  // namespace gvd
