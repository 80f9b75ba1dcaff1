#pragma once

#include <string>
#include <utility>
#include <vector>

#include "caviar/diagnostics.hpp"

namespace caviar::svg {

/// Standalone SVG documents. Every plot carries its data table in an XML comment and
/// renders numbers with fixed formatting, so identical inputs give identical bytes.

std::string histogram(const Histogram& h, const std::string& title, const std::string& x_label);

/// Overlaid step functions, one per named series.
std::string ecdf(const std::vector<std::pair<std::string, Ecdf>>& series, const std::string& title,
                 const std::string& x_label);

/// Estimate against truth, with the 45-degree line.
std::string scatter(const std::vector<double>& x, const std::vector<double>& y, const std::string& title,
                    const std::string& x_label, const std::string& y_label);

/// Number of levels per observation count, log-log axes.
std::string frequency(const FrequencyTable& table, const std::string& title);

}  // namespace caviar::svg
