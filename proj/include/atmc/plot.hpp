#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "atmc/metrics.hpp"

namespace atmc {

/// Two panels (TA and ATA) against compression ratio on a log axis, one
/// polyline per (pipeline, bits) series in row order.
std::string render_plot_svg(const std::vector<MetricsRow>& rows, const std::string& title);

void write_plot_svg(const std::vector<MetricsRow>& rows, const std::string& title,
                    const std::filesystem::path& path);

}  // namespace atmc
