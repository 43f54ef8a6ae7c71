#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "metrik/pmd.hpp"

namespace metrik {

struct VizOptions {
    bool rows_are_metrics = true;  ///< false: rows are timepoints, as stored in the CSV grid.
    int cell_size = 18;            ///< Pixel edge of one grid cell.
};

/// Renders the collection grid as an SVG string: dark cells are skipped,
/// light cells are collected. Output depends only on the inputs (no
/// timestamps, no float formatting), so repeated renders are byte-identical.
std::string pmd_svg(const Pmd& design, const std::vector<std::string>& metric_names,
                    const VizOptions& options = {});

/// Writes the SVG next to the CSV grid used by the rest of the toolchain.
void save_pmd_viz(const Pmd& design, const std::vector<std::string>& metric_names,
                  const std::filesystem::path& svg_path, const std::filesystem::path& csv_path,
                  const VizOptions& options = {});

}  // namespace metrik
