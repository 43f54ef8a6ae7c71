#include "metrik/viz.hpp"

#include <sstream>

#include "metrik/errors.hpp"
#include "metrik/store.hpp"

namespace metrik {
namespace {

std::string xml_escape(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

std::string pmd_svg(const Pmd& design, const std::vector<std::string>& metric_names,
                    const VizOptions& options) {
    const int n_t = design.n_timepoints();
    const int n_m = design.n_metrics();
    if (static_cast<int>(metric_names.size()) != n_m)
        throw ConfigError("metric name count does not match design width");

    const int cell = options.cell_size;
    const int rows = options.rows_are_metrics ? n_m : n_t;
    const int cols = options.rows_are_metrics ? n_t : n_m;

    // Reserve space for row labels on the left and column labels on top.
    std::size_t longest = 2;
    if (options.rows_are_metrics)
        for (const auto& name : metric_names) longest = std::max(longest, name.size());
    const int label_w = static_cast<int>(longest) * 7 + 12;
    const int label_h = options.rows_are_metrics ? 22 : static_cast<int>(longest) * 7 + 12;
    const int width = label_w + cols * cell + 2;
    const int height = label_h + rows * cell + 2;

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<style>text{font-family:monospace;font-size:10px;fill:#222;}</style>\n";

    auto cell_value = [&](int r, int c) {
        int t = options.rows_are_metrics ? c : r;
        int m = options.rows_are_metrics ? r : c;
        return design.collect(t, m);
    };
    auto row_label = [&](int r) {
        return options.rows_are_metrics ? metric_names[static_cast<std::size_t>(r)]
                                        : "t" + std::to_string(r);
    };
    auto col_label = [&](int c) {
        return options.rows_are_metrics ? "t" + std::to_string(c)
                                        : metric_names[static_cast<std::size_t>(c)];
    };

    for (int c = 0; c < cols; ++c) {
        int x = label_w + c * cell + cell / 2;
        if (options.rows_are_metrics) {
            svg << "<text x=\"" << x << "\" y=\"" << (label_h - 8)
                << "\" text-anchor=\"middle\">" << xml_escape(col_label(c)) << "</text>\n";
        } else {
            // Long metric names read better rotated.
            svg << "<text x=\"" << x << "\" y=\"" << (label_h - 6)
                << "\" text-anchor=\"start\" transform=\"rotate(-60 " << x << " "
                << (label_h - 6) << ")\">" << xml_escape(col_label(c)) << "</text>\n";
        }
    }
    for (int r = 0; r < rows; ++r) {
        int y = label_h + r * cell + cell / 2 + 4;
        svg << "<text x=\"" << (label_w - 6) << "\" y=\"" << y << "\" text-anchor=\"end\">"
            << xml_escape(row_label(r)) << "</text>\n";
    }
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const char* fill = cell_value(r, c) ? "#e9e9e9" : "#2f2f2f";
            svg << "<rect x=\"" << (label_w + c * cell) << "\" y=\"" << (label_h + r * cell)
                << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"" << fill
                << "\" stroke=\"#888\" stroke-width=\"1\"/>\n";
        }
    }
    svg << "</svg>\n";
    return svg.str();
}

void save_pmd_viz(const Pmd& design, const std::vector<std::string>& metric_names,
                  const std::filesystem::path& svg_path, const std::filesystem::path& csv_path,
                  const VizOptions& options) {
    write_file_bytes(svg_path, pmd_svg(design, metric_names, options));
    write_file_bytes(csv_path, pmd_csv(design, metric_names));
}

}  // namespace metrik
