#include <doctest.h>

#include <filesystem>
#include <string>
#include <vector>

#include "metrik/pmd.hpp"
#include "metrik/store.hpp"
#include "metrik/viz.hpp"
#include "test_util.hpp"

using namespace metrik;

namespace {

Pmd checkerboard(int n_t, int n_m) {
    Pmd d;
    d.collect = BinaryMatrix(n_t, n_m);
    for (int t = 0; t < n_t; ++t)
        for (int m = 0; m < n_m; ++m) d.collect(t, m) = (t + m) % 2;
    return d;
}

int count_of(const std::string& text, const std::string& needle) {
    int n = 0;
    for (auto pos = text.find(needle); pos != std::string::npos;
         pos = text.find(needle, pos + needle.size()))
        ++n;
    return n;
}

}  // namespace

TEST_CASE("pmd_svg renders one rect per cell with state-dependent fill") {
    const Pmd board = checkerboard(3, 4);
    const std::string svg = pmd_svg(board, {"a", "b", "c", "d"});

    CHECK((svg.rfind("<svg", 0) == 0 || svg.rfind("<?xml", 0) == 0));
    CHECK(svg.find("</svg>") != std::string::npos);
    // 6 collected + 6 skipped cells.
    CHECK(count_of(svg, "#e9e9e9") == 6);
    CHECK(count_of(svg, "#2f2f2f") == 6);
    for (const char* name : {">a<", ">b<", ">c<", ">d<"})
        CHECK(svg.find(name) != std::string::npos);

    Pmd all_kept = board;
    all_kept.collect.fill(1);
    const std::string light = pmd_svg(all_kept, {"a", "b", "c", "d"});
    CHECK(count_of(light, "#e9e9e9") == 12);
    CHECK(count_of(light, "#2f2f2f") == 0);
}

TEST_CASE("pmd_svg output is byte-identical across renders and orientations differ") {
    const Pmd board = checkerboard(4, 3);
    const std::vector<std::string> names = {"x", "y", "z"};
    const std::string a = pmd_svg(board, names);
    const std::string b = pmd_svg(board, names);
    CHECK(a == b);

    VizOptions flipped;
    flipped.rows_are_metrics = false;
    const std::string c = pmd_svg(board, names, flipped);
    CHECK(c != a);
    CHECK(count_of(c, "#2f2f2f") == count_of(a, "#2f2f2f"));

    VizOptions big;
    big.cell_size = 40;
    CHECK(pmd_svg(board, names, big) != a);
}

TEST_CASE("pmd_svg escapes markup-significant characters in names") {
    Pmd tiny;
    tiny.collect = BinaryMatrix(1, 1);
    tiny.collect.fill(1);
    const std::string svg = pmd_svg(tiny, {"a<b & \"c\""});
    CHECK(svg.find("a<b") == std::string::npos);
    CHECK(svg.find("a&lt;b") != std::string::npos);
    CHECK(svg.find("&amp;") != std::string::npos);
}

TEST_CASE("save_pmd_viz writes the SVG and the matching CSV grid") {
    testutil::TempDir dir("viz");
    const Pmd board = checkerboard(2, 2);
    const auto svg_path = dir.path() / "out" / "design.svg";
    const auto csv_path = dir.path() / "out" / "design.csv";
    save_pmd_viz(board, {"m0", "m1"}, svg_path, csv_path);

    const std::string svg = read_file_bytes(svg_path);
    CHECK(svg == pmd_svg(board, {"m0", "m1"}));
    const std::string csv = read_file_bytes(csv_path);
    CHECK(csv == pmd_csv(board, {"m0", "m1"}));
    const Pmd back = load_pmd_csv(csv_path);
    CHECK(back.collect == board.collect);
}
