#ifndef S4MI_HARNESS_REPORT_HPP
#define S4MI_HARNESS_REPORT_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace s4mi::harness {

struct AggregateCell {
    std::string method;
    std::string dataset;
    double label_fraction = 0.0;
    std::string metric;
    double mean = 0.0;
    double ci_halfwidth = 0.0;
};

// methods x label-fraction grid of "mean ± halfwidth" strings; cells with
// no aggregate stay blank (PiCIE only ever fills the 0% column)
struct ReportTable {
    std::vector<std::string> methods;        // row labels
    std::vector<double> fractions;           // column labels
    std::vector<std::vector<std::string>> cells;
};

std::vector<AggregateCell> load_aggregates(const std::filesystem::path& aggregates_dir);

ReportTable build_table(const std::vector<AggregateCell>& cells, const std::string& dataset);

std::string render_csv(const ReportTable& table);
std::string render_svg(const ReportTable& table,
                       const std::vector<AggregateCell>& cells, const std::string& dataset);

// writes report_<dataset>.csv and report_<dataset>.svg per dataset found
std::vector<std::filesystem::path> render_report(const std::filesystem::path& aggregates_dir,
                                                 const std::filesystem::path& out_dir);

}  // namespace s4mi::harness

#endif
