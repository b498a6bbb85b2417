#include "s4mi/harness/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace s4mi::harness {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kMethodOrder = {"picie", "supervised", "semi_cross_teach",
                                               "selfsup_aug", "selfsup_arch"};
const std::vector<double> kFractionGrid = {0.0, 0.1, 0.5, 0.7, 1.0};

std::string format_cell(double mean, double hw) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f ± %.4f", mean, hw);
    return std::string(buf);
}

}  // namespace

std::vector<AggregateCell> load_aggregates(const fs::path& aggregates_dir) {
    std::vector<AggregateCell> out;
    if (!fs::is_directory(aggregates_dir)) return out;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(aggregates_dir))
        if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        std::ifstream in(f);
        json j = json::parse(in);
        AggregateCell c;
        c.method = j.at("method").get<std::string>();
        c.dataset = j.at("dataset").get<std::string>();
        c.label_fraction = j.at("label_fraction").get<double>();
        c.metric = j.at("metric").get<std::string>();
        c.mean = j.at("mean").get<double>();
        c.ci_halfwidth = j.at("ci_halfwidth").get<double>();
        out.push_back(std::move(c));
    }
    return out;
}

ReportTable build_table(const std::vector<AggregateCell>& cells, const std::string& dataset) {
    ReportTable t;
    t.fractions = kFractionGrid;
    for (const auto& m : kMethodOrder) {
        bool present = std::any_of(cells.begin(), cells.end(), [&](const AggregateCell& c) {
            return c.method == m && c.dataset == dataset;
        });
        if (present) t.methods.push_back(m);
    }
    t.cells.assign(t.methods.size(), std::vector<std::string>(t.fractions.size(), ""));
    for (const AggregateCell& c : cells) {
        if (c.dataset != dataset) continue;
        auto mi = std::find(t.methods.begin(), t.methods.end(), c.method);
        auto fi = std::find_if(t.fractions.begin(), t.fractions.end(), [&](double f) {
            return std::abs(f - c.label_fraction) < 1e-9;
        });
        if (mi == t.methods.end() || fi == t.fractions.end()) continue;
        t.cells[static_cast<size_t>(mi - t.methods.begin())]
               [static_cast<size_t>(fi - t.fractions.begin())] =
            format_cell(c.mean, c.ci_halfwidth);
    }
    return t;
}

std::string render_csv(const ReportTable& table) {
    std::ostringstream out;
    out << "method";
    for (double f : table.fractions) out << "," << static_cast<int>(std::lround(f * 100)) << "%";
    out << "\n";
    for (size_t r = 0; r < table.methods.size(); ++r) {
        out << table.methods[r];
        for (const std::string& cell : table.cells[r]) out << "," << cell;
        out << "\n";
    }
    return out.str();
}

std::string render_svg(const ReportTable& table, const std::vector<AggregateCell>& cells,
                       const std::string& dataset) {
    const int width = 640, height = 420, ml = 70, mb = 50, mt = 40, mr = 160;
    const double px = width - ml - mr, py = height - mt - mb;
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\">\n";
    svg << "<text x=\"" << ml << "\" y=\"24\" font-size=\"15\">" << dataset
        << ": metric vs label fraction</text>\n";
    // axes
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
        << height - mb << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
        << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
    auto xpos = [&](double f) { return ml + f * px; };
    auto ypos = [&](double v) { return height - mb - v * py; };
    for (double f : table.fractions) {
        svg << "<text x=\"" << xpos(f) - 10 << "\" y=\"" << height - mb + 18
            << "\" font-size=\"11\">" << static_cast<int>(std::lround(f * 100)) << "%</text>\n";
    }
    for (double v = 0.0; v <= 1.0001; v += 0.25) {
        svg << "<text x=\"" << ml - 38 << "\" y=\"" << ypos(v) + 4 << "\" font-size=\"11\">"
            << v << "</text>\n";
    }
    size_t color_idx = 0;
    for (const std::string& method : table.methods) {
        std::vector<std::pair<double, double>> pts;
        for (const AggregateCell& c : cells)
            if (c.method == method && c.dataset == dataset)
                pts.emplace_back(c.label_fraction, c.mean);
        std::sort(pts.begin(), pts.end());
        const char* col = colors[color_idx % 5];
        std::ostringstream path;
        for (size_t i = 0; i < pts.size(); ++i)
            path << (i == 0 ? "M" : "L") << xpos(pts[i].first) << " " << ypos(pts[i].second)
                 << " ";
        if (pts.size() > 1)
            svg << "<path d=\"" << path.str() << "\" fill=\"none\" stroke=\"" << col
                << "\" stroke-width=\"2\"/>\n";
        for (const auto& [f, v] : pts)
            svg << "<circle cx=\"" << xpos(f) << "\" cy=\"" << ypos(v) << "\" r=\"4\" fill=\""
                << col << "\"/>\n";
        svg << "<text x=\"" << width - mr + 12 << "\" y=\"" << mt + 18 * color_idx + 10
            << "\" font-size=\"12\" fill=\"" << col << "\">" << method << "</text>\n";
        ++color_idx;
    }
    svg << "</svg>\n";
    return svg.str();
}

std::vector<fs::path> render_report(const fs::path& aggregates_dir, const fs::path& out_dir) {
    std::vector<AggregateCell> cells = load_aggregates(aggregates_dir);
    std::set<std::string> datasets;
    for (const auto& c : cells) datasets.insert(c.dataset);
    fs::create_directories(out_dir);
    std::vector<fs::path> written;
    for (const std::string& ds : datasets) {
        ReportTable table = build_table(cells, ds);
        std::string tag = ds;
        std::replace_if(tag.begin(), tag.end(), [](char c) { return c == '/' || c == '\\'; }, '_');
        fs::path csv = out_dir / ("report_" + tag + ".csv");
        {
            std::ofstream out(csv);
            out << render_csv(table);
        }
        fs::path svg = out_dir / ("report_" + tag + ".svg");
        {
            std::ofstream out(svg);
            out << render_svg(table, cells, ds);
        }
        written.push_back(csv);
        written.push_back(svg);
    }
    return written;
}

}  // namespace s4mi::harness
