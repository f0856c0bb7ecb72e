#pragma once

// Two-objective frontier plot: one polyline plus point markers per method.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "hoe/pareto.hpp"

namespace hoe {

inline std::string frontier_svg(const std::vector<ParetoPoint>& points, const std::string& title = "Pareto frontiers") {
    require(!points.empty(), errc::invalid_input, "nothing to plot");
    require(points.front().mean_rewards.size() == 2, errc::invalid_input, "frontier plots need two objectives");
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    const double width = 480, height = 400, margin = 50;
    double lo[2] = {points[0].mean_rewards[0], points[0].mean_rewards[1]}, hi[2] = {lo[0], lo[1]};
    for (const auto& p : points)
        for (int i = 0; i < 2; ++i) {
            lo[i] = std::min(lo[i], p.mean_rewards[i]);
            hi[i] = std::max(hi[i], p.mean_rewards[i]);
        }
    for (int i = 0; i < 2; ++i) {
        const double pad = std::max(0.05 * (hi[i] - lo[i]), 1e-3);
        lo[i] -= pad;
        hi[i] += pad;
    }
    auto sx = [&](double v) { return margin + (v - lo[0]) / (hi[0] - lo[0]) * (width - 2 * margin); };
    auto sy = [&](double v) { return height - margin - (v - lo[1]) / (hi[1] - lo[1]) * (height - 2 * margin); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin << "\" y2=\""
       << height - margin << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\"" << height - margin
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\" font-size=\"12\">R_0</text>\n";
    os << "<text x=\"14\" y=\"" << height / 2 << "\" font-size=\"12\">R_1</text>\n";

    const auto methods = methods_of(points);
    for (std::size_t m = 0; m < methods.size(); ++m) {
        std::vector<const ParetoPoint*> mine;
        for (const auto& p : points)
            if (p.method == methods[m]) mine.push_back(&p);
        std::stable_sort(mine.begin(), mine.end(),
                         [](const ParetoPoint* a, const ParetoPoint* b) { return a->preference[0] < b->preference[0]; });
        const char* color = colors[m % 6];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < mine.size(); ++i)
            os << (i ? " " : "") << format_number(sx(mine[i]->mean_rewards[0])) << ','
               << format_number(sy(mine[i]->mean_rewards[1]));
        os << "\"/>\n";
        for (const auto* p : mine)
            os << "<circle cx=\"" << format_number(sx(p->mean_rewards[0])) << "\" cy=\""
               << format_number(sy(p->mean_rewards[1])) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        os << "<text x=\"" << width - margin - 60 << "\" y=\"" << margin + 16 * static_cast<double>(m) << "\" fill=\""
           << color << "\" font-size=\"12\">" << methods[m] << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

} // namespace hoe
