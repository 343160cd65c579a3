#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "vnn/benchmark.hpp"
#include "vnn/errors.hpp"

namespace vnn {

namespace report {

// Fixed float formatting keeps emitted files byte-stable across runs.
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open " + path.string() + " for writing");
  return out;
}

// Aggregate table; column set and order are fixed per artifact version.
inline void write_results_csv(const std::vector<BenchAggregate>& aggregates,
                              const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "config_id,dx,lambda,eps,method,seeds,mean_kl,std_kl\n";
  for (const BenchAggregate& a : aggregates)
    out << a.config_id << ',' << a.dx << ',' << a.lambda << ',' << fmt(a.eps) << ','
        << a.method_id << ',' << a.seeds << ',' << fmt(a.mean_kl) << ',' << fmt(a.std_kl)
        << '\n';
}

// One record per (config, method, seed) run.
inline void write_results_jsonl(const std::vector<BenchRunRecord>& runs,
                                const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const BenchRunRecord& r : runs) {
    nlohmann::json j;
    j["config_id"] = r.result.config_id;
    j["dx"] = r.cell.dx;
    j["lambda"] = r.cell.lambda;
    j["eps"] = r.cell.eps;
    j["method"] = r.result.method_id;
    j["seed"] = r.result.seed;
    j["ok"] = r.result.ok;
    if (r.result.ok) {
      j["mean_kl"] = r.result.mean_kl;
      j["kl"] = r.result.kl;
      j["loss_first"] = r.result.loss_first;
      j["loss_final"] = r.result.loss_final;
    } else {
      j["error"] = r.result.error;
    }
    out << j.dump() << '\n';
  }
}

inline void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

// Bar chart of per-method mean KL with 1-std whiskers on a fixed 800x500
// canvas; values are embedded as numeric labels.
inline void write_bar_chart_svg(const std::string& title,
                                const std::vector<std::string>& names,
                                const std::vector<double>& means,
                                const std::vector<double>& stds,
                                const std::filesystem::path& path) {
  if (names.size() != means.size() || names.size() != stds.size())
    throw UsageError("bar chart: name/value count mismatch");
  const double width = 800.0, height = 500.0;
  const double left = 70.0, right = 20.0, top = 50.0, bottom = 60.0;
  const double plot_w = width - left - right, plot_h = height - top - bottom;

  double vmax = 1e-12;
  for (std::size_t i = 0; i < means.size(); ++i)
    vmax = std::max(vmax, means[i] + stds[i]);
  vmax *= 1.15;

  auto ybar = [&](double v) { return top + plot_h * (1.0 - v / vmax); };

  auto out = open_out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"500\" "
         "viewBox=\"0 0 800 500\">\n";
  out << "<rect width=\"800\" height=\"500\" fill=\"white\"/>\n";
  out << "<text x=\"400\" y=\"28\" font-family=\"sans-serif\" font-size=\"18\" "
         "text-anchor=\"middle\">"
      << title << "</text>\n";
  // axes
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
      << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n";
  out << "<text x=\"18\" y=\"" << top + plot_h / 2
      << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" "
         "transform=\"rotate(-90 18 "
      << top + plot_h / 2 << ")\">mean KL</text>\n";

  const std::size_t n = names.size();
  const double slot = plot_w / static_cast<double>(n == 0 ? 1 : n);
  const double bar_w = slot * 0.6;
  const char* colors[] = {"#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#8c613c"};
  for (std::size_t i = 0; i < n; ++i) {
    const double cx = left + slot * (static_cast<double>(i) + 0.5);
    const double x0 = cx - bar_w / 2.0;
    const double y0 = ybar(means[i]);
    out << "<rect x=\"" << fmt(x0) << "\" y=\"" << fmt(y0) << "\" width=\"" << fmt(bar_w)
        << "\" height=\"" << fmt(top + plot_h - y0) << "\" fill=\"" << colors[i % 6]
        << "\"/>\n";
    if (stds[i] > 0.0) {
      const double yl = ybar(std::max(0.0, means[i] - stds[i]));
      const double yh = ybar(means[i] + stds[i]);
      out << "<line x1=\"" << fmt(cx) << "\" y1=\"" << fmt(yh) << "\" x2=\"" << fmt(cx)
          << "\" y2=\"" << fmt(yl) << "\" stroke=\"black\"/>\n";
      out << "<line x1=\"" << fmt(cx - 6) << "\" y1=\"" << fmt(yh) << "\" x2=\"" << fmt(cx + 6)
          << "\" y2=\"" << fmt(yh) << "\" stroke=\"black\"/>\n";
      out << "<line x1=\"" << fmt(cx - 6) << "\" y1=\"" << fmt(yl) << "\" x2=\"" << fmt(cx + 6)
          << "\" y2=\"" << fmt(yl) << "\" stroke=\"black\"/>\n";
    }
    out << "<text x=\"" << fmt(cx) << "\" y=\"" << fmt(top + plot_h + 20)
        << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">" << names[i]
        << "</text>\n";
    out << "<text x=\"" << fmt(cx) << "\" y=\"" << fmt(y0 - 6)
        << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">"
        << fmt(means[i]) << "</text>\n";
  }
  out << "<text x=\"" << fmt(left - 8) << "\" y=\"" << fmt(top + 4)
      << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">" << fmt(vmax)
      << "</text>\n";
  out << "<text x=\"" << fmt(left - 8) << "\" y=\"" << fmt(top + plot_h + 4)
      << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">0</text>\n";
  out << "</svg>\n";
}

}  // namespace report
}  // namespace vnn
