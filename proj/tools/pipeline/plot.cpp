#include "plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "snigl/error.hpp"

namespace snigl::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

// Shortest round-trip decimal, shared by the SVG and CSV outputs.
std::string num(double x) { return json(x).dump(); }

std::string px(double x) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << x;
  return s.str();
}

void save(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WriteError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw WriteError("write to '" + path.string() + "' failed");
}

fs::path with_ext(const fs::path& stem, const char* ext) { return fs::path(stem.string() + ext); }

class Svg {
 public:
  Svg(double w, double h) : w_(w), h_(h) {}

  void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1.0,
            const std::string& extra = "") {
    body_ << "<line x1=\"" << px(x1) << "\" y1=\"" << px(y1) << "\" x2=\"" << px(x2) << "\" y2=\"" << px(y2)
          << "\" stroke=\"" << stroke << "\" stroke-width=\"" << px(width) << "\"" << extra << "/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill) {
    body_ << "<rect x=\"" << px(x) << "\" y=\"" << px(y) << "\" width=\"" << px(w) << "\" height=\"" << px(h)
          << "\" fill=\"" << fill << "\"/>\n";
  }
  void circle(double x, double y, double r, const std::string& fill) {
    body_ << "<circle cx=\"" << px(x) << "\" cy=\"" << px(y) << "\" r=\"" << px(r) << "\" fill=\"" << fill << "\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
    body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : pts) body_ << px(x) << ',' << px(y) << ' ';
    body_ << "\"/>\n";
  }
  void text(double x, double y, const std::string& s, const std::string& anchor = "start", int size = 11) {
    body_ << "<text x=\"" << px(x) << "\" y=\"" << px(y) << "\" font-family=\"sans-serif\" font-size=\"" << size
          << "\" text-anchor=\"" << anchor << "\">" << escape(s) << "</text>\n";
  }
  std::string str() const {
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << px(w_) << "\" height=\"" << px(h_)
      << "\" viewBox=\"0 0 " << px(w_) << ' ' << px(h_) << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << body_.str() << "</svg>\n";
    return o.str();
  }

 private:
  static std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
      if (c == '<') out += "&lt;";
      else if (c == '>') out += "&gt;";
      else if (c == '&') out += "&amp;";
      else out += c;
    }
    return out;
  }

  double w_, h_;
  std::ostringstream body_;
};

struct Frame {
  double left = 60, right = 20, top = 30, bottom = 40, width = 640, height = 360;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  double x(double v) const { return left + (v - x0) / (x1 - x0) * (width - left - right); }
  double y(double v) const { return height - bottom - (v - y0) / (y1 - y0) * (height - top - bottom); }

  void axes(Svg& svg, const std::string& xlabel, const std::string& ylabel) const {
    svg.line(left, height - bottom, width - right, height - bottom, "black");
    svg.line(left, top, left, height - bottom, "black");
    for (int i = 0; i <= 4; ++i) {
      const double v = y0 + (y1 - y0) * i / 4.0;
      svg.line(left - 4, y(v), left, y(v), "black");
      svg.text(left - 6, y(v) + 4, px(v), "end", 10);
    }
    svg.text((left + width - right) / 2, height - 8, xlabel, "middle");
    svg.text(12, top - 10, ylabel);
  }
};

}  // namespace

void write_loss_curves(const std::vector<LossSeries>& series, const fs::path& stem) {
  if (series.empty()) throw MissingInputError("no training logs to plot");
  std::ostringstream csv;
  csv << "series,epoch,total,r_ns,r_inv,r_joint,r_ci\n";
  std::vector<std::vector<std::pair<double, double>>> lines;
  Frame f;
  f.y0 = INFINITY;
  f.y1 = -INFINITY;
  f.x1 = 1;
  for (const auto& s : series) {
    std::map<std::size_t, std::pair<training::RiskBreakdown, std::size_t>> by_epoch;
    for (const auto& row : s.rows) {
      auto& [acc, n] = by_epoch[row.epoch];
      acc.r_ns += row.risks.r_ns;
      acc.r_inv += row.risks.r_inv;
      acc.r_joint += row.risks.r_joint;
      acc.r_ci += row.risks.r_ci;
      acc.total += row.risks.total;
      ++n;
    }
    std::vector<std::pair<double, double>> pts;
    for (const auto& [epoch, entry] : by_epoch) {
      const double n = static_cast<double>(entry.second);
      const auto& r = entry.first;
      csv << s.label << ',' << epoch << ',' << num(r.total / n) << ',' << num(r.r_ns / n) << ',' << num(r.r_inv / n)
          << ',' << num(r.r_joint / n) << ',' << num(r.r_ci / n) << '\n';
      pts.emplace_back(static_cast<double>(epoch), r.total / n);
      f.y0 = std::min(f.y0, r.total / n);
      f.y1 = std::max(f.y1, r.total / n);
      f.x1 = std::max(f.x1, static_cast<double>(epoch));
    }
    lines.push_back(std::move(pts));
  }
  if (!(f.y1 > f.y0)) f.y1 = f.y0 + 1.0;
  const double pad = 0.05 * (f.y1 - f.y0);
  f.y0 -= pad;
  f.y1 += pad;

  Svg svg(f.width, f.height);
  f.axes(svg, "epoch", "mean loss per environment");
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& [x, y] : lines[i]) pts.emplace_back(f.x(x), f.y(y));
    const std::string color = kPalette[i % std::size(kPalette)];
    svg.polyline(pts, color);
    svg.rect(f.width - 150, f.top + 14.0 * static_cast<double>(i), 10, 10, color);
    svg.text(f.width - 135, f.top + 9 + 14.0 * static_cast<double>(i), series[i].label);
  }
  save(with_ext(stem, ".svg"), svg.str());
  save(with_ext(stem, ".csv"), csv.str());
}

void write_ablation_bars(const MetricsReport& report, const fs::path& stem) {
  if (report.variants.empty()) throw MissingInputError("metrics report lists no variants");
  std::ostringstream csv;
  csv << "variant,accuracy_mean,accuracy_std,auc_mean,auc_std\n";
  Frame f;
  f.y0 = 0.0;
  f.y1 = 1.0;
  Svg svg(f.width, f.height);
  f.axes(svg, "variant", "test accuracy");
  const double slot = (f.width - f.left - f.right) / static_cast<double>(report.variants.size());
  for (std::size_t i = 0; i < report.variants.size(); ++i) {
    const auto& m = report.variants[i];
    const auto acc = m.accuracy_summary();
    csv << to_string(m.variant) << ',' << num(acc.mean) << ',' << num(acc.std) << ',';
    if (const auto auc = m.auc_summary()) csv << num(auc->mean) << ',' << num(auc->std);
    else csv << ',';
    csv << '\n';
    const double cx = f.left + slot * (static_cast<double>(i) + 0.5);
    svg.rect(cx - slot * 0.3, f.y(acc.mean), slot * 0.6, f.y(0.0) - f.y(acc.mean), kPalette[i % std::size(kPalette)]);
    svg.line(cx, f.y(std::min(1.0, acc.mean + acc.std)), cx, f.y(std::max(0.0, acc.mean - acc.std)), "black", 1.5);
    svg.text(cx, f.height - f.bottom + 14, to_string(m.variant), "middle");
    svg.text(cx, f.y(acc.mean) - 4, px(acc.mean), "middle", 10);
  }
  save(with_ext(stem, ".svg"), svg.str());
  save(with_ext(stem, ".csv"), csv.str());
}

void write_mask_overlay(const fs::path& masks, std::size_t max_graphs, const fs::path& stem) {
  std::ifstream in(masks);
  if (!in) throw MissingInputError("mask export '" + masks.string() + "' not found");
  std::vector<json> graphs;
  std::string line;
  while (graphs.size() < max_graphs && std::getline(in, line))
    if (!line.empty()) graphs.push_back(json::parse(line));
  if (graphs.empty()) throw MissingInputError("mask export '" + masks.string() + "' is empty");

  std::ostringstream csv;
  csv << "graph_id,u,v,probability,motif\n";
  const double cell = 260.0;
  Svg svg(cell * static_cast<double>(graphs.size()), cell + 30);
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const auto& g = graphs[gi];
    const auto& edges = g.at("edges");
    std::vector<int> motif(edges.size(), 0);
    if (g.contains("motif_mask")) motif = g["motif_mask"].get<std::vector<int>>();
    std::size_t n = 0;
    for (const auto& e : edges) n = std::max({n, e[0].get<std::size_t>() + 1, e[1].get<std::size_t>() + 1});
    const double ox = cell * static_cast<double>(gi) + cell / 2, oy = cell / 2 + 10, r = cell * 0.38;
    auto pos = [&](std::size_t v) {
      const double a = 2.0 * M_PI * static_cast<double>(v) / static_cast<double>(std::max<std::size_t>(n, 1));
      return std::pair{ox + r * std::cos(a), oy + r * std::sin(a)};
    };
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto u = edges[e][0].get<std::size_t>(), v = edges[e][1].get<std::size_t>();
      const double p = edges[e][2].get<double>();
      csv << g.at("graph_id").get<std::string>() << ',' << u << ',' << v << ',' << num(p) << ',' << motif[e] << '\n';
      const auto [x1, y1] = pos(u);
      const auto [x2, y2] = pos(v);
      if (motif[e]) svg.line(x1, y1, x2, y2, "#ff7f0e", 6.0, " stroke-opacity=\"0.35\"");
      svg.line(x1, y1, x2, y2, "#1f77b4", 2.0, " stroke-opacity=\"" + px(std::clamp(p, 0.05, 1.0)) + "\"");
    }
    for (std::size_t v = 0; v < n; ++v) {
      const auto [x, y] = pos(v);
      svg.circle(x, y, 3.0, "#333333");
    }
    svg.text(ox, cell + 24, g.at("graph_id").get<std::string>(), "middle");
  }
  save(with_ext(stem, ".svg"), svg.str());
  save(with_ext(stem, ".csv"), csv.str());
}

}  // namespace snigl::pipeline
