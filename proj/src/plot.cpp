#include "physssm/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "physssm/errors.hpp"

namespace physssm {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

PlotSeries series_from_dump(const std::vector<DumpRow>& rows, int traj) {
  std::map<int, const DumpRow*> truth, recon, extrap;
  for (const auto& r : rows) {
    if (r.traj != traj) continue;
    if (r.source == "truth") {
      truth[r.step] = &r;
    } else if (r.source == "recon") {
      recon[r.step] = &r;
    } else if (r.source == "extrap") {
      extrap[r.step] = &r;
    } else {
      throw ConfigError("dump: unknown source '" + r.source + "'");
    }
  }
  if (truth.empty()) throw ConfigError("dump: trajectory " + std::to_string(traj) + " not found");
  PlotSeries s;
  s.traj = traj;
  s.window = static_cast<int>(recon.size());
  s.horizon = static_cast<int>(extrap.size());
  for (const auto& [step, t] : truth) {
    const DumpRow* p = step < s.window ? recon.count(step) ? recon[step] : nullptr
                                       : extrap.count(step) ? extrap[step] : nullptr;
    if (!p) continue;
    s.steps.push_back(step);
    s.times.push_back(t->time);
    s.truth.push_back(t->x);
    s.pred.push_back(p->x);
  }
  if (s.steps.size() != static_cast<std::size_t>(s.window + s.horizon)) {
    throw ConfigError("dump: trajectory " + std::to_string(traj) +
                      " has predictions without matching truth rows");
  }
  return s;
}

std::string series_csv(const PlotSeries& s) {
  std::ostringstream os;
  const auto dx = s.truth.empty() ? 0 : s.truth.front().size();
  os << "step,time,segment";
  for (Eigen::Index d = 0; d < dx; ++d) os << ",truth_x" << d;
  for (Eigen::Index d = 0; d < dx; ++d) os << ",pred_x" << d;
  os << '\n';
  for (std::size_t i = 0; i < s.steps.size(); ++i) {
    os << s.steps[i] << ',' << num(s.times[i]) << ','
       << (s.steps[i] < s.window ? "recon" : "extrap");
    for (Eigen::Index d = 0; d < dx; ++d) os << ',' << num(s.truth[i](d));
    for (Eigen::Index d = 0; d < dx; ++d) os << ',' << num(s.pred[i](d));
    os << '\n';
  }
  return os.str();
}

std::string series_svg(const PlotSeries& s, int dim, const std::string& title) {
  if (s.steps.empty()) throw ConfigError("plot: empty series");
  if (dim < 0 || dim >= s.truth.front().size()) throw ShapeError("plot: dimension out of range");
  const double W = 640, H = 320, L = 60, R = 20, T = 30, B = 40;
  double t0 = s.times.front(), t1 = s.times.back();
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t i = 0; i < s.steps.size(); ++i) {
    lo = std::min({lo, s.truth[i](dim), s.pred[i](dim)});
    hi = std::max({hi, s.truth[i](dim), s.pred[i](dim)});
  }
  if (!(t1 > t0)) t1 = t0 + 1.0;
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto X = [&](double t) { return L + (t - t0) / (t1 - t0) * (W - L - R); };
  auto Y = [&](double v) { return T + (hi - v) / (hi - lo) * (H - T - B); };

  auto polyline = [&](std::size_t from, std::size_t to, bool truth, const char* color,
                      const char* dash) {
    if (to <= from) return std::string();
    std::ostringstream p;
    p << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"";
    if (*dash) p << " stroke-dasharray=\"" << dash << "\"";
    p << " points=\"";
    for (std::size_t i = from; i < to; ++i) {
      const double v = truth ? s.truth[i](dim) : s.pred[i](dim);
      p << px(X(s.times[i])) << ',' << px(Y(v)) << (i + 1 < to ? " " : "");
    }
    p << "\"/>\n";
    return p.str();
  };

  const std::size_t n = static_cast<std::size_t>(s.window);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << L << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">" << title
     << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << L << "\" y=\"" << H - 12 << "\" font-family=\"sans-serif\" font-size=\"11\">"
     << px(t0) << "</text>\n";
  os << "<text x=\"" << W - R - 40 << "\" y=\"" << H - 12
     << "\" font-family=\"sans-serif\" font-size=\"11\">" << px(t1) << "</text>\n";
  os << "<text x=\"4\" y=\"" << T + 10 << "\" font-family=\"sans-serif\" font-size=\"11\">"
     << px(hi) << "</text>\n";
  os << "<text x=\"4\" y=\"" << H - B << "\" font-family=\"sans-serif\" font-size=\"11\">"
     << px(lo) << "</text>\n";
  os << polyline(0, s.steps.size(), true, "black", "");
  os << polyline(0, n, false, "#1f77b4", "");
  // The extrapolated curve starts at the last reconstructed point so the two segments connect.
  os << polyline(n > 0 ? n - 1 : 0, s.steps.size(), false, "#d62728", "");
  if (s.horizon > 0 && n > 0) {
    const double xd = X(s.times[n - 1]);
    os << "<line class=\"divider\" x1=\"" << px(xd) << "\" y1=\"" << T << "\" x2=\"" << px(xd)
       << "\" y2=\"" << H - B << "\" stroke=\"gray\" stroke-dasharray=\"6,4\"/>\n";
  }
  os << "<text x=\"" << W - R - 200 << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"11\">"
     << "truth (black) recon (blue) extrap (red)</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::vector<std::filesystem::path> write_plots(const PlotSeries& s,
                                               const std::filesystem::path& out_dir,
                                               const std::string& stem, bool overwrite) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  const auto csv = out_dir / (stem + ".csv");
  ensure_writable(csv, overwrite);
  write_text_file(csv, series_csv(s));
  written.push_back(csv);
  const auto dx = s.truth.empty() ? 0 : s.truth.front().size();
  for (Eigen::Index d = 0; d < dx; ++d) {
    const auto svg = out_dir / (stem + "_x" + std::to_string(d) + ".svg");
    ensure_writable(svg, overwrite);
    write_text_file(svg, series_svg(s, static_cast<int>(d),
                                    "trajectory " + std::to_string(s.traj) + ", x" +
                                        std::to_string(d)));
    written.push_back(svg);
  }
  return written;
}

}  // namespace physssm
