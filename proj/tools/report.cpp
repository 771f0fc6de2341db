#include "report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "gfm/error.hpp"
#include "gfm/trainer.hpp"

namespace gfm::cli {

namespace fs = std::filesystem;

namespace {

const cv::Scalar kInk(40, 40, 40);
const cv::Scalar kGrid(225, 225, 225);
const std::vector<cv::Scalar> kPalette{{180, 119, 31}, {14, 127, 255}, {44, 160, 44}, {40, 39, 214}, {189, 103, 148}};

struct Series {
  std::string name;
  std::vector<double> x, y;
};

std::string num(double v, int prec = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

void text(cv::Mat& img, const std::string& s, cv::Point at, double scale = 0.4, const cv::Scalar& color = kInk) {
  cv::putText(img, s, at, cv::FONT_HERSHEY_SIMPLEX, scale, color, 1, cv::LINE_AA);
}

void line_plot(const fs::path& path, const std::string& title, const std::vector<Series>& series) {
  const int w = 640, h = 400, left = 60, right = 20, top = 40, bottom = 45;
  cv::Mat img(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x, double y) {
    return cv::Point(left + static_cast<int>(std::lround((x - x0) / (x1 - x0) * (w - left - right))),
                     top + static_cast<int>(std::lround((y1 - y) / (y1 - y0) * (h - top - bottom))));
  };
  for (int k = 0; k <= 4; ++k) {
    const double y = y0 + (y1 - y0) * k / 4.0;
    cv::line(img, px(x0, y), px(x1, y), kGrid, 1);
    text(img, num(y), cv::Point(4, px(x0, y).y + 4), 0.35);
  }
  cv::rectangle(img, px(x0, y1), px(x1, y0), kInk, 1);
  text(img, num(x0), cv::Point(left - 4, h - bottom + 16), 0.35);
  text(img, num(x1), cv::Point(w - right - 24, h - bottom + 16), 0.35);
  text(img, "epoch", cv::Point(w / 2 - 20, h - 10), 0.4);
  text(img, title, cv::Point(left, 24), 0.5);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const auto color = kPalette[k % kPalette.size()];
    for (std::size_t i = 1; i < s.x.size(); ++i)
      cv::line(img, px(s.x[i - 1], s.y[i - 1]), px(s.x[i], s.y[i]), color, 2, cv::LINE_AA);
    if (s.x.size() == 1) cv::circle(img, px(s.x[0], s.y[0]), 3, color, cv::FILLED);
    const cv::Point key(w - right - 150, top + 16 + 16 * static_cast<int>(k));
    cv::line(img, key, key + cv::Point(18, 0), color, 2);
    text(img, s.name, key + cv::Point(24, 4), 0.4);
  }
  check(cv::imwrite(path.string(), img), Errc::io_error, "cannot write " + path.string());
}

void bar_plot(const fs::path& path, const std::string& title, const std::vector<std::pair<std::string, double>>& bars) {
  const int bw = 70, w = std::max(360, 80 + bw * static_cast<int>(bars.size())), h = 360, top = 40, bottom = 70;
  cv::Mat img(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
  double lo = 0, hi = 0;
  for (const auto& [_, v] : bars) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi - lo < 1e-9) hi = lo + 1;
  const double pad = 0.1 * (hi - lo);
  hi += pad;
  lo -= lo < 0 ? pad : 0;
  auto py = [&](double v) { return top + static_cast<int>(std::lround((hi - v) / (hi - lo) * (h - top - bottom))); };
  text(img, title, cv::Point(10, 24), 0.5);
  cv::line(img, cv::Point(40, py(0)), cv::Point(w - 10, py(0)), kInk, 1);
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& [label, v] = bars[i];
    const int x = 50 + bw * static_cast<int>(i);
    const auto color = v >= 0 ? kPalette[2] : kPalette[3];
    cv::rectangle(img, cv::Point(x, py(std::max(v, 0.0))), cv::Point(x + bw - 16, py(std::min(v, 0.0))), color,
                  cv::FILLED);
    text(img, num(v, 3), cv::Point(x, (v >= 0 ? py(v) - 4 : py(v) + 14)), 0.35);
    text(img, label.substr(0, 11), cv::Point(x - 4, h - bottom + 18 + 14 * static_cast<int>(i % 2)), 0.35);
  }
  text(img, "ARP (%)", cv::Point(4, h - 10), 0.4);
  check(cv::imwrite(path.string(), img), Errc::io_error, "cannot write " + path.string());
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (char ch : line) {
      if (ch == '"')
        quoted = !quoted;
      else if (ch == ',' && !quoted) {
        fields.push_back(cur);
        cur.clear();
      } else if (ch != '\r')
        cur += ch;
    }
    fields.push_back(cur);
    rows.push_back(std::move(fields));
  }
  return rows;
}

std::string slug(const fs::path& rel) {
  std::string s = rel.string();
  for (auto& ch : s)
    if (ch == '/' || ch == '\\' || ch == ' ') ch = '-';
  return s;
}

}  // namespace

ReportArtifacts emit_report(const fs::path& run_dir) {
  check(fs::is_directory(run_dir), Errc::empty_run_directory, run_dir.string() + " is not a directory");
  std::vector<fs::path> loss_files, summary_files, arp_files;
  for (const auto& e : fs::recursive_directory_iterator(run_dir)) {
    if (!e.is_regular_file()) continue;
    const auto name = e.path().filename().string();
    if (name == "loss.csv") loss_files.push_back(e.path());
    if (name == "summary.csv") summary_files.push_back(e.path());
    if (name == "arp.csv") arp_files.push_back(e.path());
  }
  std::sort(loss_files.begin(), loss_files.end());
  std::sort(summary_files.begin(), summary_files.end());
  std::sort(arp_files.begin(), arp_files.end());
  check(!loss_files.empty() || !summary_files.empty() || !arp_files.empty(), Errc::empty_run_directory,
        run_dir.string() + " has no loss curves, ablation summaries or ARP tables");

  ReportArtifacts out;
  std::ostringstream md;
  md << "# Run report\n\n";

  if (!loss_files.empty()) {
    md << "## Pretraining\n\n| run | epochs | final L_MIM | final L_feat | final total |\n|---|---|---|---|---|\n";
    for (const auto& f : loss_files) {
      const auto curve = read_loss_csv(f);
      if (curve.empty()) continue;
      Series mim{"L_MIM", {}, {}}, feat{"L_feat", {}, {}}, total{"total", {}, {}};
      for (const auto& e : curve) {
        if (e.l_mim) {
          mim.x.push_back(e.epoch);
          mim.y.push_back(*e.l_mim);
        }
        if (e.l_feat) {
          feat.x.push_back(e.epoch);
          feat.y.push_back(*e.l_feat);
        }
        total.x.push_back(e.epoch);
        total.y.push_back(e.total);
      }
      std::vector<Series> series;
      for (auto* s : {&mim, &feat, &total})
        if (!s->x.empty()) series.push_back(*s);
      const auto rel = fs::relative(f.parent_path(), run_dir);
      const std::string name = rel.empty() || rel == "." ? "" : "-" + slug(rel);
      const auto png = run_dir / ("loss_curve" + name + ".png");
      line_plot(png, "loss " + (name.empty() ? std::string("") : name.substr(1)), series);
      out.plots.push_back(png);
      const auto& last = curve.back();
      md << "| " << (name.empty() ? "." : name.substr(1)) << " | " << curve.size() << " | "
         << (last.l_mim ? num(*last.l_mim, 5) : "-") << " | " << (last.l_feat ? num(*last.l_feat, 5) : "-") << " | "
         << num(last.total, 5) << " |\n";
      md << "\n![loss](" << png.filename().string() << ")\n\n";
    }
  }

  for (const auto& f : summary_files) {
    const auto rows = read_csv(f);
    if (rows.size() < 2) continue;
    const auto& head = rows[0];
    const auto col = [&](const std::string& name) {
      return static_cast<std::size_t>(std::find(head.begin(), head.end(), name) - head.begin());
    };
    const std::size_t axis = col("axis"), label = col("label"), arp = col("arp");
    if (axis >= head.size() || label >= head.size() || arp >= head.size()) continue;
    md << "## Ablation\n\n|";
    for (const auto& h : head) md << ' ' << h << " |";
    md << "\n|";
    for (std::size_t i = 0; i < head.size(); ++i) md << "---|";
    md << '\n';
    std::map<std::string, std::vector<std::pair<std::string, double>>> by_axis;
    std::vector<std::string> axis_order;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      md << '|';
      for (const auto& v : rows[r]) md << ' ' << v << " |";
      md << '\n';
      if (!by_axis.count(rows[r][axis])) axis_order.push_back(rows[r][axis]);
      by_axis[rows[r][axis]].emplace_back(rows[r][label], std::stod(rows[r][arp]));
    }
    md << '\n';
    for (const auto& a : axis_order) {
      const auto png = run_dir / ("ablation_" + a + ".png");
      bar_plot(png, "ARP by " + a, by_axis[a]);
      out.plots.push_back(png);
      md << "![" << a << "](" << png.filename().string() << ")\n";
    }
    md << '\n';
  }

  for (const auto& f : arp_files) {
    const auto rows = read_csv(f);
    if (rows.size() < 2) continue;
    md << "## ARP\n\n| method | ARP (%) |\n|---|---|\n";
    std::vector<std::pair<std::string, double>> bars;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      md << "| " << rows[r][0] << " | " << rows[r][1] << " |\n";
      bars.emplace_back(rows[r][0], std::stod(rows[r][1]));
    }
    const auto rel = fs::relative(f.parent_path(), run_dir);
    const auto png = run_dir / ((rel.empty() || rel == "." ? std::string("arp") : "arp-" + slug(rel)) + ".png");
    bar_plot(png, "ARP vs baseline", bars);
    out.plots.push_back(png);
    md << "\n![arp](" << png.filename().string() << ")\n\n";
  }

  out.markdown = run_dir / "report.md";
  std::ofstream os(out.markdown);
  check(static_cast<bool>(os), Errc::io_error, "cannot write " + out.markdown.string());
  os << md.str();
  return out;
}

}  // namespace gfm::cli
