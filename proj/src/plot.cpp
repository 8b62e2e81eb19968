// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "agseg/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace agseg::plot {

namespace {

constexpr std::array<const char*, 10> kPalette{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                               "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fmt(double v, int decimals = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
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

std::string header(int width, int height) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  return os.str();
}

std::string text(double x, double y, const std::string& s, const char* anchor = "middle", int size = 12) {
  std::ostringstream os;
  os << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" text-anchor=\"" << anchor << "\" font-size=\"" << size
     << "\">" << escape(s) << "</text>\n";
  return os.str();
}

std::string line(double x1, double y1, double x2, double y2, const char* stroke = "black") {
  std::ostringstream os;
  os << "<line x1=\"" << fmt(x1) << "\" y1=\"" << fmt(y1) << "\" x2=\"" << fmt(x2) << "\" y2=\"" << fmt(y2)
     << "\" stroke=\"" << stroke << "\"/>\n";
  return os.str();
}

} // namespace

std::string loss_curves_svg(const train::TrainRunReport& report) {
  constexpr int W = 640, H = 400, L = 70, R = 150, T = 40, B = 50;
  const double pw = W - L - R, ph = H - T - B;

  int max_epoch = 0;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& f : report.folds) {
    for (const auto& e : f.epochs) {
      max_epoch = std::max(max_epoch, e.epoch);
      for (double v : {e.train_loss, e.val_loss}) {
        if (std::isfinite(v)) {
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      }
    }
  }
  if (!(lo <= hi)) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-12) {
    hi = lo + 1.0;
  }
  const double span_x = std::max(1, max_epoch);
  auto px = [&](double epoch) { return L + pw * epoch / span_x; };
  auto py = [&](double v) { return T + ph * (1.0 - (v - lo) / (hi - lo)); };

  std::ostringstream os;
  os << header(W, H);
  os << text(W / 2.0, 22, "Loss per epoch (" + report.mode + ")", "middle", 14);
  os << line(L, T + ph, L + pw, T + ph) << line(L, T, L, T + ph);
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4.0;
    os << line(L - 4, py(v), L, py(v)) << text(L - 8, py(v) + 4, fmt(v, 3), "end");
  }
  const int ticks = std::min(max_epoch, 10);
  for (int i = 0; i <= ticks; ++i) {
    const int epoch = ticks == 0 ? 0 : static_cast<int>(std::lround(static_cast<double>(max_epoch) * i / ticks));
    os << line(px(epoch), T + ph, px(epoch), T + ph + 4) << text(px(epoch), T + ph + 18, std::to_string(epoch));
  }
  os << text(L + pw / 2, H - 10, "epoch") << text(18, T + ph / 2, "loss");

  for (std::size_t k = 0; k < report.folds.size(); ++k) {
    const auto& f = report.folds[k];
    const char* colour = kPalette[k % kPalette.size()];
    for (int series = 0; series < 2; ++series) {
      std::ostringstream pts;
      for (const auto& e : f.epochs) {
        const double v = series == 0 ? e.train_loss : e.val_loss;
        if (std::isfinite(v)) {
          pts << fmt(px(e.epoch)) << ',' << fmt(py(v)) << ' ';
        }
      }
      os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\""
         << (series == 1 ? " stroke-dasharray=\"6,4\"" : "") << " points=\"" << pts.str() << "\"/>\n";
      for (const auto& e : f.epochs) {
        const double v = series == 0 ? e.train_loss : e.val_loss;
        if (std::isfinite(v)) {
          os << "<circle cx=\"" << fmt(px(e.epoch)) << "\" cy=\"" << fmt(py(v)) << "\" r=\"2.5\" fill=\"" << colour
             << "\"/>\n";
        }
      }
    }
    const double ly = T + 16.0 * static_cast<double>(k);
    os << line(L + pw + 15, ly, L + pw + 35, ly, colour)
       << text(L + pw + 40, ly + 4, "fold " + std::to_string(f.fold), "start");
  }
  const double ly = T + 16.0 * static_cast<double>(report.folds.size()) + 10;
  os << text(L + pw + 15, ly, "solid: train", "start") << text(L + pw + 15, ly + 16, "dashed: validation", "start");
  os << "</svg>\n";
  return os.str();
}

std::string confusion_svg(const eval::ConfusionMatrix& cm, const std::string& title) {
  constexpr int W = 360, H = 340, L = 110, T = 60, C = 100;
  const std::array<std::array<std::int64_t, 2>, 2> cells{{{cm.tn, cm.fp}, {cm.fn, cm.tp}}};
  const std::array<const char*, 2> labels{"background", "tumor"};

  std::ostringstream os;
  os << header(W, H);
  os << text(W / 2.0, 22, title, "middle", 14);
  os << text(L + C, T - 10, "predicted") << text(30, T + C + 4, "actual");
  for (int r = 0; r < 2; ++r) {
    const auto row_total = cells[r][0] + cells[r][1];
    for (int c = 0; c < 2; ++c) {
      const double frac = row_total > 0 ? static_cast<double>(cells[r][c]) / static_cast<double>(row_total) : 0.0;
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - frac)));
      char colour[16];
      std::snprintf(colour, sizeof colour, "#%02x%02xff", shade, shade);
      const double x = L + c * C, y = T + r * C;
      os << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" width=\"" << C << "\" height=\"" << C
         << "\" fill=\"" << colour << "\" stroke=\"black\"/>\n";
      os << text(x + C / 2.0, y + C / 2.0, std::to_string(cells[r][c]), "middle", 14);
      os << text(x + C / 2.0, y + C / 2.0 + 18, fmt(frac, 3), "middle", 11);
    }
    os << text(L - 6, T + r * C + C / 2.0 + 4, labels[static_cast<std::size_t>(r)], "end");
    os << text(L + r * C + C / 2.0, T + 2 * C + 18, labels[static_cast<std::size_t>(r)]);
  }
  os << "</svg>\n";
  return os.str();
}

std::string fold_metrics_svg(const train::TrainRunReport& report) {
  const std::array<const char*, 5> names{"iou", "accuracy", "precision", "recall", "f1"};
  std::vector<std::pair<std::string, eval::MetricsReport>> groups;
  for (const auto& f : report.folds) {
    groups.emplace_back("fold " + std::to_string(f.fold), f.metrics);
  }
  groups.emplace_back("aggregate", report.aggregate);

  constexpr int L = 50, T = 40, B = 50, R = 120, bar = 12, gap = 18, H = 320;
  const int group_width = static_cast<int>(names.size()) * bar + gap;
  const int W = L + R + static_cast<int>(groups.size()) * group_width;
  const double ph = H - T - B;
  auto py = [&](double v) { return T + ph * (1.0 - std::clamp(v, 0.0, 1.0)); };

  std::ostringstream os;
  os << header(W, H);
  os << text(W / 2.0, 22, "Metrics per fold", "middle", 14);
  os << line(L, T + ph, W - R, T + ph) << line(L, T, L, T + ph);
  for (int i = 0; i <= 4; ++i) {
    const double v = i / 4.0;
    os << line(L - 4, py(v), L, py(v)) << text(L - 8, py(v) + 4, fmt(v), "end");
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& m = groups[g].second;
    const std::array<double, 5> values{m.iou, m.accuracy, m.precision, m.recall, m.f1};
    const double x0 = L + gap / 2.0 + static_cast<double>(g) * group_width;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double x = x0 + static_cast<double>(i) * bar;
      os << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(py(values[i])) << "\" width=\"" << bar - 1 << "\" height=\""
         << fmt(T + ph - py(values[i])) << "\" fill=\"" << kPalette[i] << "\"/>\n";
    }
    os << text(x0 + names.size() * bar / 2.0, T + ph + 18, groups[g].first);
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double y = T + 16.0 * static_cast<double>(i);
    os << "<rect x=\"" << W - R + 15 << "\" y=\"" << fmt(y - 9) << "\" width=\"10\" height=\"10\" fill=\""
       << kPalette[i] << "\"/>\n"
       << text(W - R + 30, y, names[i], "start");
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<std::pair<std::string, std::string>> render_report(const train::TrainRunReport& report) {
  std::vector<std::pair<std::string, std::string>> out;
  out.emplace_back("loss_curves.svg", loss_curves_svg(report));
  for (const auto& f : report.folds) {
    out.emplace_back("confusion_fold" + std::to_string(f.fold) + ".svg",
                     confusion_svg(f.confusion, "Confusion matrix, fold " + std::to_string(f.fold)));
  }
  out.emplace_back("confusion_aggregate.svg", confusion_svg(report.aggregate_confusion, "Confusion matrix, aggregate"));
  out.emplace_back("fold_metrics.svg", fold_metrics_svg(report));
  return out;
}

} // namespace agseg::plot
