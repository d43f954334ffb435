#pragma once

// Result matrices (rows = eval domains, column groups = fractions), text and
// CSV rendering, and an SVG bar chart of in-domain sentence accuracy.

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cteinv/corpus.hpp"
#include "cteinv/errors.hpp"
#include "cteinv/evaluation.hpp"

namespace cteinv {

struct ResultMatrix {
  std::string attack;
  std::string train_domain;
  std::vector<double> fractions;  // descending, as in the printed tables
  std::vector<std::string> eval_domains;
  std::map<std::pair<std::string, double>, EvalReport> cells;  // (eval_domain, fraction)

  /// Missing cells come back as failed reports.
  EvalReport cell(const std::string& eval_domain, double fraction) const {
    auto it = cells.find({eval_domain, fraction});
    if (it != cells.end()) return it->second;
    return EvalReport::failed(attack, train_domain, eval_domain, fraction, "missing");
  }
  bool diagonal(const std::string& eval_domain) const { return eval_domain == train_domain; }
};

/// One matrix per (attack, train_domain), ordered by attack then domain.
inline std::vector<ResultMatrix> build_matrices(const std::vector<EvalReport>& reports) {
  std::map<std::pair<std::string, std::string>, ResultMatrix> groups;
  for (const auto& r : reports) {
    auto& m = groups[{r.attack, r.train_domain}];
    m.attack = r.attack;
    m.train_domain = r.train_domain;
    if (!m.cells.emplace(std::make_pair(r.eval_domain, r.fraction), r).second) {
      throw InvalidArgument("duplicate report for " + r.attack + "/" + r.train_domain + "/" + r.eval_domain + "/" +
                            fraction_label(fraction_from_value(r.fraction)));
    }
  }
  std::vector<ResultMatrix> out;
  for (auto& [key, m] : groups) {
    std::set<double, std::greater<>> fr;
    std::set<std::string> ed;
    for (const auto& [k, r] : m.cells) {
      ed.insert(k.first);
      fr.insert(k.second);
    }
    m.fractions.assign(fr.begin(), fr.end());
    // in-domain row first, then the rest alphabetically
    if (ed.count(m.train_domain)) m.eval_domains.push_back(m.train_domain);
    for (const auto& e : ed) {
      if (e != m.train_domain) m.eval_domains.push_back(e);
    }
    out.push_back(std::move(m));
  }
  return out;
}

inline ResultMatrix build_matrix(const std::vector<EvalReport>& reports) {
  auto ms = build_matrices(reports);
  if (ms.size() != 1) throw InvalidArgument("build_matrix: reports span " + std::to_string(ms.size()) + " tables");
  return ms.front();
}

namespace detail {

inline std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

}  // namespace detail

/// Aligned text table. In-domain rows carry a trailing '*'.
inline std::string render_text(const ResultMatrix& m) {
  std::ostringstream os;
  std::size_t label_w = 8;
  for (const auto& e : m.eval_domains) label_w = std::max(label_w, e.size() + 2);
  const std::size_t cell_w = 8;
  os << m.attack << " trained on " << m.train_domain << '\n';
  os << detail::pad("", label_w);
  for (double f : m.fractions) {
    std::size_t lines = 0;
    for (const auto& e : m.eval_domains) lines = std::max(lines, m.cell(e, f).train_lines);
    std::string head = "| " + fraction_label(fraction_from_value(f)) + ": " + std::to_string(lines) + " lines";
    os << detail::pad(head, 4 * cell_w + 2);
  }
  os << '\n' << detail::pad("Dataset", label_w);
  for (std::size_t i = 0; i < m.fractions.size(); ++i) {
    os << "| " << detail::pad("BLEU", cell_w) << detail::pad("3-gram", cell_w) << detail::pad("4-gram", cell_w)
       << detail::pad("Sent", cell_w);
  }
  os << '\n';
  for (const auto& e : m.eval_domains) {
    os << detail::pad(e + (m.diagonal(e) ? " *" : ""), label_w);
    for (double f : m.fractions) {
      const auto r = m.cell(e, f);
      os << "| ";
      if (!r.ok()) {
        os << detail::pad("failed", 4 * cell_w);
        continue;
      }
      os << detail::pad(detail::fixed4(r.metrics.bleu), cell_w) << detail::pad(detail::fixed4(r.metrics.p3), cell_w)
         << detail::pad(detail::fixed4(r.metrics.p4), cell_w) << detail::pad(detail::fixed4(r.metrics.sent_acc), cell_w);
    }
    os << '\n';
  }
  return os.str();
}

inline std::string render_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  os << "attack,train_domain,eval_domain,fraction,train_lines,in_domain,status,bleu,p3,p4,sent_acc,text_exact,n_sentences\n";
  for (const auto& r : reports) {
    os << r.attack << ',' << r.train_domain << ',' << r.eval_domain << ',' << r.fraction << ',' << r.train_lines << ','
       << (r.in_domain() ? 1 : 0) << ',' << r.status;
    if (r.ok()) {
      os << ',' << detail::fixed4(r.metrics.bleu) << ',' << detail::fixed4(r.metrics.p3) << ','
         << detail::fixed4(r.metrics.p4) << ',' << detail::fixed4(r.metrics.sent_acc) << ','
         << detail::fixed4(r.text_exact) << ',' << r.metrics.n_sentences;
    } else {
      os << ",,,,,,";
    }
    os << '\n';
  }
  return os.str();
}

/// Grouped bar chart of in-domain sentence accuracy: one group per
/// fraction (ascending), one bar per training domain.
inline std::string render_svg(const std::vector<EvalReport>& reports, const std::string& attack) {
  std::set<double> fr;
  std::set<std::string> domains;
  std::map<std::pair<std::string, double>, double> acc;
  for (const auto& r : reports) {
    if (r.attack != attack || !r.in_domain()) continue;
    fr.insert(r.fraction);
    domains.insert(r.train_domain);
    if (r.ok()) acc[{r.train_domain, r.fraction}] = r.metrics.sent_acc;
  }
  const int W = 640, H = 360, left = 60, right = 140, top = 40, bottom = 50;
  const double plot_w = W - left - right, plot_h = H - top - bottom;
  static const char* colors[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948"};
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\">" << attack << ": in-domain sentence accuracy</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double y = top + plot_h * (1.0 - t / 4.0);
    os << "<line x1=\"" << left << "\" x2=\"" << left + plot_w << "\" y1=\"" << y << "\" y2=\"" << y
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << t * 25 << "%</text>\n";
  }
  const double group_w = fr.empty() ? plot_w : plot_w / static_cast<double>(fr.size());
  const double bar_w = domains.empty() ? 0 : group_w * 0.8 / static_cast<double>(domains.size());
  std::size_t gi = 0;
  for (double f : fr) {
    const double gx = left + group_w * static_cast<double>(gi) + group_w * 0.1;
    std::size_t di = 0;
    for (const auto& d : domains) {
      auto it = acc.find({d, f});
      if (it != acc.end()) {
        const double h = plot_h * it->second;
        os << "<rect x=\"" << gx + bar_w * static_cast<double>(di) << "\" y=\"" << top + plot_h - h << "\" width=\""
           << bar_w << "\" height=\"" << h << "\" fill=\"" << colors[di % 6] << "\"/>\n";
      }
      ++di;
    }
    os << "<text x=\"" << gx + group_w * 0.4 << "\" y=\"" << top + plot_h + 20 << "\" text-anchor=\"middle\">"
       << fraction_label(fraction_from_value(f)) << "</text>\n";
    ++gi;
  }
  std::size_t di = 0;
  for (const auto& d : domains) {
    const double y = top + 16.0 * static_cast<double>(di);
    os << "<rect x=\"" << W - right + 16 << "\" y=\"" << y << "\" width=\"12\" height=\"12\" fill=\"" << colors[di % 6]
       << "\"/>\n";
    os << "<text x=\"" << W - right + 34 << "\" y=\"" << y + 10 << "\">" << d << "</text>\n";
    ++di;
  }
  os << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">training data</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace cteinv
