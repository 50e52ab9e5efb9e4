#include "gatescope/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "gatescope/error.hpp"

namespace gatescope {
namespace {

std::string fmt(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string hits(const json& h) {
  return std::to_string(h.at("passed").get<std::size_t>()) + "/" + std::to_string(h.at("total").get<std::size_t>());
}

std::string escape_xml(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

std::string render_markdown(const json& report) {
  if (!report.is_object() || !report.contains("candidates")) throw Error("report render: not a run report");
  std::ostringstream md;
  const auto& be = report.at("backend");
  md << "# Discovery run\n\n";
  md << "Backend `" << be.at("model_id").get<std::string>() << "` (" << be.at("kind").get<std::string>()
     << "), layer " << be.at("layer") << ", d_model " << be.at("d_model") << ", d_sae " << be.at("d_sae") << ".\n\n";
  const auto& plan = report.at("plan");
  md << "Protocol " << plan.at("protocol").get<std::string>() << ", alphas " << plan.at("alphas").dump()
     << ", seeds " << plan.at("generation").at("seeds").dump() << ", drift-aware rating "
     << (plan.at("drift_aware").get<bool>() ? "on" : "off") << ".\n\n";

  md << "## Stages 1 and 2\n\n| emotion | top scan | stage 3 | note |\n|---|---|---|---|\n";
  for (const auto& e : report.at("emotions")) {
    std::string top = "-";
    if (!e.at("scan").empty()) {
      const auto& s = e.at("scan")[0];
      top = "f" + std::to_string(s.at("feature").get<std::uint32_t>()) + " (" + fmt(s.at("final_score").get<double>()) + ")";
    }
    md << "| " << e.at("emotion").get<std::string>() << " | " << top << " | " << e.at("stage3").size() << " | "
       << e.at("note").get<std::string>() << " |\n";
  }

  md << "\n## Stage 3\n\n| emotion | feature | rating | status | chosen alpha | alpha trajectory | p | BH |\n"
        "|---|---|---|---|---|---|---|---|\n";
  for (const auto& c : report.at("candidates")) {
    std::string traj;
    for (const auto& a : c.at("alphas")) {
      if (!traj.empty()) traj += ", ";
      traj += fmt(a.at("alpha").get<double>(), 0) + ": " + hits(a.at("hits"));
    }
    md << "| " << c.at("emotion").get<std::string>() << " | f" << c.at("feature") << " | "
       << (c.at("rating").is_null() ? std::string("-") : c.at("rating").dump()) << " | "
       << c.at("status").get<std::string>() << (c.at("bypassed").get<bool>() ? " (bypass)" : "") << " | "
       << (c.at("chosen_alpha").is_null() ? std::string("-") : fmt(c.at("chosen_alpha").get<double>(), 0)) << " | "
       << traj << " | " << sci(c.at("p_value").get<double>()) << " | " << (c.at("fdr_reject").get<bool>() ? "yes" : "no")
       << " |\n";
  }

  md << "\n## Controls\n\n";
  for (const auto& [emotion, ctl] : report.at("controls").items()) {
    md << "- " << emotion << ": ";
    const auto& att = ctl.at("attractors");
    if (att.empty()) {
      md << "no attractor\n";
    } else {
      md << "attractor warning for answer(s) " << att.dump() << "\n";
    }
  }

  md << "\n## Confirmed gates\n\n";
  if (report.at("confirmed").empty()) md << "None.\n";
  for (const auto& g : report.at("confirmed")) {
    const auto& comp = g.at("recipe").at("components")[0];
    md << "- " << g.at("emotion").get<std::string>() << ": f" << comp.at("f") << " at alpha "
       << fmt(comp.at("alpha").get<double>(), 1) << ", " << hits(g.at("hits")) << " cells, "
       << g.at("status").get<std::string>() << ", " << g.at("mechanism_tag").get<std::string>() << "\n";
  }

  const auto& st = report.at("stats");
  md << "\n## Statistics\n\n";
  if (!st.at("null_model").is_null()) {
    const auto& nm = st.at("null_model");
    md << "- Null cell pass probability (" << nm.at("options") << " options, " << nm.at("threshold") << " of "
       << nm.at("panel") << "): " << fmt(nm.at("cell_pass_prob").get<double>(), 6) << "\n";
    md << "- Expected false (candidate, alpha) confirmations: " << sci(st.at("expected_false_alpha_cells").get<double>())
       << "\n";
  }
  md << "- Fleiss kappa over " << st.at("kappa_subjects") << " fully valid panels: "
     << (st.at("fleiss_kappa").is_null() ? std::string("n/a") : fmt(st.at("fleiss_kappa").get<double>())) << "\n";

  const auto& b = report.at("budget");
  md << "\n## Budget\n\n" << b.at("generations") << " generations, " << b.at("judge_calls") << " judge calls, "
     << b.at("rating_calls") << " rating calls, " << b.at("missing_cells") << " missing cells.\n";
  return md.str();
}

std::string plot_hit_rate_svg(const json& report) {
  if (!report.is_object() || !report.contains("candidates")) throw Error("plot: not a run report");
  const double W = 640, H = 400, L = 60, R = 180, T = 30, B = 50;
  std::vector<double> alphas = report.at("plan").at("alphas").get<std::vector<double>>();
  const double amin = alphas.front(), amax = alphas.back() == alphas.front() ? alphas.front() + 1 : alphas.back();
  auto x = [&](double a) { return L + (a - amin) / (amax - amin) * (W - L - R); };
  auto y = [&](double r) { return H - B - r * (H - T - B); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << L << "\" y=\"18\" font-size=\"14\">Hit rate vs alpha</text>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << y(0) << "\" x2=\"" << W - R << "\" y2=\"" << y(0) << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << y(0) << "\" x2=\"" << L << "\" y2=\"" << y(1) << "\" stroke=\"black\"/>\n";
  for (double a : alphas)
    svg << "<text x=\"" << x(a) << "\" y=\"" << y(0) + 18 << "\" text-anchor=\"middle\">" << fmt(a, 0) << "</text>\n";
  for (double r : {0.0, 0.5, 1.0})
    svg << "<text x=\"" << L - 8 << "\" y=\"" << y(r) + 4 << "\" text-anchor=\"end\">" << fmt(r, 1) << "</text>\n";
  svg << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">alpha</text>\n";

  std::size_t line = 0;
  for (const auto& c : report.at("candidates")) {
    bool any = false;
    for (const auto& a : c.at("alphas")) any = any || a.at("hits").at("passed").get<std::size_t>() > 0;
    if (!any) continue;
    const char* color = kPalette[line % std::size(kPalette)];
    std::string pts;
    for (const auto& a : c.at("alphas")) {
      const double total = a.at("hits").at("total").get<double>();
      const double rate = total > 0 ? a.at("hits").at("passed").get<double>() / total : 0.0;
      pts += fmt(x(a.at("alpha").get<double>()), 1) + "," + fmt(y(rate), 1) + " ";
    }
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts << "\"/>\n";
    const std::string label = c.at("emotion").get<std::string>() + " f" + c.at("feature").dump();
    svg << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * line + 10 << "\" fill=\"" << color << "\">"
        << escape_xml(label) << "</text>\n";
    ++line;
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string plot_norm_histogram_svg(const TensorMatrix& dec, std::size_t bins) {
  if (bins == 0) throw Error("plot: bins must be >= 1");
  std::vector<double> norms(dec.rows());
  for (std::size_t f = 0; f < dec.rows(); ++f) {
    double s = 0.0;
    for (float v : dec.row(f)) s += static_cast<double>(v) * v;
    norms[f] = std::sqrt(s);
  }
  const auto [mn_it, mx_it] = std::minmax_element(norms.begin(), norms.end());
  const double lo = *mn_it, hi = *mx_it > *mn_it ? *mx_it : *mn_it + 1e-9;
  std::vector<std::size_t> counts(bins, 0);
  for (double n : norms) {
    auto b = static_cast<std::size_t>((n - lo) / (hi - lo) * static_cast<double>(bins));
    ++counts[std::min(b, bins - 1)];
  }
  const std::size_t peak = *std::max_element(counts.begin(), counts.end());
  const double W = 640, H = 360, L = 60, R = 20, T = 30, B = 50;
  const double bw = (W - L - R) / static_cast<double>(bins);

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << L << "\" y=\"18\" font-size=\"14\">Decoder row norms (" << dec.rows() << " features)</text>\n";
  for (std::size_t b = 0; b < bins; ++b) {
    const double h = peak ? static_cast<double>(counts[b]) / static_cast<double>(peak) * (H - T - B) : 0.0;
    svg << "<rect x=\"" << fmt(L + b * bw, 1) << "\" y=\"" << fmt(H - B - h, 1) << "\" width=\"" << fmt(bw - 1, 1)
        << "\" height=\"" << fmt(h, 1) << "\" fill=\"#4a7ab5\"/>\n";
  }
  svg << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << L << "\" y=\"" << H - B + 18 << "\">" << fmt(lo) << "</text>\n";
  svg << "<text x=\"" << W - R << "\" y=\"" << H - B + 18 << "\" text-anchor=\"end\">" << fmt(hi) << "</text>\n";
  svg << "<text x=\"" << L - 8 << "\" y=\"" << T + 4 << "\" text-anchor=\"end\">" << peak << "</text>\n";
  svg << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">||W_dec[f]||</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace gatescope
