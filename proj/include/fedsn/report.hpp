#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fedsn/metrics.hpp"
#include <nlohmann/json.hpp>

namespace fedsn {

/// Scores for one run (one metrics CSV), keyed by site id in first-seen order.
struct RunScores {
  std::string label;
  std::vector<std::string> sites;                              // sites with a final test Dice row
  std::map<std::string, std::string> test_dice;                // verbatim cell text
  std::map<std::string, std::string> val_dice;
  std::map<std::string, std::vector<double>> case_dice;        // test split, ascending case id
  std::vector<std::string> cross_sites;                        // evaluation sites in first-seen order
  std::map<std::string, std::map<std::string, double>> cross;  // [trained on][evaluated on]

  /// Mean test Dice over sites ("Avg. (loc.)").
  double local_average() const {
    double s = 0;
    for (const auto& id : sites) s += std::stod(test_dice.at(id));
    return sites.empty() ? 0.0 : s / static_cast<double>(sites.size());
  }
  double validation_average() const {
    double s = 0;
    for (const auto& [id, v] : val_dice) s += std::stod(v);
    return val_dice.empty() ? 0.0 : s / static_cast<double>(val_dice.size());
  }
  /// Mean Dice of `trained` on every other site's test data; needs two sites.
  double generalization(const std::string& trained) const {
    const auto& row = cross.at(trained);
    double s = 0;
    std::size_t n = 0;
    for (const auto& [eval, d] : row) {
      if (eval == trained) continue;
      s += d;
      ++n;
    }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
  }
  double mean_generalization() const {
    double s = 0;
    for (const auto& [trained, row] : cross) s += generalization(trained);
    return cross.empty() ? 0.0 : s / static_cast<double>(cross.size());
  }
};

/// Collects the "final" rows of a metrics file. Site names are taken from the
/// rows themselves so any CSV following the schema can be reported.
inline RunScores scores_from_rows(const std::vector<MetricRow>& rows, std::string label) {
  RunScores r;
  r.label = std::move(label);
  for (const auto& row : rows) {
    if (row.round != "final") continue;
    if (row.split == "test" && row.metric == "dice") {
      if (!r.test_dice.count(row.client)) r.sites.push_back(row.client);
      r.test_dice[row.client] = row.value;
    } else if (row.split == "val" && row.metric == "dice") {
      r.val_dice[row.client] = row.value;
    } else if (row.split == "test" && row.metric.rfind("case_dice", 0) == 0) {
      r.case_dice[row.client].push_back(row.number());
    } else if (row.split.rfind("test:", 0) == 0 && row.metric == "dice") {
      const std::string eval = row.split.substr(5);
      if (std::find(r.cross_sites.begin(), r.cross_sites.end(), eval) == r.cross_sites.end()) {
        r.cross_sites.push_back(eval);
      }
      r.cross[row.client][eval] = row.number();
    }
  }
  return r;
}

struct Distribution {
  std::size_t n = 0;
  double min = 0, median = 0, max = 0;
};

inline Distribution distribution(std::vector<double> v) {
  Distribution d;
  d.n = v.size();
  if (v.empty()) return d;
  std::sort(v.begin(), v.end());
  d.min = v.front();
  d.max = v.back();
  const std::size_t h = v.size() / 2;
  d.median = v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
  return d;
}

struct Report {
  std::vector<RunScores> runs;
  std::string text;                            // human-readable tables
  std::map<std::string, std::string> files;    // file name -> content
  bool empty() const { return runs.empty(); }
};

namespace detail {

inline std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

inline std::string render(const std::vector<std::vector<std::string>>& table) {
  std::vector<std::size_t> width;
  for (const auto& row : table) {
    if (width.size() < row.size()) width.resize(row.size(), 0);
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::string out;
  for (const auto& row : table) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) line += (i ? "  " : "") + pad(row[i], width[i]);
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

/// Labels are file stems, qualified by the parent directory when two inputs
/// share a stem.
inline std::vector<std::string> labels_for(const std::vector<std::string>& paths) {
  std::map<std::string, std::size_t> stems;
  for (const auto& p : paths) ++stems[std::filesystem::path(p).stem().string()];
  std::vector<std::string> out;
  for (const auto& p : paths) {
    const std::filesystem::path f(p);
    const std::string stem = f.stem().string();
    const std::string parent = f.parent_path().filename().string();
    out.push_back(stems[stem] > 1 && !parent.empty() ? parent + "/" + stem : stem);
  }
  return out;
}

}  // namespace detail

/// Builds the per-site test Dice table with its Avg. (loc.) column, the
/// cross-site matrix with Gen. per row, and per-case Dice distributions.
inline Report build_report(const std::vector<std::vector<MetricRow>>& runs, const std::vector<std::string>& labels) {
  Report rep;
  if (runs.empty()) return rep;
  for (std::size_t i = 0; i < runs.size(); ++i) rep.runs.push_back(scores_from_rows(runs[i], labels.at(i)));

  std::vector<std::string> columns;
  for (const auto& r : rep.runs)
    for (const auto& s : r.sites)
      if (std::find(columns.begin(), columns.end(), s) == columns.end()) columns.push_back(s);

  std::vector<std::vector<std::string>> t1{{"run"}};
  for (const auto& c : columns) t1[0].push_back(c);
  t1[0].push_back("Avg. (loc.)");
  std::string t1_csv = "run";
  for (const auto& c : columns) t1_csv += "," + c;
  t1_csv += ",avg_loc\n";
  for (const auto& r : rep.runs) {
    std::vector<std::string> row{r.label};
    std::string line = r.label;
    for (const auto& c : columns) {
      const auto it = r.test_dice.find(c);
      const std::string cell = it == r.test_dice.end() ? "-" : it->second;
      row.push_back(cell);
      line += "," + (it == r.test_dice.end() ? std::string() : it->second);
    }
    const std::string avg = r.sites.empty() ? "-" : format_value(r.local_average());
    row.push_back(avg);
    line += "," + (r.sites.empty() ? std::string() : avg);
    t1.push_back(std::move(row));
    t1_csv += line + "\n";
  }
  rep.text = "Test Dice per site\n" + detail::render(t1);
  rep.files["table1.csv"] = t1_csv;

  std::string t2_csv = "run,trained_on,evaluated_on,dice\n";
  for (const auto& r : rep.runs) {
    if (r.cross.empty()) continue;
    std::vector<std::vector<std::string>> t2{{"trained \\ tested"}};
    for (const auto& e : r.cross_sites) t2[0].push_back(e);
    t2[0].push_back("Gen.");
    for (const auto& [trained, row] : r.cross) {
      std::vector<std::string> line{trained};
      for (const auto& e : r.cross_sites) {
        const auto it = row.find(e);
        line.push_back(it == row.end() ? "-" : format_value(it->second));
        if (it != row.end()) t2_csv += r.label + "," + trained + "," + e + "," + format_value(it->second) + "\n";
      }
      line.push_back(row.size() > 1 ? format_value(r.generalization(trained)) : "-");
      t2.push_back(std::move(line));
    }
    rep.text += "\nCross-site Dice: " + r.label + "\n" + detail::render(t2);
    if (r.cross.size() > 1) rep.text += "Gen. mean: " + format_value(r.mean_generalization()) + "\n";
  }
  rep.files["table2.csv"] = t2_csv;

  std::string dist = "run,site,n,min,median,max\n";
  for (const auto& r : rep.runs) {
    for (const auto& s : r.sites) {
      const auto it = r.case_dice.find(s);
      if (it == r.case_dice.end()) continue;
      const Distribution d = distribution(it->second);
      dist += r.label + "," + s + "," + std::to_string(d.n) + "," + format_value(d.min) + "," +
              format_value(d.median) + "," + format_value(d.max) + "\n";
    }
  }
  rep.files["case_dice_distribution.csv"] = dist;
  rep.files["report.txt"] = rep.text;
  return rep;
}

/// Reads and reports metrics files; malformed files are rejected with the
/// offending line number.
inline Report build_report(const std::vector<std::string>& csv_paths) {
  std::vector<std::vector<MetricRow>> runs;
  for (const auto& p : csv_paths) runs.push_back(read_metrics_file(p));
  return build_report(runs, detail::labels_for(csv_paths));
}

inline void write_report(const Report& rep, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, content] : rep.files) {
    std::ofstream os(dir / name, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
    os << content;
  }
}

}  // namespace fedsn
