#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedsn {

/// One row of the metrics CSV: round,client,split,metric,value.
/// `round` is a round number or "final"; `value` keeps its text form so a
/// report can reproduce it verbatim.
struct MetricRow {
  std::string round;
  std::string client;
  std::string split;
  std::string metric;
  std::string value;

  double number() const { return std::stod(value); }
  bool operator==(const MetricRow&) const = default;
};

inline constexpr const char* kMetricsHeader = "round,client,split,metric,value";

/// Shortest text that parses back to exactly `v`.
inline std::string format_value(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

class MetricsLog {
 public:
  void add(std::string round, std::string client, std::string split, std::string metric, double value) {
    rows_.push_back({std::move(round), std::move(client), std::move(split), std::move(metric), format_value(value)});
  }
  void add(std::size_t round, std::string client, std::string split, std::string metric, double value) {
    add(std::to_string(round), std::move(client), std::move(split), std::move(metric), value);
  }
  void add_row(MetricRow row) { rows_.push_back(std::move(row)); }
  void append(const MetricsLog& other) { rows_.insert(rows_.end(), other.rows_.begin(), other.rows_.end()); }

  const std::vector<MetricRow>& rows() const noexcept { return rows_; }

  void write(std::ostream& os) const {
    os << kMetricsHeader << '\n';
    for (const auto& r : rows_) os << r.round << ',' << r.client << ',' << r.split << ',' << r.metric << ',' << r.value << '\n';
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    write(os);
  }

 private:
  std::vector<MetricRow> rows_;
};

/// Parses a metrics CSV; malformed input is rejected with its line number.
inline std::vector<MetricRow> read_metrics(std::istream& is, const std::string& source = "metrics") {
  std::vector<MetricRow> rows;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& why) {
    throw std::runtime_error(source + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != kMetricsHeader) fail("expected header '" + std::string(kMetricsHeader) + "'");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 5) fail("expected 5 fields, got " + std::to_string(f.size()));
    if (f[0] != "final") {
      if (f[0].empty() || f[0].find_first_not_of("0123456789") != std::string::npos) fail("bad round '" + f[0] + "'");
    }
    if (f[1].empty() || f[2].empty() || f[3].empty()) fail("empty client, split or metric");
    double v = 0;
    const auto r = std::from_chars(f[4].data(), f[4].data() + f[4].size(), v);
    if (r.ec != std::errc() || r.ptr != f[4].data() + f[4].size()) fail("bad value '" + f[4] + "'");
    rows.push_back({f[0], f[1], f[2], f[3], f[4]});
  }
  if (lineno == 0) fail("empty file");
  return rows;
}

inline std::vector<MetricRow> read_metrics_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_metrics(is, path);
}

}  // namespace fedsn
