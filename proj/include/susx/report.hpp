#pragma once

// Line-oriented experiment reports:
//
//   susx-report v1
//   key<TAB>value
//   ...
//   alpha,beta,gamma,tau,val_accuracy     (optional grid block)
//   0.1,1,0.1,1,0.75
//
// Numbers use the shortest representation that round-trips.

#include <array>
#include <charconv>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "susx/error.hpp"
#include "susx/eval_harness.hpp"

namespace susx {

inline constexpr std::string_view kReportHeader = "susx-report v1";
inline constexpr std::string_view kGridHeader = "alpha,beta,gamma,tau,val_accuracy";

inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) throw Error(ErrorCode::InvalidArgument, "unformattable number");
  return std::string(buf.data(), end);
}

struct Report {
  std::vector<std::pair<std::string, std::string>> fields;
  std::optional<std::vector<SweepPoint>> grid;

  void add(std::string key, std::string value) { fields.emplace_back(std::move(key), std::move(value)); }
  void add(std::string key, double value) { add(std::move(key), format_double(value)); }
  void add(std::string key, std::size_t value) { add(std::move(key), std::to_string(value)); }

  const std::string* find(std::string_view key) const {
    for (const auto& [k, v] : fields) {
      if (k == key) return &v;
    }
    return nullptr;
  }
};

inline void add_params(Report& r, const HyperParams& hp, std::string_view prefix = "") {
  const std::string p(prefix);
  r.add(p + "alpha", hp.alpha);
  r.add(p + "beta", hp.beta);
  r.add(p + "gamma", hp.gamma);
  r.add(p + "tau", hp.tau);
  r.add(p + "epsilon", hp.epsilon);
}

inline void write_report(std::ostream& out, const Report& r) {
  out << kReportHeader << '\n';
  for (const auto& [k, v] : r.fields) {
    if (k.find_first_of("\t\n") != std::string::npos || v.find_first_of("\t\n") != std::string::npos) {
      throw Error(ErrorCode::InvalidArgument, "report field contains tab or newline: " + k);
    }
    out << k << '\t' << v << '\n';
  }
  if (r.grid) {
    out << kGridHeader << '\n';
    for (const auto& p : *r.grid) {
      out << format_double(p.params.alpha) << ',' << format_double(p.params.beta) << ','
          << format_double(p.params.gamma) << ',' << format_double(p.params.tau) << ','
          << format_double(p.accuracy) << '\n';
    }
  }
}

inline std::string to_text(const Report& r) {
  std::ostringstream out;
  write_report(out, r);
  return out.str();
}

inline Report parse_report(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader) throw Error(ErrorCode::MalformedHeader, "report header");
  Report r;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line == kGridHeader) {
      r.grid.emplace();
      continue;
    }
    if (r.grid) {
      std::array<double, 5> v{};
      std::stringstream cells(line);
      std::string cell;
      std::size_t n = 0;
      while (std::getline(cells, cell, ',')) {
        if (n == v.size()) throw Error(ErrorCode::MalformedHeader, "grid row at line " + std::to_string(line_no));
        const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v[n]);
        if (ec != std::errc{} || ptr != cell.data() + cell.size()) {
          throw Error(ErrorCode::MalformedHeader, "grid row at line " + std::to_string(line_no));
        }
        ++n;
      }
      if (n != v.size()) throw Error(ErrorCode::MalformedHeader, "grid row at line " + std::to_string(line_no));
      r.grid->push_back({HyperParams{v[0], v[1], v[2], v[3]}, v[4]});
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(ErrorCode::MalformedHeader, "record at line " + std::to_string(line_no));
    r.add(line.substr(0, tab), line.substr(tab + 1));
  }
  return r;
}

}  // namespace susx
