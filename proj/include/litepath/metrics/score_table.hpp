#pragma once

#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "litepath/numerics/tensor.hpp"

namespace litepath {

// Per-slide class probabilities of one cohort run, as written to and read from TSV.
struct ScoreTable {
  std::map<std::string, std::string> meta;  // emitted as leading "# key=value" lines
  std::vector<std::string> slide_ids;
  std::vector<std::string> case_ids;
  std::vector<std::size_t> labels;
  TensorD scores;  // [rows x classes]

  std::size_t size() const { return slide_ids.size(); }
  std::size_t classes() const { return scores.rank() == 2 ? scores.cols() : 0; }
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_score_table(std::ostream& os, const ScoreTable& t) {
  for (const auto& [k, v] : t.meta) os << "# " << k << '=' << v << '\n';
  os << "slide_id\tcase_id\tlabel";
  for (std::size_t c = 0; c < t.classes(); ++c) os << "\tscore_class_" << c;
  os << '\n';
  for (std::size_t i = 0; i < t.size(); ++i) {
    os << t.slide_ids[i] << '\t' << t.case_ids[i] << '\t' << t.labels[i];
    for (std::size_t c = 0; c < t.classes(); ++c) os << '\t' << format_double(t.scores(i, c));
    os << '\n';
  }
}

inline void save_score_table(const std::filesystem::path& path, const ScoreTable& t) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_score_table(os, t);
}

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, '\t')) out.push_back(cell);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

inline ScoreTable read_score_table(std::istream& is, const std::string& source = "score table") {
  ScoreTable t;
  std::string line;
  std::size_t lineno = 0, classes = 0;
  bool header = false;
  std::vector<double> values;
  auto fail = [&](const std::string& why) {
    throw std::runtime_error(source + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto body = line.substr(line.find_first_not_of("# "));
      auto eq = body.find('=');
      if (eq != std::string::npos) t.meta[body.substr(0, eq)] = body.substr(eq + 1);
      continue;
    }
    auto cells = split_tabs(line);
    if (!header) {
      if (cells.size() < 5 || cells[0] != "slide_id" || cells[1] != "case_id" || cells[2] != "label")
        fail("expected header slide_id, case_id, label, score_class_0..k with at least 2 classes");
      classes = cells.size() - 3;
      for (std::size_t c = 0; c < classes; ++c)
        if (cells[3 + c] != "score_class_" + std::to_string(c)) fail("bad score column '" + cells[3 + c] + "'");
      header = true;
      continue;
    }
    if (cells.size() != classes + 3) fail("expected " + std::to_string(classes + 3) + " columns");
    try {
      t.slide_ids.push_back(cells[0]);
      t.case_ids.push_back(cells[1]);
      t.labels.push_back(std::stoul(cells[2]));
      for (std::size_t c = 0; c < classes; ++c) values.push_back(std::stod(cells[3 + c]));
    } catch (const std::logic_error&) {
      fail("unparseable number");
    }
  }
  if (!header) throw std::runtime_error(source + ": missing header");
  t.scores = TensorD({t.slide_ids.size(), classes}, std::move(values));
  return t;
}

inline ScoreTable load_score_table(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return read_score_table(is, path.string());
}

}  // namespace litepath
