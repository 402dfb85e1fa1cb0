#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace litepath {

struct TrainRecord {
  std::string stage;
  std::size_t step = 0;
  std::string split;  // "train" or "val"
  double loss = 0.0;
};

// Line-delimited training curve: one JSON object per record.
struct TrainingLog {
  std::map<std::string, std::string> meta;
  std::vector<TrainRecord> records;

  void add(std::string stage, std::size_t step, std::string split, double loss) {
    records.push_back({std::move(stage), step, std::move(split), loss});
  }

  void write_jsonl(std::ostream& os) const {
    if (!meta.empty()) os << nlohmann::json{{"meta", meta}}.dump() << '\n';
    for (const auto& r : records)
      os << nlohmann::json{{"stage", r.stage}, {"step", r.step}, {"split", r.split}, {"loss", r.loss}}.dump() << '\n';
  }

  void save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    write_jsonl(os);
  }
};

}  // namespace litepath
