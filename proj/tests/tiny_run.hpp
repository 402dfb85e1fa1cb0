#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "litepath/harness/run_config.hpp"

namespace litepath::testing {

// Smallest configuration that exercises every stage in a few seconds.
inline const char* kTinyIni = R"([run]
name = tiny
[encoder]
input_size = 8
patch_size = 4
embed_dim = 8
depth = 2
heads = 2
output_dim = 8
[cohort]
n_slides = 20
min_patches = 6
max_patches = 12
lesion_fraction = 0.3
signal_strength = 2
[distill]
teacher_dims = 6,4,4
steps = 3
batch_size = 2
[abmil]
hidden_dim = 8
attention_dim = 4
[mil_train]
epochs = 2
[aps_train]
epochs = 2
[scorer]
hidden = 8
[grid]
k_u = 0,2
k_a = 0,2
[eval]
bootstrap = 100
[bench]
n_patches = 40
pool = 8
k_a = 4
)";

inline RunConfig tiny_config(const std::filesystem::path& out) {
  std::istringstream is(kTinyIni);
  RunConfig c = RunConfig::from_ini(is, "tiny");
  c.output_dir = out;
  return c;
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("litepath_" + name);
  std::filesystem::remove_all(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace litepath::testing
