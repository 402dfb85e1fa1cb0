#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace litepath {

// Flat string record used to embed configs in file headers.
using ConfigRecord = std::map<std::string, std::string>;

inline std::size_t record_size(const ConfigRecord& r, const std::string& key) {
  auto it = r.find(key);
  if (it == r.end()) throw std::invalid_argument("config record missing key '" + key + "'");
  return static_cast<std::size_t>(std::stoull(it->second));
}

struct EncoderConfig {
  std::size_t input_size = 224;
  std::size_t patch_size = 16;
  std::size_t in_channels = 3;
  std::size_t embed_dim = 384;
  std::size_t depth = 12;
  std::size_t heads = 6;
  std::size_t mlp_ratio = 4;
  std::size_t output_dim = 1024;
  std::size_t split_after_block = 1;

  std::size_t grid() const { return input_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t tokens() const { return 1 + num_patches(); }
  std::size_t patch_dim() const { return in_channels * patch_size * patch_size; }
  std::size_t head_dim() const { return embed_dim / heads; }
  std::size_t mlp_dim() const { return embed_dim * mlp_ratio; }
  std::size_t image_numel() const { return in_channels * input_size * input_size; }
  std::size_t shallow_dim() const { return 2 * embed_dim; }

  void validate() const {
    if (patch_size == 0 || input_size == 0 || input_size % patch_size != 0)
      throw std::invalid_argument("input_size must be a positive multiple of patch_size");
    if (heads == 0 || embed_dim % heads != 0) throw std::invalid_argument("embed_dim must be divisible by heads");
    if (in_channels == 0 || mlp_ratio == 0 || output_dim == 0) throw std::invalid_argument("zero-sized encoder dimension");
    if (split_after_block < 1 || split_after_block >= depth)
      throw std::invalid_argument("split_after_block must satisfy 1 <= split < depth");
  }

  ConfigRecord record(const std::string& prefix = "encoder.") const {
    return {{prefix + "input_size", std::to_string(input_size)},   {prefix + "patch_size", std::to_string(patch_size)},
            {prefix + "in_channels", std::to_string(in_channels)}, {prefix + "embed_dim", std::to_string(embed_dim)},
            {prefix + "depth", std::to_string(depth)},             {prefix + "heads", std::to_string(heads)},
            {prefix + "mlp_ratio", std::to_string(mlp_ratio)},     {prefix + "output_dim", std::to_string(output_dim)},
            {prefix + "split_after_block", std::to_string(split_after_block)}};
  }

  static EncoderConfig from_record(const ConfigRecord& r, const std::string& prefix = "encoder.") {
    EncoderConfig c;
    c.input_size = record_size(r, prefix + "input_size");
    c.patch_size = record_size(r, prefix + "patch_size");
    c.in_channels = record_size(r, prefix + "in_channels");
    c.embed_dim = record_size(r, prefix + "embed_dim");
    c.depth = record_size(r, prefix + "depth");
    c.heads = record_size(r, prefix + "heads");
    c.mlp_ratio = record_size(r, prefix + "mlp_ratio");
    c.output_dim = record_size(r, prefix + "output_dim");
    c.split_after_block = record_size(r, prefix + "split_after_block");
    c.validate();
    return c;
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Scaled-down encoder used by the correctness suite and the toy end-to-end runs.
inline EncoderConfig desk_encoder_config() {
  EncoderConfig c;
  c.input_size = 32;
  c.patch_size = 8;
  c.in_channels = 3;
  c.embed_dim = 32;
  c.depth = 4;
  c.heads = 2;
  c.mlp_ratio = 4;
  c.output_dim = 32;
  c.split_after_block = 1;
  return c;
}

struct AbmilConfig {
  std::size_t input_dim = 1024;
  std::size_t hidden_dim = 512;
  std::size_t attention_dim = 128;
  std::size_t num_classes = 2;
  double dropout = 0.25;
  bool gated = false;

  void validate() const {
    if (input_dim == 0 || hidden_dim == 0 || attention_dim == 0) throw std::invalid_argument("zero-sized ABMIL dimension");
    if (num_classes < 2) throw std::invalid_argument("ABMIL needs at least 2 classes");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must lie in [0, 1)");
  }

  ConfigRecord record(const std::string& prefix = "abmil.") const {
    return {{prefix + "input_dim", std::to_string(input_dim)},
            {prefix + "hidden_dim", std::to_string(hidden_dim)},
            {prefix + "attention_dim", std::to_string(attention_dim)},
            {prefix + "num_classes", std::to_string(num_classes)},
            {prefix + "gated", gated ? "1" : "0"}};
  }
  static AbmilConfig from_record(const ConfigRecord& r, const std::string& prefix = "abmil.") {
    AbmilConfig c;
    c.input_dim = record_size(r, prefix + "input_dim");
    c.hidden_dim = record_size(r, prefix + "hidden_dim");
    c.attention_dim = record_size(r, prefix + "attention_dim");
    c.num_classes = record_size(r, prefix + "num_classes");
    c.gated = record_size(r, prefix + "gated") != 0;
    c.validate();
    return c;
  }
  friend bool operator==(const AbmilConfig&, const AbmilConfig&) = default;
};

struct ScorerConfig {
  std::size_t input_dim = 768;
  std::vector<std::size_t> hidden = {512, 128};
  double dropout = 0.25;

  void validate() const {
    if (input_dim == 0) throw std::invalid_argument("scorer input_dim must be positive");
    for (auto h : hidden)
      if (h == 0) throw std::invalid_argument("scorer hidden width must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must lie in [0, 1)");
  }

  ConfigRecord record(const std::string& prefix = "scorer.") const {
    std::string h;
    for (std::size_t i = 0; i < hidden.size(); ++i) h += (i ? "," : "") + std::to_string(hidden[i]);
    return {{prefix + "input_dim", std::to_string(input_dim)}, {prefix + "hidden", h}};
  }
  static ScorerConfig from_record(const ConfigRecord& r, const std::string& prefix = "scorer.") {
    ScorerConfig c;
    c.input_dim = record_size(r, prefix + "input_dim");
    c.hidden.clear();
    const std::string h = r.at(prefix + "hidden");
    std::size_t pos = 0;
    while (pos < h.size()) {
      std::size_t next = h.find(',', pos);
      if (next == std::string::npos) next = h.size();
      c.hidden.push_back(static_cast<std::size_t>(std::stoull(h.substr(pos, next - pos))));
      pos = next + 1;
    }
    c.validate();
    return c;
  }
  friend bool operator==(const ScorerConfig&, const ScorerConfig&) = default;
};

}  // namespace litepath
