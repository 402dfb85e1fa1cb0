#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "litepath/aps/selection.hpp"
#include "litepath/model/config.hpp"

namespace litepath {

// All counts are multiply-accumulates: one FLOP per MAC. Linear layers only; layernorm,
// softmax and activations are not counted. The two attention matrix products (QK^T and
// attention-weighted V) are excluded unless requested.
struct FlopsOptions {
  bool count_attention_matmul = false;
};

// Published per-patch costs of reference encoders, in the same convention.
inline constexpr double kVirchow2FlopsPerPatch = 165e9;
inline constexpr double kHOptimus1FlopsPerPatch = 296e9;

inline std::uint64_t abmil_bag_flops(const AbmilConfig& c, std::size_t n) {
  const std::uint64_t per_instance = c.input_dim * c.hidden_dim + c.hidden_dim * c.attention_dim * (c.gated ? 2 : 1) +
                                     c.attention_dim + c.hidden_dim;  // last term: attention-weighted sum
  return n * per_instance + c.hidden_dim * c.num_classes;
}

inline std::uint64_t scorer_flops(const ScorerConfig& c) {
  std::uint64_t total = 0;
  std::size_t in = c.input_dim;
  for (auto h : c.hidden) {
    total += in * h;
    in = h;
  }
  return total + in;
}

struct FlopsBreakdown {
  std::uint64_t patch_embed = 0;
  std::uint64_t per_block = 0;
  std::uint64_t pre_stage = 0;   // patch embed + blocks before the split
  std::uint64_t post_stage = 0;  // blocks after the split
  std::uint64_t output_head = 0;
  std::uint64_t scorer_per_patch = 0;
  AbmilConfig abmil;

  std::uint64_t full_per_patch() const { return pre_stage + post_stage + output_head; }
  std::uint64_t post_per_patch() const { return post_stage + output_head; }
  std::uint64_t abmil_per_bag(std::size_t n) const { return abmil_bag_flops(abmil, n); }
  // Limit of the relative cost as the slide grows with a fixed selection budget.
  double asymptotic_ratio() const {
    return static_cast<double>(pre_stage + scorer_per_patch) / static_cast<double>(full_per_patch());
  }
};

inline FlopsBreakdown encoder_flops(const EncoderConfig& cfg, const ScorerConfig& scorer, const AbmilConfig& abmil,
                                    FlopsOptions opt = {}) {
  cfg.validate();
  const std::uint64_t T = cfg.tokens(), D = cfg.embed_dim, M = cfg.mlp_dim();
  FlopsBreakdown b;
  b.patch_embed = cfg.num_patches() * cfg.patch_dim() * D;
  b.per_block = T * (3 * D * D + D * D + D * M + M * D);
  if (opt.count_attention_matmul) b.per_block += 2 * T * T * D;
  b.pre_stage = b.patch_embed + cfg.split_after_block * b.per_block;
  b.post_stage = (cfg.depth - cfg.split_after_block) * b.per_block;
  b.output_head = D * cfg.output_dim;
  b.scorer_per_patch = scorer_flops(scorer);
  b.abmil = abmil;
  return b;
}

// Default scorer and MIL head sized for the encoder's shallow width and output width.
inline FlopsBreakdown encoder_flops(const EncoderConfig& cfg, FlopsOptions opt = {}) {
  ScorerConfig sc;
  sc.input_dim = cfg.shallow_dim();
  AbmilConfig ac;
  ac.input_dim = cfg.output_dim;
  return encoder_flops(cfg, sc, ac, opt);
}

inline std::uint64_t full_slide_flops(std::size_t n, const FlopsBreakdown& b) {
  if (n == 0) throw std::invalid_argument("slide has no patches");
  return n * b.full_per_patch() + b.abmil_per_bag(n);
}

// Every patch passes the pre-stage. The scorer runs only when top-k has a real choice to
// make; otherwise the selection is determined by indices alone.
inline std::uint64_t litepath_slide_flops(std::size_t n, const FlopsBreakdown& b, const SelectionConfig& sel) {
  if (n == 0) throw std::invalid_argument("slide has no patches");
  const std::size_t s = selected_count(n, sel);
  const std::uint64_t scoring = needs_scoring(n, sel) ? n * b.scorer_per_patch : 0;
  return n * b.pre_stage + scoring + s * b.post_per_patch() + b.abmil_per_bag(s);
}

struct CurvePoint {
  std::size_t n = 0;
  double ratio = 0.0;
};

inline std::vector<CurvePoint> relative_flops_curve(const FlopsBreakdown& b, const SelectionConfig& sel,
                                                    std::span<const std::size_t> n_values) {
  if (n_values.empty()) throw std::invalid_argument("relative_flops_curve: no patch counts");
  std::vector<CurvePoint> out;
  for (auto n : n_values)
    out.push_back({n, static_cast<double>(litepath_slide_flops(n, b, sel)) / static_cast<double>(full_slide_flops(n, b))});
  return out;
}

// Log-spaced patch counts from lo to hi inclusive, `per_decade` points per factor of ten.
inline std::vector<std::size_t> log_spaced_counts(std::size_t lo, std::size_t hi, int per_decade = 10) {
  std::vector<std::size_t> out;
  const double step = std::pow(10.0, 1.0 / per_decade);
  for (double x = static_cast<double>(lo); x < static_cast<double>(hi) * (1 + 1e-9); x *= step) {
    const auto n = static_cast<std::size_t>(std::llround(x));
    if (out.empty() || n != out.back()) out.push_back(n);
  }
  if (out.back() != hi) out.push_back(hi);
  return out;
}

inline void write_curve(std::ostream& os, std::span<const CurvePoint> curve, const ConfigRecord& meta = {}) {
  for (const auto& [k, v] : meta) os << "# " << k << '=' << v << '\n';
  os << "n\tratio\n";
  for (const auto& p : curve) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu\t%.17g\n", p.n, p.ratio);
    os << buf;
  }
}

inline void save_curve(const std::filesystem::path& path, std::span<const CurvePoint> curve,
                       const ConfigRecord& meta = {}) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_curve(os, curve, meta);
}

}  // namespace litepath
