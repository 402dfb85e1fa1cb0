#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "litepath/io/archive.hpp"
#include "litepath/model/encoder.hpp"
#include "litepath/pipeline/slide.hpp"

namespace litepath {

// shallow: concatenated [CLS ; patch mean] pre-stage features, [n x 2D].
// full: final embeddings, [n x output_dim].
enum class FeatureTier { shallow, full };

inline std::string to_string(FeatureTier t) { return t == FeatureTier::shallow ? "shallow" : "full"; }

struct StaleCacheError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SlideFeatures {
  TensorD shallow;  // [n x 2D]
  TensorD full;     // [n x output_dim]
};

// Both tiers in one pass: the post-stage continues from the pre-stage tokens.
inline SlideFeatures encode_slide_features(const SlideRecord& slide, const EncoderWeights<double>& enc) {
  slide.validate();
  const std::size_t n = slide.n_patches, S = enc.config.shallow_dim(), O = enc.config.output_dim;
  SlideFeatures f{TensorD({n, S}), TensorD({n, O})};
  for (std::size_t i = 0; i < n; ++i) {
    const auto sh = encode_pre(slide.patch_at(i), enc);
    const auto c = concat_shallow(sh);
    const auto e = encode_post(sh, enc);
    std::copy(c.values().begin(), c.values().end(), f.shallow.data() + i * S);
    std::copy(e.vector.values().begin(), e.vector.values().end(), f.full.data() + i * O);
  }
  return f;
}

// cache/<weights_hash>/<tier>/<slide_id>.lpw
inline std::filesystem::path cache_path(const std::filesystem::path& root, const std::string& weights_hash,
                                        FeatureTier tier, const std::string& slide_id) {
  return root / weights_hash / to_string(tier) / (slide_id + ".lpw");
}

inline std::filesystem::path store_cached_features(const std::filesystem::path& root, const std::string& weights_hash,
                                                   FeatureTier tier, const std::string& slide_id, const TensorD& features) {
  TensorArchive a;
  a.record = {{"slide_id", slide_id}, {"tier", to_string(tier)}, {"weights_hash", weights_hash},
              {"n_patches", std::to_string(features.rows())}};
  a.put("features", features);
  const auto path = cache_path(root, weights_hash, tier, slide_id);
  save_archive(a, path);
  return path;
}

// nullopt on a miss; StaleCacheError when the file's recorded identity disagrees with its location.
inline std::optional<TensorD> load_cached_features(const std::filesystem::path& root, const std::string& weights_hash,
                                                   FeatureTier tier, const std::string& slide_id) {
  const auto path = cache_path(root, weights_hash, tier, slide_id);
  if (!std::filesystem::exists(path)) return std::nullopt;
  const auto a = load_archive(path);
  auto field = [&](const std::string& k) {
    auto it = a.record.find(k);
    return it == a.record.end() ? std::string() : it->second;
  };
  if (field("weights_hash") != weights_hash || field("slide_id") != slide_id || field("tier") != to_string(tier))
    throw StaleCacheError(path.string() + ": cached for weights " + field("weights_hash") + ", slide '" +
                          field("slide_id") + "', tier " + field("tier"));
  return a.get("features");
}

// Loads both tiers from the cache, computing and storing them on a miss.
inline SlideFeatures cached_slide_features(const std::filesystem::path& root, const SlideRecord& slide,
                                           const EncoderWeights<double>& enc, const std::string& weights_hash) {
  auto sh = load_cached_features(root, weights_hash, FeatureTier::shallow, slide.slide_id);
  auto fu = load_cached_features(root, weights_hash, FeatureTier::full, slide.slide_id);
  if (sh && fu) return {std::move(*sh), std::move(*fu)};
  auto f = encode_slide_features(slide, enc);
  store_cached_features(root, weights_hash, FeatureTier::shallow, slide.slide_id, f.shallow);
  store_cached_features(root, weights_hash, FeatureTier::full, slide.slide_id, f.full);
  return f;
}

}  // namespace litepath
