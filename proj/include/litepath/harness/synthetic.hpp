#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "litepath/io/hash.hpp"
#include "litepath/numerics/rng.hpp"
#include "litepath/pipeline/slide.hpp"

namespace litepath {

// Planted-signal cohort. Every patch is unit-variance noise plus a per-slide intensity offset.
// Class 0 is lesion-free; in a class c > 0 slide, lesion patches additionally carry that class's
// mean shift of `signal_strength` on a random subset of pixels (`pixel_fraction` of them) with
// random signs.
struct SyntheticCohortSpec {
  std::size_t n_slides = 240;
  std::size_t min_patches = 500;
  std::size_t max_patches = 2000;  // patch counts are log-uniform in [min, max]
  std::size_t n_classes = 2;
  double lesion_fraction = 0.1;
  double signal_strength = 1.0;
  double pixel_fraction = 0.25;
  double slide_offset_std = 0.05;
  std::size_t in_channels = 3;
  std::size_t image_size = 32;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lesion_fraction > 0.0 && lesion_fraction <= 1.0)) throw std::invalid_argument("lesion_fraction must lie in (0, 1]");
    if (min_patches < 1 || max_patches < min_patches)
      throw std::invalid_argument("patches per slide must satisfy 1 <= min <= max");
    if (n_classes < 2) throw std::invalid_argument("a cohort needs at least 2 classes");
    if (!(pixel_fraction > 0.0 && pixel_fraction <= 1.0)) throw std::invalid_argument("pixel_fraction must lie in (0, 1]");
    if (signal_strength < 0.0 || slide_offset_std < 0.0) throw std::invalid_argument("signal and offset must be non-negative");
    if (in_channels == 0 || image_size == 0) throw std::invalid_argument("zero-sized synthetic image");
    const std::size_t per_class = n_slides / n_classes;
    if (per_class < 10)
      throw std::invalid_argument("every class needs at least 10 slides for a 7:1:2 split (got " +
                                  std::to_string(per_class) + ")");
  }
};

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "' (expected train, val or test)");
}

struct SyntheticCohort {
  SyntheticCohortSpec spec;
  std::vector<SlideRecord> slides;  // generation order
  std::vector<Split> splits;        // parallel to slides

  std::vector<SlideRecord> split(Split s) const {
    std::vector<SlideRecord> out;
    for (std::size_t i = 0; i < slides.size(); ++i)
      if (splits[i] == s) out.push_back(slides[i]);
    return out;
  }
};

namespace detail {

struct ClassPattern {
  std::vector<double> shift;  // [image numel], zero outside the class's pixel subset
};

// Unit-variance noise from a counter stream; cheaper than Gaussian draws and enough for the encoder.
inline double unit_noise(SeededRng& rng) { return (rng.uniform() - 0.5) * 3.4641016151377544; }

}  // namespace detail

inline SyntheticCohort generate_cohort(const SyntheticCohortSpec& spec) {
  spec.validate();
  const SeededRng root(spec.seed);
  const std::size_t numel = spec.in_channels * spec.image_size * spec.image_size;

  auto patterns = std::make_shared<std::vector<detail::ClassPattern>>();
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    SeededRng rng = root.fork(1, c);
    detail::ClassPattern p{std::vector<double>(numel, 0.0)};
    for (std::size_t j = 0; j < numel; ++j)
      if (rng.uniform() < spec.pixel_fraction) p.shift[j] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * spec.signal_strength;
    patterns->push_back(std::move(p));
  }

  SyntheticCohort cohort;
  cohort.spec = spec;
  const std::vector<std::size_t> shape{spec.in_channels, spec.image_size, spec.image_size};
  const double log_lo = std::log(static_cast<double>(spec.min_patches));
  const double log_hi = std::log(static_cast<double>(spec.max_patches) + 1.0);
  for (std::size_t s = 0; s < spec.n_slides; ++s) {
    SeededRng rng = root.fork(2, s);
    const std::size_t label = s % spec.n_classes;
    const auto n = std::min<std::size_t>(
        spec.max_patches, static_cast<std::size_t>(std::floor(std::exp(rng.uniform(log_lo, log_hi)))));
    std::vector<char> mask(n, 0);
    std::size_t lesions = 0;
    for (std::size_t i = 0; i < n; ++i) lesions += (mask[i] = rng.uniform() < spec.lesion_fraction);
    if (lesions == 0) mask[rng.below(n)] = 1;
    if (label == 0) std::fill(mask.begin(), mask.end(), 0);
    const double offset = spec.slide_offset_std * detail::unit_noise(rng);

    char id[32];
    std::snprintf(id, sizeof id, "slide_%05zu", s);
    SlideRecord r;
    r.slide_id = id;
    r.case_id = "case_" + std::string(id + 6);
    r.label = label;
    r.n_patches = n;
    r.lesion_mask = mask;
    auto shared_mask = std::make_shared<const std::vector<char>>(std::move(mask));
    const SeededRng patch_root = root.fork(3, s);
    r.patch = [patterns, shared_mask, patch_root, shape, numel, label, offset](std::size_t i) {
      SeededRng prng = patch_root.fork(i);
      TensorD img(shape);
      double* d = img.data();
      for (std::size_t j = 0; j < numel; ++j) d[j] = offset + detail::unit_noise(prng);
      if ((*shared_mask)[i]) {
        const auto& shift = (*patterns)[label].shift;
        for (std::size_t j = 0; j < numel; ++j) d[j] += shift[j];
      }
      return img;
    };
    cohort.slides.push_back(std::move(r));
  }

  // Stratified 7:1:2 split: shuffle each class, then cut.
  cohort.splits.assign(spec.n_slides, Split::test);
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t s = c; s < spec.n_slides; s += spec.n_classes) members.push_back(s);
    SeededRng rng = root.fork(4, c);
    for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.below(i)]);
    const auto m = static_cast<double>(members.size());
    const auto n_train = static_cast<std::size_t>(std::llround(0.7 * m));
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * m)));
    for (std::size_t i = 0; i < members.size(); ++i)
      cohort.splits[members[i]] = i < n_train ? Split::train : i < n_train + n_val ? Split::val : Split::test;
  }
  return cohort;
}

// Identity of the generated pixels; feature caches are namespaced by it.
inline std::string cohort_fingerprint(const SyntheticCohortSpec& s) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu|%zu|%zu|%zu|%.17g|%.17g|%.17g|%.17g|%zu|%zu|%llu", s.n_slides, s.min_patches,
                s.max_patches, s.n_classes, s.lesion_fraction, s.signal_strength, s.pixel_fraction, s.slide_offset_std,
                s.in_channels, s.image_size, static_cast<unsigned long long>(s.seed));
  return fnv1a_hex(buf);
}

// Delimited manifest: one row per slide with its split, label, size and lesion count.
inline void write_manifest(std::ostream& os, const SyntheticCohort& c, const std::map<std::string, std::string>& meta) {
  for (const auto& [k, v] : meta) os << "# " << k << '=' << v << '\n';
  os << "slide_id\tcase_id\tsplit\tlabel\tn_patches\tn_lesion\n";
  for (std::size_t i = 0; i < c.slides.size(); ++i) {
    const auto& s = c.slides[i];
    os << s.slide_id << '\t' << s.case_id << '\t' << to_string(c.splits[i]) << '\t' << *s.label << '\t' << s.n_patches
       << '\t' << std::count(s.lesion_mask.begin(), s.lesion_mask.end(), 1) << '\n';
  }
}

}  // namespace litepath
