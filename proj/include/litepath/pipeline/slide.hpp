#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "litepath/numerics/tensor.hpp"

namespace litepath {

// A slide as an ordered, immutable sequence of patch images in raster order. Patches come
// from a generator so large synthetic slides never need to be held in memory.
struct SlideRecord {
  std::string slide_id;
  std::string case_id;
  std::optional<std::size_t> label;
  std::size_t n_patches = 0;
  std::function<TensorD(std::size_t index)> patch;
  std::vector<char> lesion_mask;  // ground truth for synthetic slides; empty otherwise

  TensorD patch_at(std::size_t i) const {
    if (i >= n_patches) throw std::out_of_range(slide_id + ": patch " + std::to_string(i) + " out of range");
    return patch(i);
  }

  void validate() const {
    if (n_patches == 0) throw std::invalid_argument("slide '" + slide_id + "' has no patches");
    if (!patch) throw std::invalid_argument("slide '" + slide_id + "' has no patch source");
  }

  static SlideRecord from_patches(std::string id, std::vector<TensorD> patches, std::optional<std::size_t> label = {},
                                  std::string case_id = {}) {
    auto shared = std::make_shared<const std::vector<TensorD>>(std::move(patches));
    SlideRecord s;
    s.slide_id = id;
    s.case_id = case_id.empty() ? id : std::move(case_id);
    s.label = label;
    s.n_patches = shared->size();
    s.patch = [shared](std::size_t i) { return (*shared)[i]; };
    return s;
  }
};

}  // namespace litepath
