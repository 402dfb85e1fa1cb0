#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "litepath/model/layers.hpp"

namespace litepath {

inline const std::vector<std::size_t> kDefaultTeacherDims = {2560, 1536, 1536};

// One linear projection per teacher, mapping the student embedding to that teacher's width.
template <typename T>
struct ProjectionHeads {
  std::vector<Linear<T>> heads;

  template <typename Self, typename Fn>
  static void visit(Self& s, Fn&& fn) {
    for (std::size_t i = 0; i < s.heads.size(); ++i) Linear<T>::visit(s.heads[i], "proj." + std::to_string(i), fn);
  }
  template <typename Fn>
  void for_each(Fn&& fn) {
    visit(*this, fn);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(*this, fn);
  }

  static ProjectionHeads init(std::size_t student_dim, const std::vector<std::size_t>& teacher_dims, std::uint64_t seed) {
    ProjectionHeads p;
    const SeededRng root(seed);
    for (std::size_t i = 0; i < teacher_dims.size(); ++i)
      p.heads.push_back(Linear<T>::init(student_dim, teacher_dims[i], root.fork(i)));
    return p;
  }

  std::vector<std::size_t> teacher_dims() const {
    std::vector<std::size_t> d;
    for (const auto& h : heads) d.push_back(h.out());
    return d;
  }
};

}  // namespace litepath
