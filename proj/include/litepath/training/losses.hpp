#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "litepath/model/projection.hpp"
#include "litepath/numerics/ops.hpp"

namespace litepath {

// Weighted sum over teachers of the mean absolute error between the projected student
// embedding and that teacher's embedding. Optional outputs accumulate gradients.
inline double distill_loss(const TensorD& student, const std::vector<TensorD>& teachers,
                           const ProjectionHeads<double>& heads, const std::vector<double>& weights,
                           TensorD* d_student = nullptr, ProjectionHeads<double>* d_heads = nullptr) {
  if (teachers.size() != heads.heads.size() || weights.size() != heads.heads.size())
    throw ShapeError("distill_loss: " + std::to_string(teachers.size()) + " teachers, " +
                     std::to_string(heads.heads.size()) + " heads, " + std::to_string(weights.size()) + " weights");
  require_finite(student, "distill_loss student");
  double total = 0.0;
  for (std::size_t k = 0; k < teachers.size(); ++k) {
    const auto& head = heads.heads[k];
    const auto& teacher = teachers[k];
    if (student.size() != head.in() || teacher.size() != head.out())
      throw ShapeError("distill_loss: teacher " + std::to_string(k) + " has dim " + std::to_string(teacher.size()) +
                       ", head maps " + std::to_string(head.in()) + " -> " + std::to_string(head.out()));
    require_finite(teacher, "distill_loss teacher");
    const TensorD x = student.reshaped({1, student.size()});
    const TensorD proj = head.forward(x);
    const double n = static_cast<double>(teacher.size());
    double l1 = 0.0;
    TensorD dproj({1, teacher.size()});
    for (std::size_t j = 0; j < teacher.size(); ++j) {
      const double diff = proj[j] - teacher[j];
      l1 += std::abs(diff);
      dproj[j] = weights[k] * (diff > 0 ? 1.0 : diff < 0 ? -1.0 : 0.0) / n;
    }
    total += weights[k] * l1 / n;
    if (d_student || d_heads) {
      Linear<double> scratch = Linear<double>::zeros(head.in(), head.out());
      Linear<double>& g = d_heads ? d_heads->heads[k] : scratch;
      const TensorD dx = head.backward(x, dproj, g);
      if (d_student)
        for (std::size_t j = 0; j < dx.size(); ++j) (*d_student)[j] += dx[j];
    }
  }
  return total;
}

// Soft cross-entropy -sum_i p_i log q_i with p = softmax(target / tau), q = softmax(predicted / tau).
// d_predicted, if given, receives (q - p) / tau.
inline double score_matching_loss(const TensorD& target, const TensorD& predicted, double tau,
                                  TensorD* d_predicted = nullptr) {
  if (!(tau > 0.0)) throw std::invalid_argument("score_matching_loss: temperature must be positive");
  if (target.size() == 0 || target.size() != predicted.size())
    throw ShapeError("score_matching_loss: " + std::to_string(target.size()) + " targets vs " +
                     std::to_string(predicted.size()) + " predictions");
  require_finite(target, "score_matching_loss target");
  require_finite(predicted, "score_matching_loss prediction");
  const TensorD p = softmax(target, tau);
  const TensorD log_q = log_softmax(predicted, tau);
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) loss -= p[i] * log_q[i];
  if (d_predicted) {
    *d_predicted = TensorD({p.size()});
    for (std::size_t i = 0; i < p.size(); ++i) (*d_predicted)[i] = (std::exp(log_q[i]) - p[i]) / tau;
  }
  return loss;
}

inline double entropy(const TensorD& p) {
  double h = 0.0;
  for (double v : p.values())
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

}  // namespace litepath
