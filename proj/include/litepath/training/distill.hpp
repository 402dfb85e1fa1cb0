#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "litepath/model/encoder.hpp"
#include "litepath/model/projection.hpp"
#include "litepath/model/weights.hpp"
#include "litepath/training/losses.hpp"
#include "litepath/training/optim.hpp"
#include "litepath/training/train_log.hpp"

namespace litepath {

struct DistillConfig {
  std::vector<double> teacher_weights = {0.4, 0.3, 0.3};
  std::size_t steps = 200;
  std::size_t batch_size = 8;
  double lr = 3e-3;
  double min_lr = 1e-5;
  std::size_t warmup_steps = 10;
  double warmup_init = 1e-6;
  double weight_decay = 0.05;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    double sum = 0.0;
    for (double w : teacher_weights) {
      if (!(w >= 0.0)) throw std::invalid_argument("teacher weights must be non-negative");
      sum += w;
    }
    if (teacher_weights.empty() || std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("teacher weights must sum to 1");
    if (batch_size == 0) throw std::invalid_argument("distillation batch size must be positive");
  }
};

// A frozen embedding function standing in for a large pretrained encoder.
struct SyntheticTeacher {
  std::string name;
  std::size_t dim = 0;
  std::function<TensorD(const TensorD& image)> embed;
};

// Randomly initialized encoder of the student's shape with its own output width. Weight
// matrices use 1/sqrt(fan_in) scaling so the frozen map is far from the small-init regime.
inline SyntheticTeacher encoder_teacher(EncoderConfig cfg, std::size_t dim, std::uint64_t seed) {
  cfg.output_dim = dim;
  auto w = EncoderWeights<double>::init(cfg, seed);
  const SeededRng root = SeededRng(seed).fork(0x7eac4e5ULL);
  std::uint64_t idx = 0;
  w.for_each([&](const std::string& name, TensorD& t) {
    SeededRng rng = root.fork(idx++);
    if (t.rank() == 2 && name.ends_with(".weight")) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(t.rows()));
      for (auto& v : t.values()) v = rng.normal(0.0, sd);
    }
  });
  return {"encoder", dim, [w = std::move(w)](const TensorD& image) { return full_encode(image, w).vector; }};
}

// y = A vec(image) with A ~ N(0, 1/numel).
inline SyntheticTeacher linear_teacher(std::size_t image_numel, std::size_t dim, std::uint64_t seed) {
  TensorD a({dim, image_numel});
  SeededRng rng(seed);
  const double sd = 1.0 / std::sqrt(static_cast<double>(image_numel));
  for (auto& v : a.values()) v = rng.normal(0.0, sd);
  return {"linear", dim, [a = std::move(a)](const TensorD& image) {
            if (image.size() != a.cols()) throw ShapeError("linear teacher input size mismatch");
            TensorD y({a.rows()});
            kernels::gemm_nn(a.data(), image.data(), y.data(), a.rows(), a.cols(), 1);
            return y;
          }};
}

inline std::vector<SyntheticTeacher> encoder_teachers(const EncoderConfig& cfg, const std::vector<std::size_t>& dims,
                                                      std::uint64_t seed) {
  std::vector<SyntheticTeacher> out;
  for (std::size_t i = 0; i < dims.size(); ++i) out.push_back(encoder_teacher(cfg, dims[i], SeededRng::mix(seed + i)));
  return out;
}

using PatchSource = std::function<TensorD(std::size_t index)>;

struct DistillResult {
  std::vector<double> step_loss;  // mean batch loss before each update
};

// Loss and gradients of one image; gradients accumulate into gs and gh.
inline double distill_example(const TensorD& image, const std::vector<TensorD>& targets,
                              const EncoderWeights<double>& student, const ProjectionHeads<double>& heads,
                              const std::vector<double>& weights, EncoderWeights<double>& gs,
                              ProjectionHeads<double>& gh, double scale) {
  EncoderTape<double> tape;
  const TensorD emb = encode_with_tape(image, student, tape);
  TensorD d_emb(emb.shape());
  ProjectionHeads<double> gh_one = zeros_like(heads);
  const double loss = distill_loss(emb, targets, heads, weights, &d_emb, &gh_one);
  for (auto& v : d_emb.values()) v *= scale;
  encoder_backward(tape, student, d_emb, gs);
  auto dst = tensor_ptrs(gh);
  auto src = tensor_ptrs(std::as_const(gh_one));
  for (std::size_t k = 0; k < dst.size(); ++k)
    for (std::size_t i = 0; i < dst[k]->size(); ++i) (*dst[k])[i] += scale * (*src[k])[i];
  return loss;
}

// Minibatch AdamW on the mean distillation loss; batches are drawn with replacement from the
// patch source using a stream derived from cfg.seed.
inline DistillResult run_distillation(const PatchSource& source, std::size_t n_patches,
                                      EncoderWeights<double>& student, ProjectionHeads<double>& heads,
                                      const std::vector<SyntheticTeacher>& teachers, const DistillConfig& cfg,
                                      TrainingLog* log = nullptr) {
  cfg.validate();
  if (n_patches == 0) throw std::invalid_argument("distillation needs at least one patch");
  if (teachers.size() != heads.heads.size() || teachers.size() != cfg.teacher_weights.size())
    throw std::invalid_argument("distillation: teachers, heads and weights differ in count");
  for (std::size_t k = 0; k < teachers.size(); ++k)
    if (teachers[k].dim != heads.heads[k].out())
      throw ShapeError("teacher " + std::to_string(k) + " dim " + std::to_string(teachers[k].dim) + " vs head " +
                       std::to_string(heads.heads[k].out()));

  const AdamOptions opt{.weight_decay = cfg.weight_decay, .decoupled = true};
  Adam<EncoderWeights<double>> opt_s(student, opt);
  Adam<ProjectionHeads<double>> opt_h(heads, opt);
  const CosineSchedule sched{cfg.lr, cfg.min_lr, cfg.steps, cfg.warmup_steps, cfg.warmup_init};
  const SeededRng root(cfg.seed);
  DistillResult result;
  const double scale = 1.0 / static_cast<double>(cfg.batch_size);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    SeededRng rng = root.fork(step);
    EncoderWeights<double> gs = zeros_like(student);
    ProjectionHeads<double> gh = zeros_like(heads);
    double loss = 0.0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const TensorD image = source(rng.below(n_patches));
      std::vector<TensorD> targets;
      for (const auto& t : teachers) targets.push_back(t.embed(image));
      loss += scale * distill_example(image, targets, student, heads, cfg.teacher_weights, gs, gh, scale);
    }
    if (!std::isfinite(loss))
      throw NonFiniteError("distillation diverged at step " + std::to_string(step) + " (loss " + std::to_string(loss) +
                           ", lr " + std::to_string(sched.at(step)) + ")");
    result.step_loss.push_back(loss);
    if (log) log->add("distill", step, "train", loss);

    // Clip the joint gradient of student and heads.
    double sq = 0.0;
    for (const auto* t : tensor_ptrs(std::as_const(gs)))
      for (double v : t->values()) sq += v * v;
    for (const auto* t : tensor_ptrs(std::as_const(gh)))
      for (double v : t->values()) sq += v * v;
    const double norm = std::sqrt(sq);
    if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) {
      scale_in_place(gs, cfg.grad_clip / (norm + 1e-12));
      scale_in_place(gh, cfg.grad_clip / (norm + 1e-12));
    }
    const double lr = sched.at(step);
    opt_s.step(student, gs, lr);
    opt_h.step(heads, gh, lr);
  }
  return result;
}

}  // namespace litepath
