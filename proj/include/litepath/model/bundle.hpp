#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "litepath/io/archive.hpp"
#include "litepath/model/abmil.hpp"
#include "litepath/model/encoder.hpp"
#include "litepath/model/projection.hpp"
#include "litepath/model/scorer.hpp"

namespace litepath {

// Everything inference and training need, serialized together in one LPW1 file.
struct ModelBundle {
  EncoderWeights<double> encoder;
  std::optional<AbmilWeights<double>> abmil;
  std::optional<ScorerWeights<double>> scorer;
  std::optional<ProjectionHeads<double>> projections;

  TensorArchive to_archive() const {
    TensorArchive a;
    a.record = encoder.config.record();
    store_weights(a, "encoder.", encoder);
    if (abmil) {
      a.record.merge(abmil->config.record());
      store_weights(a, "abmil.", *abmil);
    }
    if (scorer) {
      a.record.merge(scorer->config.record());
      store_weights(a, "scorer.", *scorer);
    }
    if (projections) {
      a.record["proj.count"] = std::to_string(projections->heads.size());
      store_weights(a, "proj.", *projections);
    }
    return a;
  }

  static ModelBundle from_archive(const TensorArchive& a) {
    ModelBundle b;
    b.encoder = EncoderWeights<double>::zeros(EncoderConfig::from_record(a.record));
    load_weights(a, "encoder.", b.encoder);
    if (a.record.contains("abmil.input_dim")) {
      b.abmil = AbmilWeights<double>::zeros(AbmilConfig::from_record(a.record));
      load_weights(a, "abmil.", *b.abmil);
    }
    if (a.record.contains("scorer.input_dim")) {
      b.scorer = ScorerWeights<double>::zeros(ScorerConfig::from_record(a.record));
      load_weights(a, "scorer.", *b.scorer);
    }
    if (a.record.contains("proj.count")) {
      ProjectionHeads<double> p;
      const std::size_t count = record_size(a.record, "proj.count");
      for (std::size_t i = 0; i < count; ++i) {
        const TensorD& w = a.get("proj.proj." + std::to_string(i) + ".weight");
        p.heads.push_back(Linear<double>::zeros(w.dim(0), w.dim(1)));
      }
      load_weights(a, "proj.", p);
      b.projections = std::move(p);
    }
    return b;
  }

  void save(const std::filesystem::path& path) const { save_archive(to_archive(), path); }
  static ModelBundle load(const std::filesystem::path& path) { return from_archive(load_archive(path)); }

  // Content hash of the encoder config and weights (the part feature caches depend on).
  std::string encoder_hash() const {
    TensorArchive a;
    a.record = encoder.config.record();
    store_weights(a, "encoder.", encoder);
    return fnv1a_hex(serialize(a));
  }

  std::string weights_hash() const { return tensors_hash(to_archive()); }
};

}  // namespace litepath
