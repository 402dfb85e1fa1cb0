#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "litepath/aps/grid_search.hpp"
#include "litepath/harness/bench.hpp"
#include "litepath/harness/report.hpp"
#include "litepath/harness/run_config.hpp"
#include "litepath/harness/synthetic.hpp"
#include "litepath/log.hpp"
#include "litepath/metrics/score_table.hpp"
#include "litepath/model/bundle.hpp"
#include "litepath/pipeline/cache.hpp"
#include "litepath/pipeline/cohort.hpp"
#include "litepath/training/distill.hpp"
#include "litepath/training/supervised.hpp"

namespace litepath {

// Where each stage reads and writes inside a run's output directory.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path manifest() const { return root / "cohort" / "manifest.tsv"; }
  std::filesystem::path student() const { return root / "models" / "student.lpw"; }
  std::filesystem::path mil() const { return root / "models" / "mil.lpw"; }
  std::filesystem::path litepath() const { return root / "models" / "litepath.lpw"; }
  std::filesystem::path cache() const { return root / "cache"; }  // then <cohort>/<encoder hash>/<tier>
  std::filesystem::path grid() const { return root / "grid.tsv"; }
  std::filesystem::path selection() const { return root / "selection.json"; }
  std::filesystem::path predictions(const std::string& name) const { return root / "predictions" / (name + ".tsv"); }
  std::filesystem::path eval() const { return root / "eval.json"; }
  std::filesystem::path bench() const { return root / "bench.json"; }
  std::filesystem::path report() const { return root / "report"; }
  std::filesystem::path log(const std::string& stage) const { return root / "logs" / (stage + ".jsonl"); }
};

struct StageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require_file(const std::filesystem::path& p, const std::string& producer) {
  if (!std::filesystem::exists(p))
    throw StageError("missing " + p.string() + "; run `" + producer + "` first with the same config");
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  os << text;
  if (!os) throw std::runtime_error("cannot write " + p.string());
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw StageError("cannot open " + p.string());
  return nlohmann::json::parse(is);
}

inline ConfigRecord with(ConfigRecord meta, const ConfigRecord& extra) {
  for (const auto& [k, v] : extra) meta[k] = v;
  return meta;
}

inline ModelBundle load_bundle(const std::filesystem::path& p, const std::string& producer) {
  require_file(p, producer);
  return ModelBundle::load(p);
}

// Both feature tiers for every slide, through the content-addressed cache.
inline std::vector<SlideFeatures> slide_features(const RunConfig& cfg, const std::vector<SlideRecord>& slides,
                                                 const EncoderWeights<double>& enc, const std::string& hash) {
  std::vector<SlideFeatures> out(slides.size());
  const auto root = RunPaths{cfg.output_dir}.cache() / cohort_fingerprint(cfg.cohort);
  parallel_for(slides.size(), cfg.workers,
               [&](std::size_t i) { out[i] = cached_slide_features(root, slides[i], enc, hash); });
  return out;
}

}  // namespace detail

inline SyntheticCohort stage_gen(const RunConfig& cfg) {
  const auto cohort = generate_cohort(cfg.cohort);
  std::ostringstream os;
  write_manifest(os, cohort, cfg.meta());
  detail::write_text(RunPaths{cfg.output_dir}.manifest(), os.str());
  return cohort;
}

// Stage 1: distil the student encoder from frozen synthetic teachers on training-split patches.
inline ModelBundle stage_distill(const RunConfig& cfg) {
  const RunPaths paths{cfg.output_dir};
  const auto train = generate_cohort(cfg.cohort).split(Split::train);
  std::vector<std::size_t> offsets{0};
  for (const auto& s : train) offsets.push_back(offsets.back() + s.n_patches);
  const PatchSource source = [&](std::size_t g) {
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), g) - 1;
    const auto s = static_cast<std::size_t>(it - offsets.begin());
    return train[s].patch_at(g - *it);
  };
  ModelBundle b;
  b.encoder = EncoderWeights<double>::init(cfg.encoder, cfg.stage_seed("student"));
  auto heads = ProjectionHeads<double>::init(cfg.encoder.output_dim, cfg.teacher_dims, cfg.stage_seed("heads"));
  const auto teachers = encoder_teachers(cfg.encoder, cfg.teacher_dims, cfg.stage_seed("teachers"));
  TrainingLog log;
  log.meta = cfg.meta();
  run_distillation(source, offsets.back(), b.encoder, heads, teachers, cfg.distill, &log);
  b.projections = std::move(heads);
  std::filesystem::create_directories(paths.student().parent_path());
  b.save(paths.student());
  log.meta["weights_hash"] = b.weights_hash();
  log.save(paths.log("distill"));
  return b;
}

// Stage 2: ABMIL on cached full embeddings, early-stopped on the validation split.
inline ModelBundle stage_train_mil(const RunConfig& cfg) {
  const RunPaths paths{cfg.output_dir};
  ModelBundle b = detail::load_bundle(paths.student(), "distill");
  const auto cohort = generate_cohort(cfg.cohort);
  const auto hash = b.encoder_hash();
  std::vector<Bag> train, val;
  for (Split s : {Split::train, Split::val}) {
    const auto slides = cohort.split(s);
    auto feats = detail::slide_features(cfg, slides, b.encoder, hash);
    for (std::size_t i = 0; i < slides.size(); ++i)
      (s == Split::train ? train : val).push_back({std::move(feats[i].full), *slides[i].label});
  }
  TrainingLog log;
  log.meta = detail::with(cfg.meta(), {{"encoder_hash", hash}});
  auto fit = train_abmil(train, val, cfg.abmil, cfg.mil_train, &log);
  b.abmil = std::move(fit.weights);
  b.projections.reset();
  std::filesystem::create_directories(paths.mil().parent_path());
  b.save(paths.mil());
  log.meta["weights_hash"] = b.weights_hash();
  log.save(paths.log("train-mil"));
  return b;
}

// Stage 3: score matching against the trained ABMIL's raw attention, from cached shallow features.
inline ModelBundle stage_train_aps(const RunConfig& cfg) {
  const RunPaths paths{cfg.output_dir};
  ModelBundle b = detail::load_bundle(paths.mil(), "train-mil");
  if (!b.abmil) throw StageError(paths.mil().string() + " holds no ABMIL head");
  const auto cohort = generate_cohort(cfg.cohort);
  const auto hash = b.encoder_hash();
  std::vector<ScoreSlide> train, val;
  for (Split s : {Split::train, Split::val}) {
    const auto slides = cohort.split(s);
    auto feats = detail::slide_features(cfg, slides, b.encoder, hash);
    for (auto& f : feats) {
      TensorD att = abmil_forward(f.full, *b.abmil).attention;
      (s == Split::train ? train : val).push_back({std::move(f.shallow), std::move(att)});
    }
  }
  TrainingLog log;
  log.meta = detail::with(cfg.meta(), {{"encoder_hash", hash}});
  auto fit = train_scorer(train, val, cfg.scorer, cfg.aps_train, &log);
  b.scorer = std::move(fit.weights);
  b.save(paths.litepath());
  log.meta["weights_hash"] = b.weights_hash();
  log.save(paths.log("train-aps"));
  return b;
}

inline std::vector<CachedSlide> cached_validation(const RunConfig& cfg, const ModelBundle& b) {
  const auto slides = generate_cohort(cfg.cohort).split(Split::val);
  auto feats = detail::slide_features(cfg, slides, b.encoder, b.encoder_hash());
  std::vector<CachedSlide> out;
  for (std::size_t i = 0; i < slides.size(); ++i) {
    const TensorD s = scoring_forward_batch(feats[i].shallow, *b.scorer);
    out.push_back({std::move(feats[i].full), std::vector<double>(s.values().begin(), s.values().end()), *slides[i].label});
  }
  return out;
}

// Validation-set search over (k_u, k_a) on cached features; no re-encoding.
inline GridSearchResult stage_grid(const RunConfig& cfg) {
  const RunPaths paths{cfg.output_dir};
  const ModelBundle b = detail::load_bundle(paths.litepath(), "train-aps");
  if (!b.abmil || !b.scorer) throw StageError(paths.litepath().string() + " needs both ABMIL and scorer weights");
  const auto grid = cfg.grid();
  const auto res = grid_search(cached_validation(cfg, b), grid, *b.abmil);
  const auto meta = detail::with(cfg.meta(), {{"weights_hash", b.weights_hash()}});
  std::ostringstream os;
  for (const auto& [k, v] : meta) os << "# " << k << '=' << v << '\n';
  os << "k_u\tk_a\tval_macro_auc\n";
  for (const auto& e : res.entries) os << e.config.k_u << '\t' << e.config.k_a << '\t' << format_double(e.auc) << '\n';
  detail::write_text(paths.grid(), os.str());
  nlohmann::json j{{"meta", meta}, {"k_u", res.best.k_u}, {"k_a", res.best.k_a}, {"val_macro_auc", res.best_auc}};
  detail::write_text(paths.selection(), j.dump(2) + "\n");
  return res;
}

inline SelectionConfig load_selection(const RunPaths& paths) {
  detail::require_file(paths.selection(), "grid");
  const auto j = detail::read_json(paths.selection());
  return {j.at("k_u").get<std::size_t>(), j.at("k_a").get<std::size_t>()};
}

struct InferOptions {
  InferenceMode mode = InferenceMode::litepath;
  std::optional<SelectionConfig> selection;  // litepath only; defaults to the grid-search winner
  Split split = Split::test;
  std::filesystem::path out;                  // defaults to predictions/<mode>.tsv
};

// Runs the real pipeline on raw patches. The score table carries only identity metadata, so
// equal predictions give byte-identical files; selection details go to a sidecar.
inline CohortResult stage_infer(const RunConfig& cfg, const InferOptions& opt) {
  const RunPaths paths{cfg.output_dir};
  const ModelBundle b = detail::load_bundle(paths.litepath(), "train-aps");
  SelectionConfig sel{1, 0};
  if (opt.mode == InferenceMode::litepath) sel = opt.selection ? *opt.selection : load_selection(paths);
  const auto slides = generate_cohort(cfg.cohort).split(opt.split);
  const auto model = InferenceModel<double>::from_bundle(b);
  auto res = run_cohort(slides, model, sel, opt.mode, cfg.workers);

  const auto out = opt.out.empty() ? paths.predictions(to_string(opt.mode)) : opt.out;
  const auto meta = detail::with(cfg.meta(), {{"weights_hash", b.weights_hash()}, {"split", to_string(opt.split)}});
  std::ostringstream table;
  write_score_table(table, to_score_table(res.records, meta));
  detail::write_text(out, table.str());

  std::ostringstream side;
  const auto side_meta = detail::with(meta, {{"mode", to_string(opt.mode)},
                                             {"k_u", std::to_string(sel.k_u)},
                                             {"k_a", std::to_string(sel.k_a)}});
  for (const auto& [k, v] : side_meta) side << "# " << k << '=' << v << '\n';
  side << "slide_id\tn_patches\tn_selected\tscorer_calls\tflops\n";
  for (const auto& r : res.records) {
    const std::size_t n = std::find_if(slides.begin(), slides.end(), [&](const SlideRecord& s) {
                            return s.slide_id == r.slide_id;
                          })->n_patches;
    side << r.slide_id << '\t' << n << '\t' << (opt.mode == InferenceMode::full ? n : r.selection.combined.size()) << '\t'
         << r.scorer_calls << '\t' << r.flops_charged << '\n';
  }
  detail::write_text(out.string() + ".selection.tsv", side.str());
  return res;
}

// Mean slide-level FLOPs from a predictions sidecar.
inline double mean_flops_from_sidecar(const std::filesystem::path& predictions) {
  const std::filesystem::path side = predictions.string() + ".selection.tsv";
  detail::require_file(side, "infer");
  std::ifstream is(side);
  std::string line;
  double sum = 0.0;
  std::size_t n = 0;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    sum += std::stod(split_tabs(line).back());
    ++n;
  }
  if (n == 0) throw StageError(side.string() + " lists no slides");
  return sum / static_cast<double>(n);
}

struct EvalModel {
  std::string name;
  std::filesystem::path predictions;
};

struct EvalResult {
  std::map<std::string, AucResult> auc;
  std::map<std::string, double> flops;
  std::vector<NonInferiorityEntry> noninferiority;
};

// Macro-AUC with case-level bootstrap CIs for every model, plus paired non-inferiority of each
// model against the first one.
inline EvalResult stage_eval(const RunConfig& cfg, const std::vector<EvalModel>& models) {
  if (models.empty()) throw StageError("eval needs at least one predictions file");
  const RunPaths paths{cfg.output_dir};
  std::vector<ScoreTable> tables;
  for (const auto& m : models) {
    detail::require_file(m.predictions, "infer");
    tables.push_back(load_score_table(m.predictions));
    if (tables.back().slide_ids != tables.front().slide_ids)
      throw StageError(m.predictions.string() + " scores a different slide list than " + models.front().predictions.string());
  }
  const ScoreTable& ref = tables.front();
  const CaseIndex cases(ref.case_ids);
  const BootstrapOptions opt{cfg.n_bootstrap, cfg.stage_seed("eval"), cfg.ci_level};
  EvalResult r;
  nlohmann::json jm = nlohmann::json::object();
  for (std::size_t i = 0; i < models.size(); ++i) {
    r.auc[models[i].name] = macro_auc_with_ci(ref.labels, tables[i].scores, cases, opt);
    r.flops[models[i].name] = mean_flops_from_sidecar(models[i].predictions);
    jm[models[i].name] = {{"cohorts", {{"test", to_json(r.auc[models[i].name])}}}, {"mean_flops", r.flops[models[i].name]}};
  }
  nlohmann::json jn = nlohmann::json::array();
  for (std::size_t i = 1; i < models.size(); ++i) {
    const auto diffs = paired_auc_differences(ref.labels, tables[i].scores, ref.scores, cases, opt);
    NonInferiorityEntry e{models[i].name, models[0].name, "test", noninferiority(diffs, cfg.margin)};
    auto x = to_json(e.result);
    x["candidate"] = e.candidate;
    x["reference"] = e.reference;
    x["cohort"] = e.cohort;
    jn.push_back(x);
    r.noninferiority.push_back(std::move(e));
  }
  ConfigRecord meta = cfg.meta();
  meta["weights_hash"] = ref.meta.contains("weights_hash") ? ref.meta.at("weights_hash") : "";
  nlohmann::json j{{"meta", meta}, {"reference", models[0].name}, {"models", jm}, {"noninferiority", jn}};
  detail::write_text(paths.eval(), j.dump(2) + "\n");
  return r;
}

// A bundle for benchmarking: trained weights when the run has them, otherwise seeded random ones.
inline ModelBundle bench_bundle(const RunConfig& cfg) {
  const RunPaths paths{cfg.output_dir};
  if (std::filesystem::exists(paths.litepath())) return ModelBundle::load(paths.litepath());
  ModelBundle b;
  b.encoder = EncoderWeights<double>::init(cfg.encoder, cfg.stage_seed("bench-encoder"));
  b.abmil = AbmilWeights<double>::init(cfg.abmil, cfg.stage_seed("bench-abmil"));
  b.scorer = ScorerWeights<double>::init(cfg.scorer, cfg.stage_seed("bench-scorer"));
  return b;
}

struct BenchPair {
  BenchResult full, litepath;
  double speedup() const { return full.median / litepath.median; }
};

inline BenchPair stage_bench(const RunConfig& cfg) {
  const ModelBundle b = bench_bundle(cfg);
  BenchPair p{bench_throughput(b, cfg.bench, InferenceMode::full), bench_throughput(b, cfg.bench, InferenceMode::litepath)};
  const auto meta = detail::with(cfg.meta(), {{"weights_hash", b.weights_hash()}});
  nlohmann::json j{{"meta", meta},
                   {"models", {{"full", to_json(p.full)}, {"litepath", to_json(p.litepath)}}},
                   {"speedup", p.speedup()}};
  detail::write_text(RunPaths{cfg.output_dir}.bench(), j.dump(2) + "\n");
  return p;
}

// Assembles eval.json, the optional bench.json and a relative-FLOPs curve into report/.
inline Report stage_report(const RunConfig& cfg) {
  const RunPaths paths{cfg.output_dir};
  detail::require_file(paths.eval(), "eval");
  const auto ev = detail::read_json(paths.eval());
  ReportInputs in;
  in.meta = ev.at("meta").get<ConfigRecord>();
  in.reference = ev.at("reference").get<std::string>();
  for (const auto& [name, m] : ev.at("models").items()) {
    for (const auto& [cohort, a] : m.at("cohorts").items()) in.metrics[name][cohort] = auc_result_from_json(a);
    in.flops[name] = m.at("mean_flops").get<double>();
  }
  for (const auto& e : ev.at("noninferiority")) {
    in.noninferiority.push_back({e.at("candidate").get<std::string>(), e.at("reference").get<std::string>(),
                                 e.at("cohort").get<std::string>(),
                                 {e.at("mean_diff").get<double>(), e.at("ci_low").get<double>(), e.at("ci_high").get<double>(),
                                  e.at("margin").get<double>(), e.at("pass").get<bool>()}});
  }
  if (std::filesystem::exists(paths.bench())) {
    const auto bj = detail::read_json(paths.bench());
    for (const auto& [name, r] : bj.at("models").items()) in.bench[name] = bench_result_from_json(r);
  }
  const auto breakdown = encoder_flops(cfg.encoder, cfg.scorer, cfg.abmil);
  SelectionConfig sel{0, 1000};
  if (std::filesystem::exists(paths.selection())) sel = load_selection(paths);
  const auto counts = log_spaced_counts(std::max<std::size_t>(1, sel.k_u + sel.k_a), 1000000, 10);
  in.curves.push_back({"litepath_ku" + std::to_string(sel.k_u) + "_ka" + std::to_string(sel.k_a),
                       relative_flops_curve(breakdown, sel, counts)});
  return emit_report(in, paths.report());
}

}  // namespace litepath
