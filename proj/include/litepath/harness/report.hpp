#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "litepath/flops/flops.hpp"
#include "litepath/harness/bench.hpp"
#include "litepath/metrics/auc.hpp"
#include "litepath/metrics/bootstrap.hpp"
#include "litepath/metrics/dscore.hpp"

namespace litepath {

struct ReportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NamedCurve {
  std::string name;
  std::vector<CurvePoint> points;
};

struct NonInferiorityEntry {
  std::string candidate, reference, cohort;
  NonInferiorityResult result;
};

// Everything a report is built from, keyed by model name.
struct ReportInputs {
  ConfigRecord meta;       // config hash, seed, weights hash
  std::string reference;   // retention is relative to this model
  std::map<std::string, std::map<std::string, AucResult>> metrics;  // model -> cohort -> AUC
  std::map<std::string, double> flops;                              // model -> mean slide FLOPs
  std::map<std::string, BenchResult> bench;                         // optional section
  std::vector<NonInferiorityEntry> noninferiority;
  std::vector<NamedCurve> curves;
  double alpha = 0.9;
};

struct ReportRow {
  std::string model;
  double mean_auc = 0.0;
  std::optional<AucResult> single;  // the cohort's AUC and CI when there is exactly one cohort
  std::optional<double> dscore;
  double mean_rank = 0.0;
  double retention = 0.0;  // percent of the reference, averaged over cohorts
  double flops = 0.0;
  std::optional<double> slides_per_hour;
};

struct Report {
  ReportInputs inputs;
  std::vector<ReportRow> rows;  // by model name
};

namespace detail {

inline std::set<std::string> keys_of(const auto& m) {
  std::set<std::string> s;
  for (const auto& [k, v] : m) s.insert(k);
  return s;
}

inline std::string join(const std::set<std::string>& s) {
  std::string out;
  for (const auto& x : s) out += (out.empty() ? "" : ", ") + x;
  return out;
}

}  // namespace detail

inline Report build_report(const ReportInputs& in) {
  const auto models = detail::keys_of(in.metrics);
  if (models.empty()) throw ReportError("report: no models");
  if (detail::keys_of(in.flops) != models)
    throw ReportError("report: FLOPs section has models {" + detail::join(detail::keys_of(in.flops)) +
                      "} but metrics has {" + detail::join(models) + "}");
  if (!in.bench.empty() && detail::keys_of(in.bench) != models)
    throw ReportError("report: benchmark section has models {" + detail::join(detail::keys_of(in.bench)) +
                      "} but metrics has {" + detail::join(models) + "}");
  if (!models.contains(in.reference)) throw ReportError("report: reference model '" + in.reference + "' has no metrics");
  const auto cohorts = detail::keys_of(in.metrics.begin()->second);
  for (const auto& [m, per] : in.metrics)
    if (detail::keys_of(per) != cohorts) throw ReportError("report: model '" + m + "' is scored on a different cohort set");
  for (const auto& e : in.noninferiority)
    if (!models.contains(e.candidate) || !models.contains(e.reference))
      throw ReportError("report: non-inferiority entry names an unknown model");

  Report r;
  r.inputs = in;
  std::vector<std::vector<double>> per_cohort;
  for (const auto& c : cohorts) {
    std::vector<double> row;
    for (const auto& m : models) row.push_back(in.metrics.at(m).at(c).macro_auc);
    per_cohort.push_back(std::move(row));
  }
  const auto ranks = ranking_scores(per_cohort);
  DScoreInput ds{{}, {}, in.alpha};
  std::size_t i = 0;
  for (const auto& m : models) {
    ReportRow row;
    row.model = m;
    double sum = 0.0, ret = 0.0;
    for (const auto& c : cohorts) {
      sum += in.metrics.at(m).at(c).macro_auc;
      ret += auc_retention(in.metrics.at(m).at(c).macro_auc, in.metrics.at(in.reference).at(c).macro_auc);
    }
    row.mean_auc = sum / static_cast<double>(cohorts.size());
    row.retention = ret / static_cast<double>(cohorts.size());
    if (cohorts.size() == 1) row.single = in.metrics.at(m).begin()->second;
    row.mean_rank = ranks[i++];
    row.flops = in.flops.at(m);
    if (!in.bench.empty()) row.slides_per_hour = in.bench.at(m).slides_per_hour;
    ds.auc.push_back(row.mean_auc);
    ds.flops.push_back(row.flops);
    r.rows.push_back(std::move(row));
  }
  // D-Score is undefined for a single model or when every AUC ties.
  if (models.size() >= 2 && *std::max_element(ds.auc.begin(), ds.auc.end()) > *std::min_element(ds.auc.begin(), ds.auc.end())) {
    const auto d = dscore(ds);
    for (std::size_t k = 0; k < d.size(); ++k) r.rows[k].dscore = d[k];
  }
  return r;
}

inline nlohmann::json to_json(const AucResult& a) {
  return {{"macro_auc", a.macro_auc}, {"ci_low", a.ci_low}, {"ci_high", a.ci_high}, {"n_bootstrap", a.n_bootstrap}};
}

inline AucResult auc_result_from_json(const nlohmann::json& j) {
  return {j.at("macro_auc").get<double>(), j.at("ci_low").get<double>(), j.at("ci_high").get<double>(),
          j.at("n_bootstrap").get<std::size_t>()};
}

inline nlohmann::json to_json(const NonInferiorityResult& n) {
  return {{"mean_diff", n.mean_diff}, {"ci_low", n.ci_low}, {"ci_high", n.ci_high}, {"margin", n.margin}, {"pass", n.pass}};
}

inline nlohmann::json to_json(const StageTimings& t) {
  return {{"pre", t.pre}, {"scoring", t.scoring}, {"post", t.post}, {"mil", t.mil}};
}

inline nlohmann::json to_json(const BenchResult& b) {
  return {{"mode", to_string(b.mode)},
          {"n_patches", b.spec.n_patches},
          {"k_u", b.spec.selection.k_u},
          {"k_a", b.spec.selection.k_a},
          {"precision", to_string(b.spec.precision)},
          {"repetitions", b.spec.repetitions},
          {"warmup", b.spec.warmup},
          {"workers", b.workers},
          {"batch", b.batch},
          {"seconds", b.seconds},
          {"median_seconds", b.median},
          {"p10_seconds", b.p10},
          {"p90_seconds", b.p90},
          {"slides_per_hour", b.slides_per_hour},
          {"stage_seconds", to_json(b.stages)},
          {"flops_per_slide", b.flops_per_slide}};
}

inline BenchResult bench_result_from_json(const nlohmann::json& j) {
  BenchResult b;
  b.mode = parse_mode(j.at("mode").get<std::string>());
  b.spec.n_patches = j.at("n_patches").get<std::size_t>();
  b.spec.selection = {j.at("k_u").get<std::size_t>(), j.at("k_a").get<std::size_t>()};
  b.spec.precision = parse_precision(j.at("precision").get<std::string>());
  b.spec.repetitions = j.at("repetitions").get<std::size_t>();
  b.spec.warmup = j.at("warmup").get<std::size_t>();
  b.workers = j.at("workers").get<std::size_t>();
  b.batch = j.at("batch").get<std::size_t>();
  b.seconds = j.at("seconds").get<std::vector<double>>();
  b.median = j.at("median_seconds").get<double>();
  b.p10 = j.at("p10_seconds").get<double>();
  b.p90 = j.at("p90_seconds").get<double>();
  b.slides_per_hour = j.at("slides_per_hour").get<double>();
  const auto& st = j.at("stage_seconds");
  b.stages = {st.at("pre").get<double>(), st.at("scoring").get<double>(), st.at("post").get<double>(),
              st.at("mil").get<double>()};
  b.flops_per_slide = j.at("flops_per_slide").get<std::uint64_t>();
  return b;
}

inline nlohmann::json to_json(const Report& r) {
  nlohmann::json j;
  j["meta"] = r.inputs.meta;
  j["reference"] = r.inputs.reference;
  j["flops_convention"] = "1 FLOP per multiply-accumulate; linear layers only";
  j["dscore_alpha"] = r.inputs.alpha;
  nlohmann::json models = nlohmann::json::object();
  for (const auto& row : r.rows) {
    nlohmann::json m;
    nlohmann::json cohorts = nlohmann::json::object();
    for (const auto& [c, a] : r.inputs.metrics.at(row.model)) cohorts[c] = to_json(a);
    m["cohorts"] = cohorts;
    m["mean_auc"] = row.mean_auc;
    m["dscore"] = row.dscore ? nlohmann::json(*row.dscore) : nlohmann::json(nullptr);
    m["mean_rank"] = row.mean_rank;
    m["retention_percent"] = row.retention;
    m["flops_per_slide"] = row.flops;
    if (!r.inputs.bench.empty()) m["bench"] = to_json(r.inputs.bench.at(row.model));
    models[row.model] = m;
  }
  j["models"] = models;
  nlohmann::json ni = nlohmann::json::array();
  for (const auto& e : r.inputs.noninferiority) {
    auto x = to_json(e.result);
    x["candidate"] = e.candidate;
    x["reference"] = e.reference;
    x["cohort"] = e.cohort;
    ni.push_back(x);
  }
  j["noninferiority"] = ni;
  nlohmann::json curves = nlohmann::json::array();
  for (const auto& c : r.inputs.curves) curves.push_back({{"name", c.name}, {"file", "curve_" + c.name + ".tsv"}});
  j["curves"] = curves;
  return j;
}

inline std::string format_table(const Report& r) {
  std::ostringstream os;
  for (const auto& [k, v] : r.inputs.meta) os << "# " << k << '=' << v << '\n';
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %-26s %8s %6s %10s %12s %12s\n", "model", "macro-AUC (95% CI)", "D-Score",
                "rank", "retention", "GFLOPs/slide", "slides/hour");
  os << line;
  for (const auto& row : r.rows) {
    char auc[64], ds[16], sph[24];
    if (row.single)
      std::snprintf(auc, sizeof auc, "%.4f (%.4f-%.4f)", row.mean_auc, row.single->ci_low, row.single->ci_high);
    else
      std::snprintf(auc, sizeof auc, "%.4f", row.mean_auc);
    if (row.dscore)
      std::snprintf(ds, sizeof ds, "%.4f", *row.dscore);
    else
      std::snprintf(ds, sizeof ds, "-");
    if (row.slides_per_hour)
      std::snprintf(sph, sizeof sph, "%.1f", *row.slides_per_hour);
    else
      std::snprintf(sph, sizeof sph, "-");
    std::snprintf(line, sizeof line, "%-16s %-26s %8s %6.2f %9.2f%% %12.4f %12s\n", row.model.c_str(), auc, ds,
                  row.mean_rank, row.retention, row.flops / 1e9, sph);
    os << line;
  }
  os << "retention relative to " << r.inputs.reference << "; FLOPs count 1 per multiply-accumulate\n";
  for (const auto& e : r.inputs.noninferiority) {
    std::snprintf(line, sizeof line, "non-inferiority %s vs %s on %s: mean diff %+.4f, 95%% CI [%+.4f, %+.4f], margin %+.3f: %s\n",
                  e.candidate.c_str(), e.reference.c_str(), e.cohort.c_str(), e.result.mean_diff, e.result.ci_low,
                  e.result.ci_high, e.result.margin, e.result.pass ? "PASS" : "FAIL");
    os << line;
  }
  return os.str();
}

// Writes report.json, report.txt and one curve_<name>.tsv per curve into `dir`.
inline Report emit_report(const ReportInputs& in, const std::filesystem::path& dir) {
  const Report r = build_report(in);
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "report.json");
    os << to_json(r).dump(2) << '\n';
    if (!os) throw std::runtime_error("cannot write " + (dir / "report.json").string());
  }
  {
    std::ofstream os(dir / "report.txt");
    os << format_table(r);
    if (!os) throw std::runtime_error("cannot write " + (dir / "report.txt").string());
  }
  for (const auto& c : in.curves) save_curve(dir / ("curve_" + c.name + ".tsv"), c.points, in.meta);
  return r;
}

}  // namespace litepath
