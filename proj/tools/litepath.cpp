#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "litepath/harness/experiment.hpp"

using namespace litepath;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::size_t> workers;
  bool verbose = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "INI file or built-in name (default, desk, bench)")->required();
  sub->add_option("--seed", c.seed, "override run.seed");
  sub->add_option("--output-dir", c.output_dir, "override run.output_dir");
  sub->add_option("--workers", c.workers, "override run.workers");
  sub->add_flag("-v,--verbose", c.verbose, "log progress");
}

RunConfig load(const Common& c) {
  RunConfig cfg = resolve_run_config(c.config);
  if (c.seed) cfg.reseed(*c.seed);
  if (c.output_dir) cfg.output_dir = *c.output_dir;
  if (c.workers) cfg.workers = *c.workers;
  cfg.validate();
  if (c.verbose) log_threshold() = LogLevel::info;
  return cfg;
}

void print_auc(const std::string& name, const AucResult& a) {
  std::printf("%-12s macro-AUC %.4f  95%% CI [%.4f, %.4f]  (%zu bootstrap replicates)\n", name.c_str(), a.macro_auc,
              a.ci_low, a.ci_high, a.n_bootstrap);
}

int cmd_flops(const RunConfig& cfg, std::optional<std::size_t> ku, std::optional<std::size_t> ka, std::size_t n,
              bool attention_matmul, const std::string& curve_out) {
  FlopsOptions opt;
  opt.count_attention_matmul = attention_matmul;
  const auto b = encoder_flops(cfg.encoder, cfg.scorer, cfg.abmil, opt);
  const SelectionConfig sel{ku.value_or(0), ka.value_or(ku ? 0 : 1000)};
  sel.validate();
  const double full = static_cast<double>(b.full_per_patch());
  std::printf("encoder %zux%zu, patch %zu, dim %zu, depth %zu, split after block %zu\n", cfg.encoder.input_size,
              cfg.encoder.input_size, cfg.encoder.patch_size, cfg.encoder.embed_dim, cfg.encoder.depth,
              cfg.encoder.split_after_block);
  std::printf("convention: 1 FLOP per multiply-accumulate, %s\n",
              attention_matmul ? "linear layers plus attention products" : "linear layers only");
  std::printf("  patch embed        %15llu\n", static_cast<unsigned long long>(b.patch_embed));
  std::printf("  per block          %15llu\n", static_cast<unsigned long long>(b.per_block));
  std::printf("  pre-stage          %15llu\n", static_cast<unsigned long long>(b.pre_stage));
  std::printf("  post-stage         %15llu\n", static_cast<unsigned long long>(b.post_stage));
  std::printf("  output head        %15llu\n", static_cast<unsigned long long>(b.output_head));
  std::printf("  full per patch     %15llu  (%.3f GFLOPs)\n", static_cast<unsigned long long>(b.full_per_patch()), full / 1e9);
  std::printf("  scorer per patch   %15llu\n", static_cast<unsigned long long>(b.scorer_per_patch));
  std::printf("  ABMIL per bag(n)   n x %llu + %llu\n",
              static_cast<unsigned long long>(b.abmil_per_bag(1) - b.abmil_per_bag(0)),
              static_cast<unsigned long long>(b.abmil_per_bag(0)));
  std::printf("selection k_u=%zu k_a=%zu, slide of %zu patches:\n", sel.k_u, sel.k_a, n);
  const auto fs = full_slide_flops(n, b), ls = litepath_slide_flops(n, b, sel);
  std::printf("  full pipeline      %15llu\n", static_cast<unsigned long long>(fs));
  std::printf("  litepath           %15llu  (relative %.4f)\n", static_cast<unsigned long long>(ls),
              static_cast<double>(ls) / static_cast<double>(fs));
  std::printf("asymptotic relative FLOPs %.5f\n", b.asymptotic_ratio());
  std::printf("per-patch reduction vs Virchow2 (165 GFLOPs) %.2fx, composite %.1fx\n", kVirchow2FlopsPerPatch / full,
              kVirchow2FlopsPerPatch / (full * b.asymptotic_ratio()));
  std::printf("per-patch reduction vs H-Optimus-1 (296 GFLOPs) %.2fx\n", kHOptimus1FlopsPerPatch / full);
  if (!curve_out.empty()) {
    const auto counts = log_spaced_counts(std::max<std::size_t>(1, sel.k_u + sel.k_a), 1000000, 10);
    save_curve(curve_out, relative_flops_curve(b, sel, counts), cfg.meta());
    std::printf("curve written to %s\n", curve_out.c_str());
  }
  return 0;
}

// Rows of "model<TAB>auc<TAB>flops"; '#' lines and a header starting with "model" are skipped.
std::vector<std::pair<std::string, std::pair<double, double>>> read_model_table(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::vector<std::pair<std::string, std::pair<double, double>>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#' || line.rfind("model", 0) == 0) continue;
    const auto f = split_tabs(line);
    if (f.size() != 3) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected model, auc, flops");
    rows.push_back({f[0], {std::stod(f[1]), std::stod(f[2])}});
  }
  return rows;
}

int cmd_dscore(const RunConfig& cfg, const std::string& input, double alpha) {
  std::vector<std::pair<std::string, std::pair<double, double>>> rows;
  if (!input.empty()) {
    rows = read_model_table(input);
  } else {
    const RunPaths paths{cfg.output_dir};
    if (!std::filesystem::exists(paths.eval())) throw StageError("no --input given and no " + paths.eval().string());
    std::ifstream is(paths.eval());
    const auto j = nlohmann::json::parse(is);
    for (const auto& [name, m] : j.at("models").items())
      rows.push_back({name, {m.at("cohorts").at("test").at("macro_auc").get<double>(), m.at("mean_flops").get<double>()}});
  }
  DScoreInput in{{}, {}, alpha};
  for (const auto& r : rows) {
    in.auc.push_back(r.second.first);
    in.flops.push_back(r.second.second);
  }
  const auto d = dscore(in);
  std::printf("%-20s %10s %14s %10s\n", "model", "AUC", "FLOPs", "D-Score");
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::printf("%-20s %10.4f %14.4g %10.5f\n", rows[i].first.c_str(), in.auc[i], in.flops[i], d[i]);
  return 0;
}

void print_bench(const char* name, const BenchResult& b) {
  std::printf("%-9s median %.4f s/slide  p10 %.4f  p90 %.4f  %.1f slides/hour  (batch %zu, %zu reps)\n", name, b.median,
              b.p10, b.p90, b.slides_per_hour, b.batch, b.seconds.size());
  std::printf("          stages: pre %.4f  scoring %.4f  post %.4f  mil %.4f\n", b.stages.pre, b.stages.scoring,
              b.stages.post, b.stages.mil);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"litepath: split-encoder whole-slide inference with adaptive patch selection"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen", "generate the synthetic cohort and its manifest");
  auto* distill = app.add_subcommand("distill", "distil the student encoder from synthetic teachers");
  auto* train_mil = app.add_subcommand("train-mil", "train the ABMIL head on cached embeddings");
  auto* train_aps = app.add_subcommand("train-aps", "train the attention scorer by score matching");
  auto* grid = app.add_subcommand("grid", "search (k_u, k_a) on the validation split");
  auto* infer = app.add_subcommand("infer", "run inference and write a predictions file");
  auto* eval = app.add_subcommand("eval", "macro-AUC with bootstrap CIs and non-inferiority");
  auto* dscore_cmd = app.add_subcommand("dscore", "D-Score for a set of models");
  auto* flops = app.add_subcommand("flops", "analytic FLOPs breakdown and relative-FLOPs curve");
  auto* bench = app.add_subcommand("bench", "throughput benchmark of both pipelines");
  auto* report = app.add_subcommand("report", "assemble the report from eval and bench outputs");
  for (auto* s : {gen, distill, train_mil, train_aps, grid, infer, eval, dscore_cmd, flops, bench, report})
    add_common(s, common);

  std::string mode = "litepath", split = "test", out;
  std::optional<std::size_t> ku, ka;
  infer->add_option("--mode", mode, "litepath or full")->check(CLI::IsMember({"litepath", "full"}));
  infer->add_option("--ku", ku, "uniform samples (default: grid-search winner)");
  infer->add_option("--ka", ka, "attention samples (default: grid-search winner)");
  infer->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  infer->add_option("--out", out, "predictions file (default <output_dir>/predictions/<mode>.tsv)");

  std::string reference, candidate;
  eval->add_option("--reference", reference, "reference predictions (default predictions/full.tsv)");
  eval->add_option("--candidate", candidate, "candidate predictions (default predictions/litepath.tsv)");

  std::string dscore_input;
  double alpha = 0.9;
  dscore_cmd->add_option("--input", dscore_input, "TSV of model, auc, flops (default: eval.json)");
  dscore_cmd->add_option("--alpha", alpha, "weight on accuracy")->check(CLI::Range(0.0, 1.0));

  std::size_t flops_n = 10000;
  bool attention_matmul = false;
  std::string curve_out;
  flops->add_option("--ku", ku, "uniform samples");
  flops->add_option("--ka", ka, "attention samples (default 1000)");
  flops->add_option("--patches", flops_n, "patches per slide for the slide-level totals")->check(CLI::PositiveNumber);
  flops->add_flag("--attention-matmul", attention_matmul, "also count the attention matrix products");
  flops->add_option("--curve-out", curve_out, "write the relative-FLOPs curve here");

  std::optional<std::size_t> bench_patches, bench_reps;
  bench->add_option("--patches", bench_patches, "patches in the dummy slide");
  bench->add_option("--repetitions", bench_reps, "timed repetitions (>= 3)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    const RunConfig cfg = load(common);
    const RunPaths paths{cfg.output_dir};
    if (gen->parsed()) {
      const auto c = stage_gen(cfg);
      std::size_t counts[3] = {0, 0, 0}, patches = 0;
      for (std::size_t i = 0; i < c.slides.size(); ++i) {
        ++counts[static_cast<int>(c.splits[i])];
        patches += c.slides[i].n_patches;
      }
      std::printf("%zu slides (%zu train, %zu val, %zu test), %zu patches; manifest %s\n", c.slides.size(), counts[0],
                  counts[1], counts[2], patches, paths.manifest().c_str());
    } else if (distill->parsed()) {
      stage_distill(cfg);
      std::printf("student encoder written to %s\n", paths.student().c_str());
    } else if (train_mil->parsed()) {
      stage_train_mil(cfg);
      std::printf("ABMIL head written to %s\n", paths.mil().c_str());
    } else if (train_aps->parsed()) {
      stage_train_aps(cfg);
      std::printf("scorer written to %s\n", paths.litepath().c_str());
    } else if (grid->parsed()) {
      const auto r = stage_grid(cfg);
      for (const auto& e : r.entries) std::printf("k_u=%-6zu k_a=%-6zu val macro-AUC %.4f\n", e.config.k_u, e.config.k_a, e.auc);
      std::printf("best: k_u=%zu k_a=%zu (%.4f)\n", r.best.k_u, r.best.k_a, r.best_auc);
    } else if (infer->parsed()) {
      InferOptions opt;
      opt.mode = parse_mode(mode);
      if (ku || ka) opt.selection = SelectionConfig{ku.value_or(0), ka.value_or(0)};
      opt.split = parse_split(split);
      opt.out = out;
      const auto r = stage_infer(cfg, opt);
      std::printf("%zu slides, mean %.4g FLOPs per slide\n", r.records.size(),
                  r.records.empty() ? 0.0 : static_cast<double>(r.total_flops) / static_cast<double>(r.records.size()));
    } else if (eval->parsed()) {
      const std::filesystem::path ref = reference.empty() ? paths.predictions("full") : std::filesystem::path(reference);
      const std::filesystem::path cand = candidate.empty() ? paths.predictions("litepath") : std::filesystem::path(candidate);
      const auto r = stage_eval(cfg, {{ref.stem().string(), ref}, {cand.stem().string(), cand}});
      for (const auto& [name, a] : r.auc) print_auc(name, a);
      for (const auto& e : r.noninferiority)
        std::printf("non-inferiority %s vs %s: mean diff %+.4f, 95%% CI [%+.4f, %+.4f], margin %+.3f: %s\n",
                    e.candidate.c_str(), e.reference.c_str(), e.result.mean_diff, e.result.ci_low, e.result.ci_high,
                    e.result.margin, e.result.pass ? "PASS" : "FAIL");
    } else if (dscore_cmd->parsed()) {
      return cmd_dscore(cfg, dscore_input, alpha);
    } else if (flops->parsed()) {
      return cmd_flops(cfg, ku, ka, flops_n, attention_matmul, curve_out);
    } else if (bench->parsed()) {
      RunConfig b = cfg;
      if (bench_patches) b.bench.n_patches = *bench_patches;
      if (bench_reps) b.bench.repetitions = *bench_reps;
      const auto r = stage_bench(b);
      print_bench("full", r.full);
      print_bench("litepath", r.litepath);
      std::printf("speedup %.2fx (1 worker, %s)\n", r.speedup(), to_string(b.bench.precision).c_str());
    } else if (report->parsed()) {
      const auto r = stage_report(cfg);
      std::fputs(format_table(r).c_str(), stdout);
      std::printf("report written to %s\n", paths.report().c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
