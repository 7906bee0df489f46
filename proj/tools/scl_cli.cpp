// Command-line harness: synth, train, eval, ablate, compare.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scl/scl.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool force = false;
  std::size_t jobs = 1;
};

std::mutex log_mutex;

void log_line(const std::string& s) {
  std::lock_guard<std::mutex> lock(log_mutex);
  std::cerr << s << std::endl;
}

scl::RunConfig load_config(const Globals& g) {
  scl::RunConfig c = g.config.empty() ? scl::RunConfig{} : scl::load_run_config(g.config);
  if (g.seed) c.apply_seed(*g.seed);
  return c;
}

fs::path output_dir(const Globals& g, const scl::RunConfig& c, const char* fallback) {
  if (!g.out.empty()) return g.out;
  if (c.output_dir) return *c.output_dir;
  return fallback;
}

/// Creates an empty output directory. An existing non-empty one needs --force and is cleared.
void prepare_output(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw scl::ConfigError(dir.string() + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw scl::ConfigError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

fs::path default_cache() { return scl::cache_root(fs::temp_directory_path() / "scl_cache"); }

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream os(p);
  if (!os) throw scl::IngestionError("cannot write " + p.string());
  os << j.dump(2) << '\n';
}

/// Per-task subdirectory only when a command handles several tasks.
fs::path task_dir(const fs::path& root, const std::string& task_id, std::size_t n_tasks) {
  return n_tasks > 1 ? root / task_id : root;
}

void plot_curves(const scl::RunRecord& r, const fs::path& path) {
  scl::PlotSpec spec;
  spec.title = r.arch_id + " " + r.stage + " loss";
  scl::PlotSeries tr{"train_loss", {}, {}}, va{"val_loss", {}, {}};
  for (const auto& e : r.curves) {
    tr.x.push_back(e.epoch);
    tr.y.push_back(e.train_loss);
    va.x.push_back(e.epoch);
    va.y.push_back(e.val_loss);
  }
  spec.series = {tr, va};
  scl::write_plot(path, spec);
}

void plot_trace(const scl::ProbabilityTrace& t, const fs::path& path) {
  scl::PlotSpec spec;
  spec.title = t.demo_id;
  spec.y_min = 0.0;
  spec.y_max = 1.0;
  scl::PlotSeries p{"prob", {}, t.probs}, l{"label", {}, {}};
  for (std::size_t i = 0; i < t.length(); ++i) {
    p.x.push_back(static_cast<double>(i));
    l.x.push_back(static_cast<double>(i));
    l.y.push_back(t.labels[i]);
  }
  spec.series = {p, l};
  if (t.timing) spec.series.push_back({"timing_pred", p.x, *t.timing});
  scl::write_plot(path, spec);
}

// ---------------------------------------------------------------------------
// Training and evaluation shared by several commands
// ---------------------------------------------------------------------------

struct TrainedRun {
  scl::ModelHandle<float> model;
  scl::TrainResult result;
};

TrainedRun train_one(scl::ArchId arch, const scl::RunConfig& c, const scl::TaskDataset& ds, const fs::path& dir) {
  const auto source = scl::prepare_demos(ds.train_demos);
  const auto test = scl::prepare_demos(ds.test_demos);
  const auto target = scl::TargetFrames::strip_labels(test);
  TrainedRun run{scl::build_model<float>(arch, c.backbone, c.heads, c.train.seed, c.seq), {}};
  scl::RunOptions opt;
  opt.out_dir = dir;
  opt.log = [tag = scl::to_string(arch) + "/" + ds.task_id](const std::string& s) { log_line("[" + tag + "] " + s); };
  run.result = scl::train_model(run.model, source, target, c.train, opt);

  nlohmann::json resolved = scl::to_json(c);
  resolved["arch"] = scl::to_string(arch);
  nlohmann::json j = {{"task_id", ds.task_id}, {"resolved_config", resolved}, {"result", scl::to_json(run.result)}};
  write_json(dir / "run.json", j);
  scl::write_curves_csv(run.result.primary, dir / "curves.csv");
  plot_curves(run.result.primary, dir / "curves.png");
  if (run.result.adaptation) {
    scl::write_curves_csv(*run.result.adaptation, dir / "adapt_curves.csv");
    plot_curves(*run.result.adaptation, dir / "adapt_curves.png");
  }
  return run;
}

/// Evaluates on each task's test split, writing traces under `out`.
scl::MetricsReport evaluate(const scl::ModelHandle<float>& m, const std::vector<std::pair<std::string, std::vector<scl::PreparedDemo>>>& tasks,
                            const scl::EvalOptions& eo, const fs::path& out) {
  scl::MetricsReport rep;
  rep.arch_id = scl::to_string(m.arch());
  for (const auto& [task_id, test] : tasks) {
    const auto ev = scl::evaluate_task(m, test, eo);
    const fs::path dir = task_dir(out, task_id, tasks.size());
    fs::create_directories(dir);
    for (const auto& t : ev.traces) {
      scl::write_trace_csv(t, dir / ("trace_" + t.demo_id + ".csv"));
      plot_trace(t, dir / ("trace_" + t.demo_id + ".png"));
    }
    if (ev.timing_warning) rep.warnings.push_back(task_id + ": " + *ev.timing_warning);
    rep.per_task[task_id] = ev.metrics;
  }
  rep.macro = scl::macro_average(rep.per_task);
  return rep;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_synth(const Globals& g) {
  scl::RunConfig c = load_config(g);
  const fs::path out = output_dir(g, c, "synth_data");
  std::vector<const scl::SynthConfig*> synths;
  for (const auto& d : c.datasets) {
    if (d.synth) synths.push_back(&*d.synth);
  }
  if (synths.empty()) throw scl::ConfigError("synth: config has no synthetic dataset section");
  prepare_output(out, g.force);
  for (const auto* sc : synths) {
    const fs::path dir = task_dir(out, sc->task_id, synths.size());
    scl::write_dataset(scl::generate(*sc), dir);
    const scl::TaskDataset ds = scl::load_manifest(dir);
    for (const auto& [name, demos] : {std::pair{"train", &ds.train_demos}, std::pair{"test", &ds.test_demos}}) {
      const auto cc = scl::class_counts(*demos);
      std::printf("%s %s: %zu demos, %zu frames (%zu non-success / %zu success)\n", ds.task_id.c_str(), name,
                  demos->size(), cc.non_success + cc.success, cc.non_success, cc.success);
    }
  }
  std::printf("wrote %s\n", out.string().c_str());
  return kExitOk;
}

int cmd_train(const Globals& g) {
  scl::RunConfig c = load_config(g);
  const fs::path out = output_dir(g, c, "run");
  prepare_output(out, g.force);
  for (const auto& src : c.datasets) {
    const scl::TaskDataset ds = scl::resolve_dataset(src, default_cache());
    const fs::path dir = task_dir(out, ds.task_id, c.datasets.size());
    fs::create_directories(dir);
    const TrainedRun run = train_one(c.arch, c, ds, dir);
    std::printf("%s %s: best epoch %d, checkpoint %s\n", scl::to_string(c.arch).c_str(), ds.task_id.c_str(),
                run.result.last().best_epoch, (dir / "checkpoint").string().c_str());
  }
  return kExitOk;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::vector<std::string>& datasets) {
  if (checkpoint.empty()) throw scl::ConfigError("eval: --checkpoint is required");
  scl::RunConfig c = load_config(g);
  fs::path ck = checkpoint;
  if (fs::exists(ck / "checkpoint" / "model.json")) ck /= "checkpoint";
  const auto m = scl::load_checkpoint<float>(ck);

  std::vector<std::pair<std::string, std::vector<scl::PreparedDemo>>> tasks;
  if (!datasets.empty()) {
    for (const auto& d : datasets) {
      const auto ds = scl::load_manifest(d);
      tasks.emplace_back(ds.task_id, scl::prepare_demos(ds.test_demos));
    }
  } else {
    for (const auto& src : c.datasets) {
      const auto ds = scl::resolve_dataset(src, default_cache());
      tasks.emplace_back(ds.task_id, scl::prepare_demos(ds.test_demos));
    }
  }
  for (const auto& [id, demos] : tasks) {
    if (demos.empty()) throw scl::InsufficientDataError("eval: task " + id + " has no test demonstrations");
  }
  const fs::path out = output_dir(g, c, "eval");
  prepare_output(out, g.force);
  scl::MetricsReport rep = evaluate(m, tasks, c.eval, out);

  const fs::path run_json = ck.parent_path() / "run.json";
  if (fs::exists(run_json)) {
    rep.train_time_per_image_s =
        scl::detail::read_json_file(run_json).at("result").at("train_time_per_image_s").get<double>();
  } else {
    const auto& test = tasks.front().second;
    auto& mm = const_cast<scl::ModelHandle<float>&>(m);
    const auto tr = scl::time_per_image(mm, scl::demo_images(test.front()), scl::TimingMode::kTrain, c.eval.timing_repetitions);
    rep.train_time_per_image_s = tr.seconds_per_image;
    rep.warnings.push_back("no run.json beside the checkpoint; training time measured as forward+backward cost");
  }
  const nlohmann::json j = scl::to_json(rep);
  if (const auto errs = scl::validate_metrics_json(j); !errs.empty()) {
    throw scl::ValidationError("metrics.json failed schema validation: " + errs.front());
  }
  write_json(out / "metrics.json", j);
  std::printf("%s macro acc %.4f f1 %.4f -> %s\n", rep.arch_id.c_str(), rep.macro.acc, rep.macro.f1,
              (out / "metrics.json").string().c_str());
  return kExitOk;
}

int cmd_ablate(const Globals& g) {
  scl::RunConfig c = load_config(g);
  if (c.datasets.size() != 1) throw scl::ConfigError("ablate: expects exactly one dataset");
  const scl::TaskDataset ds = scl::resolve_dataset(c.datasets.front(), default_cache());
  const auto train = scl::prepare_demos(ds.train_demos);
  const auto test = scl::prepare_demos(ds.test_demos);
  scl::AblationSpec spec;
  spec.arch = c.arch;
  spec.counts = c.ablation.counts;
  spec.seeds = c.ablation.seeds;
  spec.backbone = c.backbone;
  spec.heads = c.heads;
  spec.seq = c.seq;
  spec.train = c.train;
  spec.jobs = g.jobs;
  const std::size_t need = *std::max_element(spec.counts.begin(), spec.counts.end());
  if (train.size() < need) {
    throw scl::InsufficientDataError("ablate: needs " + std::to_string(need) + " training demonstrations, dataset has " +
                                     std::to_string(train.size()));
  }
  const fs::path out = output_dir(g, c, "ablation");
  prepare_output(out, g.force);
  const auto rows = scl::ablate_demo_count(spec, train, test, log_line);
  scl::write_ablation_csv(rows, out / "ablation.csv");

  scl::PlotSpec plot;
  plot.title = scl::to_string(c.arch) + " accuracy vs demos";
  plot.y_min = 0.0;
  plot.y_max = 1.0;
  scl::PlotSeries med{"median_acc", {}, {}};
  for (auto k : spec.counts) {
    std::vector<double> accs;
    for (const auto& r : rows) {
      if (r.demos == k) accs.push_back(r.acc);
    }
    med.x.push_back(static_cast<double>(k));
    med.y.push_back(scl::median(accs));
    std::printf("demos %zu median acc %.4f\n", k, med.y.back());
  }
  plot.series = {med};
  scl::write_plot(out / "ablation.png", plot);
  return kExitOk;
}

struct CompareRow {
  std::string arch;
  std::string status = "ok";
  scl::MetricsReport report;
  bool numerical = false;
};

int cmd_compare(const Globals& g) {
  scl::RunConfig c = load_config(g);
  const fs::path out = output_dir(g, c, "compare");
  prepare_output(out, g.force);
  std::vector<scl::TaskDataset> data;
  for (const auto& src : c.datasets) data.push_back(scl::resolve_dataset(src, default_cache()));
  std::vector<std::pair<std::string, std::vector<scl::PreparedDemo>>> tasks;
  for (const auto& ds : data) tasks.emplace_back(ds.task_id, scl::prepare_demos(ds.test_demos));

  std::vector<CompareRow> rows(c.archs.size());
  scl::parallel_for(rows.size(), g.jobs, [&](std::size_t i) {
    const scl::ArchId arch = c.archs[i];
    CompareRow& row = rows[i];
    row.arch = scl::to_string(arch);
    const fs::path adir = out / row.arch;
    try {
      double train_time = 0;
      std::map<std::string, scl::TaskMetrics> per_task;
      std::vector<std::string> warnings;
      for (std::size_t t = 0; t < data.size(); ++t) {
        const fs::path dir = task_dir(adir, data[t].task_id, data.size());
        fs::create_directories(dir);
        const TrainedRun run = train_one(arch, c, data[t], dir);
        train_time += run.result.primary.train_time_per_image_s / static_cast<double>(data.size());
        const scl::MetricsReport part = evaluate(run.model, {tasks[t]}, c.eval, dir);
        per_task.insert(part.per_task.begin(), part.per_task.end());
        warnings.insert(warnings.end(), part.warnings.begin(), part.warnings.end());
        for (const auto& w : run.result.last().warnings) warnings.push_back(data[t].task_id + ": " + w);
      }
      row.report.arch_id = row.arch;
      row.report.per_task = per_task;
      row.report.macro = scl::macro_average(per_task);
      row.report.train_time_per_image_s = train_time;
      row.report.warnings = warnings;
      write_json(adir / "metrics.json", scl::to_json(row.report));
    } catch (const scl::NumericalError& e) {
      row.status = std::string("failed: ") + e.what();
      row.numerical = true;
    } catch (const std::exception& e) {
      row.status = std::string("failed: ") + e.what();
    }
    log_line("[compare] " + row.arch + " " + row.status);
  });

  auto num = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.4f", v);
    return std::string(b);
  };
  auto sci = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.4g", v);
    return std::string(b);
  };
  std::ofstream csv(out / "comparison.csv"), md(out / "comparison.md");
  csv << "arch,status,acc,precision,recall,f1,auc,train_time_per_image_s,test_time_per_image_s\n";
  md << "| Model | ACC | Precision | Recall | F1 | AUC | Train time/img (s) | Test time/img (s) | Status |\n"
     << "|---|---|---|---|---|---|---|---|---|\n";
  std::vector<double> accs, f1s, aucs;
  bool any_numerical = false, any_failed = false;
  for (const auto& r : rows) {
    if (r.status != "ok") {
      any_failed = true;
      any_numerical = any_numerical || r.numerical;
      std::string status = r.status;
      std::replace(status.begin(), status.end(), ',', ';');
      csv << r.arch << ',' << status << ",,,,,,,\n";
      md << "| " << r.arch << " | | | | | | | | " << r.status << " |\n";
      continue;
    }
    const auto& m = r.report.macro;
    const std::string auc = m.auc ? num(*m.auc) : "";
    csv << r.arch << ",ok," << scl::detail::fmt_num(m.acc) << ',' << scl::detail::fmt_num(m.precision) << ','
        << scl::detail::fmt_num(m.recall) << ',' << scl::detail::fmt_num(m.f1) << ','
        << (m.auc ? scl::detail::fmt_num(*m.auc) : "") << ',' << scl::detail::fmt_num(r.report.train_time_per_image_s)
        << ',' << scl::detail::fmt_num(m.test_time_per_image_s) << '\n';
    md << "| " << r.arch << " | " << num(m.acc) << " | " << num(m.precision) << " | " << num(m.recall) << " | "
       << num(m.f1) << " | " << auc << " | " << sci(r.report.train_time_per_image_s) << " | "
       << sci(m.test_time_per_image_s) << " | ok |\n";
    for (const auto& [task, t] : r.report.per_task) {
      if (!t.auc) continue;
      accs.push_back(t.acc);
      f1s.push_back(t.f1);
      aucs.push_back(*t.auc);
    }
  }
  // Correlation between the metric columns across all (arch, task) rows.
  auto corr = [](const std::vector<double>& a, const std::vector<double>& b) -> std::string {
    try {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", scl::pearson(a, b));
      return buf;
    } catch (const scl::Error&) {
      return "undefined";
    }
  };
  md << "\nPearson correlation over " << accs.size() << " (arch, task) rows: ACC-F1 " << corr(accs, f1s) << ", ACC-AUC "
     << corr(accs, aucs) << ", F1-AUC " << corr(f1s, aucs) << "\n";
  csv.close();
  md.close();
  std::ifstream show(out / "comparison.md");
  std::cout << show.rdbuf();
  if (any_numerical) return kExitNumerical;
  return any_failed ? kExitUsage : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-success classifier toolkit"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "Run configuration (JSON)");
  app.add_option("--out", g.out, "Output directory");
  auto* seed_opt = app.add_option("--seed", seed, "Seed for data generation and training");
  app.add_flag("--force", g.force, "Overwrite a non-empty output directory");
  app.add_option("--jobs", g.jobs, "Parallel runs for ablate/compare")->check(CLI::PositiveNumber);

  std::string checkpoint;
  std::vector<std::string> datasets;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  auto* train = app.add_subcommand("train", "Train one architecture");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on test splits");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint or run directory")->required();
  eval->add_option("--dataset", datasets, "Dataset directory (repeatable); defaults to the config's datasets");
  auto* ablate = app.add_subcommand("ablate", "Accuracy versus number of training demonstrations");
  auto* compare = app.add_subcommand("compare", "Train and evaluate several architectures");
  for (auto* sub : {synth, train, eval, ablate, compare}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*synth) return cmd_synth(g);
    if (*train) return cmd_train(g);
    if (*eval) return cmd_eval(g, checkpoint, datasets);
    if (*ablate) return cmd_ablate(g);
    if (*compare) return cmd_compare(g);
  } catch (const scl::NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const scl::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
