#include "mla/cli/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <thread>

#include <CLI11.hpp>

#include "mla/analysis/analysis.hpp"
#include "mla/data/prepare.hpp"
#include "mla/error.hpp"
#include "mla/explain/explainers.hpp"
#include "mla/graph/attention_dag.hpp"
#include "mla/model/checkpoint.hpp"
#include "mla/training/manifest.hpp"
#include "mla/training/trainer.hpp"

namespace mla::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct DataArgs {
  std::string kind = "synth";
  std::string input;
  std::string decl;
  std::string groups;
  std::string class_map;
  std::uint64_t seed = 0;
  std::size_t subsample = 0;
  double validation_fraction = -1.0;  // < 0: dataset default
  std::size_t train_rows = 1'000'000;
  std::size_t validation_rows = 75'000;
  std::size_t samples = 2000;
  std::size_t synth_groups = 4;
  std::size_t per_group = 3;
  std::size_t informative = 0;
  double noise = 0.1;
};

struct ModelArgs {
  std::size_t layers, heads, d_model = 64, d_ff = 128;
  double dropout = 0.1;
};

struct TrainArgs {
  std::size_t batch = 128;
  std::size_t epochs = 30;
  double lr = 1e-3;
  std::size_t patience = 5;
  std::string metric = "f1";
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 1;
};

void add_data_options(CLI::App* app, DataArgs& d) {
  app->add_option("--data", d.kind, "Dataset: synth, covtype, ni, csv or cache")
      ->check(CLI::IsMember({"synth", "covtype", "ni", "csv", "cache"}))
      ->capture_default_str();
  app->add_option("--input", d.input, "Raw data file (covtype, ni, csv, cache)");
  app->add_option("--schema-decl", d.decl, "Column declaration JSON for --data csv");
  app->add_option("--groups", d.groups, "Group config JSON for --data csv");
  app->add_option("--class-map", d.class_map, "Label-to-class map JSON for --data ni");
  app->add_option("--data-seed", d.seed, "Seed for splits and synthetic data")->capture_default_str();
  app->add_option("--subsample", d.subsample, "Stratified subsample size for covtype (0 = all)")
      ->capture_default_str();
  app->add_option("--validation-fraction", d.validation_fraction, "Validation share (synth, csv, covtype)");
  app->add_option("--train-rows", d.train_rows, "Training rows for ni")->capture_default_str();
  app->add_option("--validation-rows", d.validation_rows, "Validation rows for ni")->capture_default_str();
  app->add_option("--samples", d.samples, "Synthetic sample count")->capture_default_str();
  app->add_option("--synth-groups", d.synth_groups, "Synthetic group count")->capture_default_str();
  app->add_option("--features-per-group", d.per_group, "Synthetic features per group")->capture_default_str();
  app->add_option("--informative", d.informative, "Synthetic informative group (0-based)")->capture_default_str();
  app->add_option("--noise", d.noise, "Synthetic label noise")->capture_default_str();
}

void add_model_options(CLI::App* app, ModelArgs& m) {
  app->add_option("--layers", m.layers, "Encoder layers")->capture_default_str();
  app->add_option("--heads", m.heads, "Attention heads")->capture_default_str();
  app->add_option("--d-model", m.d_model, "Token width d")->capture_default_str();
  app->add_option("--d-ff", m.d_ff, "Feed-forward width")->capture_default_str();
  app->add_option("--dropout", m.dropout, "Dropout rate")->capture_default_str();
}

void add_train_options(CLI::App* app, TrainArgs& t) {
  app->add_option("--batch-size", t.batch, "Minibatch size")->capture_default_str();
  app->add_option("--epochs", t.epochs, "Maximum epochs")->capture_default_str();
  app->add_option("--lr", t.lr, "Adam learning rate")->capture_default_str();
  app->add_option("--patience", t.patience, "Early-stopping patience in epochs (0 = off)")->capture_default_str();
  app->add_option("--metric", t.metric, "Validation metric: f1 or accuracy")->capture_default_str();
  app->add_option("--seed", t.seed, "Run seed")->capture_default_str();
  app->add_option("--seeds", t.seeds, "Comma-separated run seeds; one run each")->delimiter(',');
  app->add_option("--jobs", t.jobs, "Parallel runs")->capture_default_str();
}

fs::path absolute_existing(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " is required for this dataset");
  const fs::path p = fs::absolute(path).lexically_normal();
  if (!fs::is_regular_file(p)) throw DataError(what + " not found: " + path);
  return p;
}

ordered_json data_source_json(const DataArgs& d) {
  ordered_json j;
  j["kind"] = d.kind;
  if (d.kind == "synth") {
    if (d.synth_groups < 2) throw ConfigError("--synth-groups must be at least 2");
    if (d.informative >= d.synth_groups) throw ConfigError("--informative must be below --synth-groups");
    if (d.per_group == 0 || d.samples == 0) throw ConfigError("synthetic sizes must be positive");
    j["samples"] = d.samples;
    j["groups"] = d.synth_groups;
    j["features_per_group"] = d.per_group;
    j["informative_group"] = d.informative;
    j["noise"] = d.noise;
    j["seed"] = d.seed;
    j["validation_fraction"] = d.validation_fraction < 0 ? 0.2 : d.validation_fraction;
  } else if (d.kind == "covtype") {
    j["path"] = absolute_existing(d.input, "--input").string();
    j["seed"] = d.seed;
    j["subsample"] = d.subsample;
    const data::CovertypeOptions defaults;
    j["validation_fraction"] = d.validation_fraction < 0 ? defaults.validation_fraction : d.validation_fraction;
    j["test_fraction"] = defaults.test_fraction;
  } else if (d.kind == "ni") {
    j["path"] = absolute_existing(d.input, "--input").string();
    j["seed"] = d.seed;
    j["train_rows"] = d.train_rows;
    j["validation_rows"] = d.validation_rows;
    j["class_map"] = d.class_map.empty() ? "" : absolute_existing(d.class_map, "--class-map").string();
  } else if (d.kind == "csv") {
    j["path"] = absolute_existing(d.input, "--input").string();
    j["schema_decl"] = absolute_existing(d.decl, "--schema-decl").string();
    j["groups"] = absolute_existing(d.groups, "--groups").string();
    j["seed"] = d.seed;
    j["validation_fraction"] = d.validation_fraction < 0 ? 0.2 : d.validation_fraction;
  } else {
    j["path"] = absolute_existing(d.input, "--input").string();
  }
  if (j.contains("validation_fraction")) {
    const double v = j["validation_fraction"];
    if (!(v >= 0.0 && v < 1.0)) throw ConfigError("--validation-fraction must lie in [0, 1)");
  }
  return j;
}

double default_lambda(const ordered_json& source) {
  const std::string kind = source.at("kind");
  if (kind == "covtype") return 0.005;
  return 0.01;
}

training::TrainConfig make_train_config(const TrainArgs& t, std::uint64_t seed) {
  training::TrainConfig c;
  c.batch_size = t.batch;
  c.epochs = t.epochs;
  c.learning_rate = t.lr;
  c.patience = t.patience;
  c.metric = training::parse_metric(t.metric);
  c.seed = seed;
  return c;
}

std::vector<std::uint64_t> run_seeds(const TrainArgs& t) {
  std::vector<std::uint64_t> seeds = t.seeds.empty() ? std::vector<std::uint64_t>{t.seed} : t.seeds;
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw ConfigError("--seeds lists a seed twice");
  return seeds;
}

// Runs fn(i) for i < n on up to `jobs` threads; rethrows the first failure by index.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t count = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  std::vector<std::thread> threads;
  for (std::size_t j = 1; j < count; ++j) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

fs::path output_root(const std::string& flag) {
  if (!flag.empty()) return fs::path(flag);
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return fs::path(env);
  return fs::path("mla-output");
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

fs::path manifest_path(const std::string& arg) {
  fs::path p = fs::absolute(arg).lexically_normal();
  if (fs::is_directory(p)) p /= "manifest.json";
  if (!fs::is_regular_file(p)) throw DataError("manifest not found: " + arg);
  return p;
}

std::string hex_digest(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return out;
}

void write_run(const fs::path& dir, const model::Model& model, training::RunManifest manifest) {
  make_dir(dir);
  model::save_checkpoint(dir / "checkpoint.json", model);
  manifest.checkpoint = "checkpoint.json";
  manifest.record.checkpoint = "checkpoint.json";
  training::save_manifest(dir / "manifest.json", manifest);
}

// ---- train --------------------------------------------------------------------

int cmd_train(const DataArgs& d, const ModelArgs& m, const TrainArgs& t, const std::string& out_flag,
              std::ostream& out) {
  const ordered_json source = data_source_json(d);
  const std::vector<std::uint64_t> seeds = run_seeds(t);
  std::vector<training::TrainConfig> configs;
  for (auto s : seeds) {
    configs.push_back(make_train_config(t, s));
    configs.back().validate();
  }
  const data::PreparedData data = load_data_source(source);
  const model::ModelConfig mc{m.layers, m.heads, m.d_model, m.d_ff, m.dropout, data.dataset.class_count()};
  mc.validate();

  std::vector<std::optional<training::TrainResult>> results(seeds.size());
  parallel_for(seeds.size(), t.jobs, [&](std::size_t i) {
    results[i] = training::train_teacher(data.dataset, data.schema, mc, configs[i]);
  });

  const fs::path root = output_root(out_flag);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    training::RunManifest manifest;
    manifest.kind = "teacher";
    manifest.data_source = source;
    manifest.model_config = mc;
    manifest.train_config = configs[i];
    manifest.record = results[i]->record;
    manifest.schema_digest = hex_digest(data.schema.digest());
    const fs::path dir = root / ("teacher-seed" + std::to_string(seeds[i]));
    write_run(dir, results[i]->model, manifest);
    const auto& r = results[i]->record;
    out << "teacher seed=" << seeds[i] << " epochs=" << r.epochs_run() << " best_epoch=" << r.best_epoch
        << " validation_" << training::to_string(r.metric) << "="
        << analysis::format_number(r.best_epoch ? r.validation_metric[r.best_epoch - 1] : 0.0) << " -> "
        << (dir / "manifest.json").string() << "\n";
  }
  return kExitOk;
}

// ---- distill ------------------------------------------------------------------

struct DistillArgs {
  std::string teacher;
  double temperature = 2.0;
  std::optional<double> lambda;
  std::vector<double> lambdas;
};

int cmd_distill(const DistillArgs& a, const ModelArgs& m, const TrainArgs& t, const std::string& out_flag,
                std::ostream& out) {
  if (a.lambda && !a.lambdas.empty()) throw ConfigError("use either --lambda or --lambdas, not both");
  const fs::path teacher_manifest_path = manifest_path(a.teacher);
  const training::RunManifest tm = training::load_manifest(teacher_manifest_path);
  const std::vector<std::uint64_t> seeds = run_seeds(t);
  std::vector<training::TrainConfig> configs;
  const double fixed_lambda = a.lambda.value_or(default_lambda(tm.data_source));
  for (auto s : seeds) {
    auto c = make_train_config(t, s);
    c.temperature = a.temperature;
    c.lambda = a.lambdas.empty() ? fixed_lambda : a.lambdas.front();
    c.validate();
    configs.push_back(c);
  }
  for (double l : a.lambdas) {
    if (!(l >= 0.0)) throw ConfigError("lambda candidates must be nonnegative");
  }
  const data::PreparedData data = load_data_source(tm.data_source);
  const model::Model teacher = model::load_checkpoint(teacher_manifest_path.parent_path() / tm.checkpoint);
  if (teacher.schema != data.schema) {
    throw ConfigError("teacher checkpoint schema does not match its dataset's concept groups");
  }
  const model::ModelConfig mc{m.layers, m.heads, m.d_model, m.d_ff, m.dropout, data.dataset.class_count()};
  mc.validate();

  struct Outcome {
    training::TrainResult result;
    std::vector<double> lambdas, scores;
  };
  std::vector<std::optional<Outcome>> results(seeds.size());
  parallel_for(seeds.size(), t.jobs, [&](std::size_t i) {
    if (a.lambdas.empty()) {
      results[i] = Outcome{training::distill_student(data.dataset, teacher, data.schema, mc, configs[i]), {}, {}};
    } else {
      auto sel = training::select_lambda(data.dataset, teacher, data.schema, mc, configs[i], a.lambdas);
      results[i] = Outcome{std::move(sel.best), std::move(sel.lambdas), std::move(sel.scores)};
    }
  });

  const fs::path root = output_root(out_flag);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    Outcome& o = *results[i];
    training::RunManifest manifest;
    manifest.kind = "student";
    manifest.data_source = tm.data_source;
    manifest.model_config = mc;
    manifest.train_config = configs[i];
    manifest.train_config.lambda = o.result.record.lambda;
    manifest.record = o.result.record;
    manifest.schema_digest = hex_digest(data.schema.digest());
    manifest.lambda_candidates = o.lambdas;
    manifest.lambda_scores = o.scores;
    const fs::path dir = root / ("student-seed" + std::to_string(seeds[i]));
    manifest.teacher_manifest =
        teacher_manifest_path.lexically_relative(fs::absolute(dir).lexically_normal()).generic_string();
    write_run(dir, o.result.model, manifest);
    const auto& r = o.result.record;
    out << "student seed=" << seeds[i] << " lambda=" << analysis::format_number(r.lambda)
        << " epochs=" << r.epochs_run() << " best_epoch=" << r.best_epoch << " -> "
        << (dir / "manifest.json").string() << "\n";
  }
  return kExitOk;
}

// ---- explain ------------------------------------------------------------------

struct ExplainArgs {
  std::vector<std::string> students;
  std::vector<std::string> methods{"mla", "ll", "sa", "sh"};
  std::size_t k = 2;
  std::string split = "validation";
  std::optional<std::size_t> sample_id;
  std::size_t budget = 200;
  std::size_t background = 100;
  std::string sa_target = "predicted";
  std::size_t jobs = 1;
};

int cmd_explain(const ExplainArgs& a, const std::string& out_flag, std::ostream& out) {
  std::vector<explain::Method> methods;
  for (const auto& name : a.methods) {
    const explain::Method m = explain::parse_method(name);
    if (std::find(methods.begin(), methods.end(), m) != methods.end()) {
      throw ConfigError("method '" + name + "' listed twice");
    }
    methods.push_back(m);
  }
  if (methods.empty()) throw ConfigError("no explanation methods given");
  if (a.students.empty()) throw ConfigError("--student is required");
  if (a.budget == 0) throw ConfigError("--budget must be positive");
  if (a.background == 0) throw ConfigError("--background must be positive");
  if (a.sa_target != "predicted" && a.sa_target != "label") {
    throw ConfigError("--sa-target must be 'predicted' or 'label'");
  }
  const data::Split split = data::parse_split(a.split);

  struct Run {
    training::RunManifest manifest;
    model::Model model;
    std::string data_key;
  };
  std::vector<Run> runs;
  std::set<std::uint64_t> seen_seeds;
  std::map<std::string, data::PreparedData> datasets;
  for (const auto& arg : a.students) {
    const fs::path mp = manifest_path(arg);
    Run run;
    run.manifest = training::load_manifest(mp);
    if (!seen_seeds.insert(run.manifest.record.seed).second) {
      throw ConfigError("two runs share seed " + std::to_string(run.manifest.record.seed));
    }
    run.model = model::load_checkpoint(mp.parent_path() / run.manifest.checkpoint);
    run.data_key = run.manifest.data_source.dump();
    if (!datasets.contains(run.data_key)) datasets.emplace(run.data_key, load_data_source(run.manifest.data_source));
    const auto& data = datasets.at(run.data_key);
    if (run.model.schema != data.schema) throw ConfigError("checkpoint schema does not match its dataset: " + arg);
    if (a.k < 1 || a.k > data.schema.group_count()) {
      throw ConfigError("--k must lie in [1, " + std::to_string(data.schema.group_count()) + "]");
    }
    runs.push_back(std::move(run));
  }

  struct Job {
    std::size_t run;
    explain::Method method;
    std::vector<std::size_t> rows;
  };
  std::vector<Job> jobs;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const data::TabularDataset& ds = datasets.at(runs[r].data_key).dataset;
    std::vector<std::size_t> rows = ds.indices(split);
    if (a.sample_id) {
      const auto it = std::find_if(rows.begin(), rows.end(), [&](std::size_t i) { return ds.sample_ids[i] == *a.sample_id; });
      if (it == rows.end()) {
        throw DataError("sample id " + std::to_string(*a.sample_id) + " is not in the " + a.split + " split");
      }
      rows = {*it};
    }
    for (explain::Method m : methods) jobs.push_back(Job{r, m, rows});
  }

  std::vector<explain::ExplanationFile> files(jobs.size());
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const Run& run = runs[jobs[j].run];
    const data::PreparedData& data = datasets.at(run.data_key);
    explain::ExplainOptions opt;
    opt.k = a.k;
    opt.sa_target = a.sa_target == "label" ? explain::SaTarget::TrueLabel : explain::SaTarget::Predicted;
    opt.sh = explain::ShOptions{a.budget, run.manifest.record.seed};
    opt.jobs = a.jobs;
    if (jobs[j].method == explain::Method::SH) {
      opt.background = explain::make_background(data.dataset, data.schema, a.background, 0);
    }
    explain::ExplanationFile& f = files[j];
    f.dataset_id = data.dataset.id;
    f.method = jobs[j].method;
    f.run_seed = run.manifest.record.seed;
    f.groups = data.schema.group_count();
    f.group_names = data.schema.names();
    f.class_names = data.dataset.class_names;
    f.records = explain::explain_batch(run.model, data.dataset, jobs[j].rows, jobs[j].method, opt);
  }

  const fs::path root = output_root(out_flag);
  const fs::path dir = root / "explanations";
  make_dir(dir);
  for (const auto& f : files) {
    const fs::path path = dir / (explain::to_string(f.method) + "-seed" + std::to_string(f.run_seed) + ".jsonl");
    explain::save_explanations(path, f);
    out << "explanations " << explain::to_string(f.method) << " seed=" << f.run_seed << " samples=" << f.records.size()
        << " -> " << path.string() << "\n";
  }

  if (a.sample_id) {
    for (const Run& run : runs) {
      const data::PreparedData& data = datasets.at(run.data_key);
      const auto& ds = data.dataset;
      const auto row = std::find(ds.sample_ids.begin(), ds.sample_ids.end(), *a.sample_id) - ds.sample_ids.begin();
      const model::Prediction p = model::predict(ds.features.row(static_cast<std::size_t>(row)), run.model);
      const fs::path sdir =
          root / "samples" / ("sample-" + std::to_string(*a.sample_id) + "-seed" + std::to_string(run.manifest.record.seed));
      make_dir(sdir);
      const auto names = data.schema.names();
      if (p.attention.heads == 1) {
        const graph::AttentionDag dag = graph::AttentionDag::build(p.attention);
        std::ofstream dump(sdir / "dag.txt", std::ios::binary);
        dump << dag.dump(names);
        if (!dump) throw IoError("failed writing " + (sdir / "dag.txt").string());
        analysis::write_table(analysis::heatmap_table("heatmap_mla", graph::path_probability_matrix(dag), names),
                              sdir / "heatmap_mla.csv");
        analysis::write_table(
            analysis::heatmap_table("heatmap_ll", p.attention.at(p.attention.layers() - 1), names),
            sdir / "heatmap_ll.csv");
      }
      for (std::size_t l = 0; l < p.attention.layers(); ++l) {
        for (std::size_t h = 0; h < p.attention.heads; ++h) {
          const auto& a_lh = p.attention.at(l, h);
          analysis::Table t{"attention", {"from"}, {}};
          for (const auto& n : names) t.header.push_back(n);
          for (std::size_t r = 0; r < a_lh.rows(); ++r) {
            std::vector<std::string> cells{names[r]};
            for (double v : a_lh.row(r)) cells.push_back(analysis::format_number(v));
            t.rows.push_back(std::move(cells));
          }
          analysis::write_table(t, sdir / ("attention_layer" + std::to_string(l + 1) + "_head" +
                                           std::to_string(h + 1) + ".csv"));
        }
      }
      out << "sample " << *a.sample_id << " seed=" << run.manifest.record.seed << " -> " << sdir.string() << "\n";
    }
  }
  return kExitOk;
}

// ---- report -------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string pair_mode = "seed";
};

int cmd_report(const ReportArgs& a, const std::string& out_flag, std::ostream& out) {
  if (a.inputs.empty()) throw ConfigError("--inputs is required");
  std::vector<fs::path> files;
  std::vector<std::string> missing;
  for (const auto& in : a.inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ".jsonl") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      if (found.empty()) missing.push_back(in + " (no .jsonl files)");
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(p)) {
      files.push_back(p);
    } else {
      missing.push_back(in);
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw DataError("missing explanation inputs: " + list);
  }
  std::vector<analysis::ExplanationSet> sets;
  for (const auto& f : files) sets.push_back(explain::load_explanations(f));
  analysis::ReportOptions opt;
  if (a.pair_mode == "seed") {
    opt.pair_mode = analysis::PairMode::BySeed;
  } else if (a.pair_mode == "cross") {
    opt.pair_mode = analysis::PairMode::CrossProduct;
  } else {
    throw ConfigError("--pair-mode must be 'seed' or 'cross'");
  }
  const std::vector<analysis::Table> tables = analysis::build_report(sets, opt);
  const fs::path dir = output_root(out_flag) / "report";
  const auto written = analysis::emit_report(tables, dir);
  out << "report tables=" << written.size() << " -> " << dir.string() << "\n";
  return kExitOk;
}

// ---- prepare ------------------------------------------------------------------

int cmd_prepare(const DataArgs& d, const std::string& out_flag, std::ostream& out) {
  const ordered_json source = data_source_json(d);
  const data::PreparedData data = load_data_source(source);
  const fs::path root = output_root(out_flag);
  make_dir(root);
  const fs::path path = root / "dataset.json";
  data::save_dataset(path, data);
  out << "dataset " << data.dataset.id << " rows=" << data.dataset.size() << " features=" << data.dataset.feature_count()
      << " groups=" << data.schema.group_count() << " -> " << path.string() << "\n";
  return kExitOk;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Range:
      return kExitUsage;
    case ErrorKind::Numeric:
    case ErrorKind::Training:
      return kExitNumeric;
    default:
      return kExitData;
  }
}

}  // namespace

data::PreparedData load_data_source(const ordered_json& source) {
  try {
    const std::string kind = source.at("kind");
    if (kind == "synth") {
      data::SynthOptions o;
      o.samples = source.at("samples");
      o.groups = source.at("groups");
      o.features_per_group = source.at("features_per_group");
      o.informative_group = source.at("informative_group");
      o.noise = source.at("noise");
      o.seed = source.at("seed");
      o.validation_fraction = source.at("validation_fraction");
      return data::synth_planted(o);
    }
    if (kind == "covtype") {
      data::CovertypeOptions o;
      o.seed = source.at("seed");
      o.subsample = source.at("subsample");
      o.validation_fraction = source.at("validation_fraction");
      o.test_fraction = source.at("test_fraction");
      return data::covertype_prepare(source.at("path").get<std::string>(), o);
    }
    if (kind == "ni") {
      data::NiOptions o;
      o.seed = source.at("seed");
      o.train_rows = source.at("train_rows");
      o.validation_rows = source.at("validation_rows");
      const std::string map = source.at("class_map");
      if (!map.empty()) o.class_map = data::load_class_map(map);
      return data::ni_prepare(source.at("path").get<std::string>(), o);
    }
    if (kind == "csv") {
      const data::CsvSchemaDecl decl = data::load_schema_decl(source.at("schema_decl").get<std::string>());
      data::SplitOptions split;
      split.seed = source.at("seed");
      split.validation_fraction = source.at("validation_fraction");
      data::PreparedData out;
      out.dataset = data::load_csv(source.at("path").get<std::string>(), decl, split);
      out.schema = data::load_group_config(source.at("groups").get<std::string>(), out.dataset);
      return out;
    }
    if (kind == "cache") return data::load_dataset(source.at("path").get<std::string>());
    throw FormatError("unknown data source kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed data source: ") + e.what());
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Concept-group transformer training, distillation and explanation"};
  app.require_subcommand(1);
  std::string out_flag;

  DataArgs train_data;
  ModelArgs teacher_model{2, 4};
  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a multi-head teacher");
  add_data_options(train, train_data);
  add_model_options(train, teacher_model);
  add_train_options(train, train_args);
  train->add_option("--out", out_flag, std::string("Output root (default $") + kOutputRootEnv + " or ./mla-output)");

  DistillArgs distill_args;
  ModelArgs student_model{4, 1};
  TrainArgs distill_train;
  double lambda_value = 0.0;
  auto* distill = app.add_subcommand("distill", "Distill a single-head student from a teacher");
  distill->add_option("--teacher", distill_args.teacher, "Teacher manifest or run directory")->required();
  add_model_options(distill, student_model);
  add_train_options(distill, distill_train);
  distill->add_option("--temperature", distill_args.temperature, "Softmax temperature T")->capture_default_str();
  auto* lambda_opt = distill->add_option("--lambda", lambda_value,
                                         "Attention-entropy penalty (default 0.005 covtype, 0.01 otherwise)");
  distill->add_option("--lambdas", distill_args.lambdas, "Comma-separated lambda sweep; best validation score wins")
      ->delimiter(',');
  distill->add_option("--out", out_flag, "Output root");

  ExplainArgs explain_args;
  std::size_t sample_id = 0;
  auto* explain_cmd = app.add_subcommand("explain", "Explain a student's predictions");
  explain_cmd->add_option("--student", explain_args.students, "Student manifest or run directory (repeatable)")
      ->required();
  explain_cmd->add_option("--methods", explain_args.methods, "Comma-separated methods: mla, ll, sa, sh")
      ->delimiter(',')
      ->capture_default_str();
  explain_cmd->add_option("--k", explain_args.k, "Best groups per sample")->capture_default_str();
  explain_cmd->add_option("--split", explain_args.split, "train, validation or test")->capture_default_str();
  auto* sample_opt =
      explain_cmd->add_option("--sample-id", sample_id, "Explain one sample and dump its graph and heat maps");
  explain_cmd->add_option("--budget", explain_args.budget, "Shapley permutations per sample")->capture_default_str();
  explain_cmd->add_option("--background", explain_args.background, "Shapley background rows")->capture_default_str();
  explain_cmd->add_option("--sa-target", explain_args.sa_target, "Saliency loss target: predicted or label")
      ->capture_default_str();
  explain_cmd->add_option("--jobs", explain_args.jobs, "Parallel samples")->capture_default_str();
  explain_cmd->add_option("--out", out_flag, "Output root");

  ReportArgs report_args;
  auto* report = app.add_subcommand("report", "Compare explanations across methods and runs");
  report->add_option("--inputs", report_args.inputs, "Explanation files or directories")->required();
  report->add_option("--pair-mode", report_args.pair_mode, "Run pairing: seed or cross")->capture_default_str();
  report->add_option("--out", out_flag, "Output root");

  DataArgs prepare_data;
  auto* prepare = app.add_subcommand("prepare", "Write a processed-dataset cache");
  add_data_options(prepare, prepare_data);
  prepare->add_option("--out", out_flag, "Output root");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(train_data, teacher_model, train_args, out_flag, out);
    if (distill->parsed()) {
      if (lambda_opt->count() > 0) distill_args.lambda = lambda_value;
      return cmd_distill(distill_args, student_model, distill_train, out_flag, out);
    }
    if (explain_cmd->parsed()) {
      if (sample_opt->count() > 0) explain_args.sample_id = sample_id;
      return cmd_explain(explain_args, out_flag, out);
    }
    if (report->parsed()) return cmd_report(report_args, out_flag, out);
    if (prepare->parsed()) return cmd_prepare(prepare_data, out_flag, out);
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace mla::cli
