#include "mtms/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mtms/checkpoint.hpp"
#include "mtms/checksum.hpp"
#include "mtms/manifest.hpp"

namespace mtms {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

void append_log(const OutputLayout& out, const std::string& line) {
  fs::create_directories(out.root);
  std::ofstream log(out.log(), std::ios::app);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  log << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << ' ' << line << '\n';
}

void refuse_overwrite(const fs::path& marker, bool force, const std::string& what) {
  if (fs::exists(marker) && !force) {
    throw OutputExists(what + " already exist in " + marker.parent_path().string() +
                             "; pass --force to overwrite");
  }
}

json training_log_json(const TrainingLog& log) {
  json out = json::array();
  for (const auto& e : log) {
    json row = {{"epoch", e.epoch}, {"loss", e.loss}, {"train_accuracy", e.train_accuracy}};
    if (e.eval_accuracy) row["eval_accuracy"] = *e.eval_accuracy;
    if (e.domain_loss) row["domain_loss"] = *e.domain_loss;
    if (e.domain_accuracy) row["domain_accuracy"] = *e.domain_accuracy;
    out.push_back(row);
  }
  return out;
}

json aggregator_config_json(const AggregatorConfig& a) {
  return {{"embedding_dim", a.embedding_dim}, {"model_dim", a.model_dim}, {"blocks", a.blocks},
          {"heads", a.heads},                 {"ff_dim", a.ff_dim},       {"classifier_hidden", a.classifier_hidden},
          {"slots", a.slots}};
}

AggregatorConfig aggregator_config_from_json(const json& j) {
  AggregatorConfig a;
  a.embedding_dim = j.at("embedding_dim").get<int>();
  a.model_dim = j.at("model_dim").get<int>();
  a.blocks = j.at("blocks").get<int>();
  a.heads = j.at("heads").get<int>();
  a.ff_dim = j.at("ff_dim").get<int>();
  a.classifier_hidden = j.at("classifier_hidden").get<int>();
  a.slots = j.at("slots").get<int>();
  return a;
}

std::string student_stem(int labelled_size) { return "student_L" + std::to_string(labelled_size); }
std::string aggregator_stem(int labelled_size) { return "aggregator_L" + std::to_string(labelled_size); }

/// Keys that determine the generated data.
json data_fingerprint(const json& config) {
  return {{"seed", config.at("seed")},
          {"domains", config.at("domains")},
          {"corruption", config.at("corruption")},
          {"samples_per_class", config.at("samples_per_class")}};
}

fs::path checkpoint_file(const fs::path& stem) { return fs::path(stem.string() + ".json"); }

}  // namespace

ExperimentConfig effective_config(const CommandOptions& opts) {
  if (opts.config.empty()) throw ConfigError("no config file given (--config PATH)");
  ExperimentConfig cfg = load_config(opts.config);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.jobs) cfg.jobs = *opts.jobs;
  if (!opts.labelled_sizes.empty()) cfg.labelled_sizes = opts.labelled_sizes;
  if (const char* env = std::getenv("MTMS_OUT"); env && *env) cfg.output_dir = env;
  validate(cfg);
  return cfg;
}

std::vector<Dataset> load_datasets(const ExperimentConfig& cfg) {
  const OutputLayout out{cfg.output_dir};
  const auto manifest_path = out.data() / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw MissingPrerequisite("no datasets under " + out.data().string() + "; run gen-data first");
  }
  const json manifest = read_json(manifest_path);
  if (data_fingerprint(manifest.at("config")) != data_fingerprint(config_to_json(cfg))) {
    throw MissingPrerequisite("datasets in " + out.data().string() +
                              " were generated from a different configuration; re-run gen-data --force");
  }
  std::vector<Dataset> datasets;
  for (const auto& d : cfg.domains) {
    const auto path = out.data() / (d.name + ".json");
    if (!fs::exists(path)) throw MissingPrerequisite("dataset file " + path.string() + " is missing; re-run gen-data");
    datasets.push_back(read_dataset(path));
  }
  return datasets;
}

void cmd_gen_data(const ExperimentConfig& cfg, bool force) {
  const OutputLayout out{cfg.output_dir};
  refuse_overwrite(out.data() / "manifest.json", force, "datasets");
  const auto datasets = generate_datasets(cfg);
  json entries = json::array();
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    const auto& ds = datasets[i];
    const auto manifest = write_dataset(ds, out.data());
    const auto counts = ds.class_counts();
    entries.push_back({{"name", ds.name},
                       {"domain_id", ds.domain_id},
                       {"target", static_cast<int>(i) == cfg.target_index},
                       {"manifest", manifest.filename().string()},
                       {"class_counts", {counts[0], counts[1]}},
                       {"payload_sha256", sha256_file(out.data() / (ds.name + ".bin"))}});
  }
  write_json(out.data() / "manifest.json", {{"config", config_to_json(cfg)}, {"datasets", entries}});
}

void cmd_train_teachers(const ExperimentConfig& cfg, bool force) {
  const OutputLayout out{cfg.output_dir};
  const auto datasets = load_datasets(cfg);
  refuse_overwrite(out.teachers() / "manifest.json", force, "teacher checkpoints");
  const auto fold = holdout_fold(cfg, datasets);
  auto set = train_teacher_set(cfg, fold, cfg.jobs);
  const json config = config_to_json(cfg);

  json entries = json::array();
  std::vector<ModelResult> results;
  auto persist = [&](TeacherModel& t, const std::string& kind, const TrainingLog& log) {
    t.metadata["config"] = config;
    t.metadata["fold_seed"] = fold.seed;
    save_teacher(t, out.teachers() / t.name());
    entries.push_back({{"name", t.name()},
                       {"kind", kind},
                       {"checkpoint", t.name() + ".json"},
                       {"checksum", t.checksum()},
                       {"log", training_log_json(log)}});
    results.push_back(evaluate_teacher(t, kind, fold));
  };
  for (std::size_t j = 0; j < set.teachers.size(); ++j) persist(*set.teachers[j], "teacher", set.logs[j]);
  if (set.da_teacher) persist(*set.da_teacher, "da_teacher", set.da_log);
  write_json(out.teachers() / "manifest.json", {{"config", config}, {"teachers", entries}});
  const std::vector<FoldData> folds{fold};
  const auto report = make_report("teachers", cfg, folds, std::move(results));
  write_report(out.reports() / "teachers.json", report);
  write_report_csv(out.reports() / "teachers.csv", {report});
}

TeacherSet load_teacher_set(const ExperimentConfig& cfg) {
  const OutputLayout out{cfg.output_dir};
  const auto manifest_path = out.teachers() / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw MissingPrerequisite("no teacher checkpoints under " + out.teachers().string() + "; run train-teachers first");
  }
  TeacherSet set;
  for (int s : cfg.source_indices()) {
    const auto stem = out.teachers() / ("T_" + cfg.domains[static_cast<std::size_t>(s)].name);
    if (!fs::exists(checkpoint_file(stem))) throw MissingPrerequisite("teacher checkpoint " + stem.string() + " is missing");
    set.teachers.push_back(load_teacher(stem));
    set.logs.emplace_back();
  }
  if (cfg.source_indices().size() >= 2) {
    const auto stem = out.teachers() / "T_DA";
    if (!fs::exists(checkpoint_file(stem))) throw MissingPrerequisite("teacher checkpoint " + stem.string() + " is missing");
    set.da_teacher = std::dynamic_pointer_cast<DATeacher>(load_teacher(stem));
    if (!set.da_teacher) throw std::runtime_error(stem.string() + " is not a domain-adaptation teacher");
  }
  return set;
}

void cmd_train_student(const ExperimentConfig& cfg, bool force) {
  const OutputLayout out{cfg.output_dir};
  const auto datasets = load_datasets(cfg);
  const auto teachers = load_teacher_set(cfg);
  refuse_overwrite(out.students() / "manifest.json", force, "student checkpoints");
  const auto fold = holdout_fold(cfg, datasets);
  const auto bank = teachers.bank();
  const auto checksums_before = bank.checksums();
  const json config = config_to_json(cfg);

  std::vector<StudentRun> runs(cfg.labelled_sizes.size());
  parallel_for(runs.size(), cfg.jobs, [&](std::size_t i) {
    runs[i] = run_student(cfg, fold, bank, default_student_spec(cfg, cfg.labelled_sizes[i]));
  });
  if (bank.checksums() != checksums_before) throw std::logic_error("teacher parameters changed during student training");

  json entries = json::array();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const int n = cfg.labelled_sizes[i];
    auto& run = runs[i];
    json prior = json::array();
    for (const auto& e : run.prior_history) {
      prior.push_back({{"epoch", e.epoch},
                       {"distill_loss", e.distill_loss},
                       {"query_bce_student", e.query_bce_theta},
                       {"query_bce_aggregator", e.query_bce_phi}});
    }
    json finetune = json::array();
    for (const auto& e : run.finetune_history) {
      finetune.push_back({{"epoch", e.epoch}, {"bce", e.bce}, {"labelled_accuracy", e.labelled_accuracy}});
    }
    const json meta = {{"config", config},
                       {"settings", spec_json(default_student_spec(cfg, n))},
                       {"bank", run.bank_names},
                       {"bank_checksums", bank.checksums()},
                       {"fold_seed", fold.seed},
                       {"prior_history", prior},
                       {"finetune_history", finetune}};
    save_student(run.student, out.students() / student_stem(n), meta);
    nn::ParameterSet<float> agg_params;
    run.aggregator.collect(agg_params);
    save_checkpoint(agg_params, out.students() / aggregator_stem(n),
                    {{"kind", "aggregator"}, {"aggregator", aggregator_config_json(run.aggregator.config())},
                     {"config", config}, {"bank", run.bank_names}});
    entries.push_back({{"labelled_size", n},
                       {"checkpoint", student_stem(n) + ".json"},
                       {"aggregator", aggregator_stem(n) + ".json"},
                       {"encoder_checksum", run.student.encoder_checksum()},
                       {"classifier_checksum", run.student.classifier_checksum()}});
  }
  write_json(out.students() / "manifest.json", {{"config", config}, {"students", entries}});
}

RunReport cmd_evaluate(const ExperimentConfig& cfg) {
  const OutputLayout out{cfg.output_dir};
  const auto datasets = load_datasets(cfg);
  const auto teachers = load_teacher_set(cfg);
  const auto fold = holdout_fold(cfg, datasets);
  std::vector<ModelResult> results;
  for (const auto& t : teachers.teachers) results.push_back(evaluate_teacher(*t, "teacher", fold));
  if (teachers.da_teacher) results.push_back(evaluate_teacher(*teachers.da_teacher, "da_teacher", fold));
  for (int n : cfg.labelled_sizes) {
    const auto stem = out.students() / student_stem(n);
    if (!fs::exists(checkpoint_file(stem))) {
      throw MissingPrerequisite("no trained student for labelled size " + std::to_string(n) + " (" +
                                checkpoint_file(stem).string() + "); run train-student first");
    }
    const auto meta = read_checkpoint_metadata(stem);
    const auto student = load_student(stem);
    results.push_back(evaluate_student(student, default_student_spec(cfg, n),
                                       meta.at("bank").get<std::vector<std::string>>(), fold));
  }
  const std::vector<FoldData> folds{fold};
  auto report = make_report("evaluate", cfg, folds, std::move(results));
  write_report(out.reports() / "evaluate.json", report);
  write_report_csv(out.reports() / "evaluate.csv", {report});
  return report;
}

std::vector<RunReport> cmd_ablate(const ExperimentConfig& cfg) {
  const OutputLayout out{cfg.output_dir};
  const auto datasets = load_datasets(cfg);
  const std::vector<TeacherSet> teachers{load_teacher_set(cfg)};
  const std::vector<FoldData> folds{holdout_fold(cfg, datasets)};
  auto reports = run_ablation_suite(cfg, folds, teachers);
  for (const auto& r : reports) {
    write_report(out.reports() / (r.experiment + ".json"), r);
  }
  write_report_csv(out.reports() / "ablation.csv", reports);
  return reports;
}

void cmd_export_embeddings(const ExperimentConfig& cfg) {
  const OutputLayout out{cfg.output_dir};
  const auto datasets = load_datasets(cfg);
  const auto teachers = load_teacher_set(cfg);
  json files = json::array();
  auto record = [&](const fs::path& p) { files.push_back(fs::relative(p, out.embeddings()).generic_string()); };
  for (const auto& ds : datasets) {
    for (const auto& t : teachers.teachers) {
      const auto p = out.embeddings() / t->name() / (ds.name + ".csv");
      export_embeddings(*t, ds, p);
      record(p);
    }
    if (teachers.da_teacher) {
      const auto p = out.embeddings() / "T_DA" / (ds.name + ".csv");
      export_embeddings(*teachers.da_teacher, ds, p);
      record(p);
    }
  }
  const auto full_bank = teachers.bank();
  for (int n : cfg.labelled_sizes) {
    const auto stem = out.students() / student_stem(n);
    if (!fs::exists(checkpoint_file(stem))) continue;
    const auto student = load_student(stem);
    const auto agg_stem = out.students() / aggregator_stem(n);
    const auto agg_meta = read_checkpoint_metadata(agg_stem);
    Aggregator<float> aggregator(aggregator_config_from_json(agg_meta.at("aggregator")));
    nn::ParameterSet<float> agg_params;
    aggregator.collect(agg_params);
    load_checkpoint(agg_params, agg_stem);
    const auto bank = apply_ablation(full_bank, default_student_spec(cfg, n).flags);
    for (const auto& ds : datasets) {
      const auto p = out.embeddings() / student_stem(n) / (ds.name + ".csv");
      export_embeddings(student, ds, p);
      record(p);
      const auto q = out.embeddings() / ("e_kd_L" + std::to_string(n)) / (ds.name + ".csv");
      export_embeddings(bank, aggregator, ds, q);
      record(q);
    }
  }
  write_json(out.embeddings() / "manifest.json", {{"config", config_to_json(cfg)}, {"files", files}});
}

RunReport cmd_cv(const ExperimentConfig& cfg, int folds) {
  const OutputLayout out{cfg.output_dir};
  auto report = run_cv(cfg, folds);
  write_report(out.reports() / "cv.json", report);
  write_report_csv(out.reports() / "cv.csv", {report});
  return report;
}

int run_command(const std::string& command, const CommandOptions& opts, std::ostream& err) {
  ExperimentConfig cfg;
  try {
    cfg = effective_config(opts);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  const OutputLayout out{cfg.output_dir};
  const fs::path marker = out.root / (command + ".incomplete");
  const auto start = std::chrono::steady_clock::now();
  try {
    fs::create_directories(out.root);
    if (command == "gen-data") {
      cmd_gen_data(cfg, opts.force);
    } else if (command == "train-teachers") {
      cmd_train_teachers(cfg, opts.force);
    } else if (command == "train-student") {
      cmd_train_student(cfg, opts.force);
    } else if (command == "evaluate") {
      cmd_evaluate(cfg);
    } else if (command == "ablate") {
      cmd_ablate(cfg);
    } else if (command == "export-embeddings") {
      cmd_export_embeddings(cfg);
    } else if (command == "cv") {
      cmd_cv(cfg, opts.folds.value_or(cfg.folds));
    } else {
      err << "unknown command '" << command << "'\n";
      return kExitConfig;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const MissingPrerequisite& e) {
    err << "missing prerequisite: " << e.what() << '\n';
    return kExitMissing;
  } catch (const OutputExists& e) {
    err << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << command << " failed: " << e.what() << '\n';
    try {
      std::ofstream(marker) << e.what() << '\n';
      append_log(out, command + " FAILED: " + e.what());
    } catch (...) {
    }
    return kExitRuntime;
  }
  std::error_code ec;
  fs::remove(marker, ec);
  try {
    write_json(out.root / "effective_config.json", config_to_json(cfg));
  } catch (const std::exception& e) {
    err << "warning: " << e.what() << '\n';
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ostringstream line;
  line << command << " ok seed=" << cfg.seed << " jobs=" << cfg.jobs << " wall_clock_s=" << std::fixed
       << std::setprecision(2) << seconds;
  append_log(out, line.str());
  return kExitOk;
}

}  // namespace mtms
