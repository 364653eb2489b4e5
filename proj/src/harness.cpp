#include "mtms/harness.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "mtms/batching.hpp"
#include "mtms/phantom.hpp"

namespace mtms {

using nlohmann::json;

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  const auto workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<Dataset> generate_datasets(const ExperimentConfig& cfg) {
  std::vector<Dataset> out(cfg.domains.size());
  parallel_for(cfg.domains.size(), cfg.jobs, [&](std::size_t i) {
    out[i] = build_domain_dataset(cfg.domains[i], cfg.corruption, cfg.samples_per_class,
                                  derive_seed(cfg.seed, Stream::kPhantom, i));
  });
  return out;
}

namespace {

FoldData make_fold(const ExperimentConfig& cfg, std::span<const Dataset> datasets, const std::vector<SplitSpec>& splits,
                   int fold_id) {
  if (datasets.size() != cfg.domains.size()) throw std::invalid_argument("fold: dataset count differs from config");
  FoldData f;
  f.fold_id = fold_id;
  f.seed = cfg.seed + static_cast<std::uint64_t>(fold_id);
  f.target_index = cfg.target_index;
  f.splits = splits;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    f.train.push_back(subset(datasets[i], splits[i].train));
    f.test.push_back(subset(datasets[i], splits[i].test));
  }
  return f;
}

ModelResult evaluate_on_fold(const std::string& name, const std::string& kind, const FoldData& fold,
                             const std::function<std::vector<Prediction>(std::span<const Sample>)>& predict) {
  ModelResult r;
  r.model = name;
  r.kind = kind;
  for (std::size_t i = 0; i < fold.test.size(); ++i) {
    const auto& ds = fold.test[i];
    DatasetResult d;
    d.dataset = ds.name;
    d.target = static_cast<int>(i) == fold.target_index;
    d.folds.push_back(evaluate_predictions(predict(ds.samples), ds.samples));
    r.datasets.push_back(std::move(d));
  }
  return r;
}

std::string join_indices(const std::vector<int>& v) {
  std::string s;
  for (int i : v) s += (s.empty() ? "" : "_") + std::to_string(i);
  return s;
}

}  // namespace

FoldData holdout_fold(const ExperimentConfig& cfg, std::span<const Dataset> datasets) {
  std::vector<SplitSpec> splits;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    splits.push_back(split_dataset(datasets[i], cfg.test_fraction, derive_seed(cfg.seed, Stream::kSplit, i)));
  }
  return make_fold(cfg, datasets, splits, 0);
}

std::vector<FoldData> cv_folds(const ExperimentConfig& cfg, std::span<const Dataset> datasets, int k) {
  if (k < 2) throw std::invalid_argument("cv_folds: k must be at least 2");
  std::vector<std::vector<SplitSpec>> per_domain;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    per_domain.push_back(make_kfold(datasets[i], k, derive_seed(cfg.seed, Stream::kFold, i)));
  }
  std::vector<FoldData> out;
  for (int f = 0; f < k; ++f) {
    std::vector<SplitSpec> splits;
    for (const auto& d : per_domain) splits.push_back(d[static_cast<std::size_t>(f)]);
    out.push_back(make_fold(cfg, datasets, splits, f));
  }
  return out;
}

TeacherBank TeacherSet::bank() const {
  std::vector<std::shared_ptr<const FrozenTeacher>> members(teachers.begin(), teachers.end());
  return TeacherBank(std::move(members), da_teacher);
}

TeacherSet train_teacher_set(const ExperimentConfig& cfg, const FoldData& fold, int jobs) {
  const auto sources = cfg.source_indices();
  const std::size_t n = sources.size();
  TeacherSet set;
  set.teachers.resize(n);
  set.logs.resize(n);
  const bool with_da = n >= 2;
  parallel_for(n + (with_da ? 1 : 0), jobs, [&](std::size_t j) {
    TeacherTrainConfig tc = cfg.teacher;
    tc.seed = derive_seed(fold.seed, Stream::kTeacherInit, j);
    if (j < n) {
      auto trained = train_teacher(fold.train[static_cast<std::size_t>(sources[j])], tc, cfg.model);
      set.teachers[j] = std::make_shared<TeacherModel>(std::move(trained.model));
      set.logs[j] = std::move(trained.log);
    } else {
      std::vector<Dataset> src;
      for (int s : sources) src.push_back(fold.train[static_cast<std::size_t>(s)]);
      auto trained = train_da_teacher(src, tc, cfg.model);
      set.da_teacher = std::make_shared<DATeacher>(std::move(trained.model));
      set.da_log = std::move(trained.log);
    }
  });
  return set;
}

TargetPartition target_partition(const FoldData& fold, int labelled_size) {
  if (labelled_size < 2 || labelled_size % 2 != 0) {
    throw std::invalid_argument("labelled size must be even and >= 2, got " + std::to_string(labelled_size));
  }
  return select_labelled_subset(fold.target_train(), labelled_size / 2, derive_seed(fold.seed, Stream::kLabelled, 0));
}

StudentSpec default_student_spec(const ExperimentConfig& cfg, int labelled_size) {
  StudentSpec s;
  s.name = "student";
  s.labelled_size = labelled_size;
  s.flags = cfg.ablation;
  s.prior = cfg.prior;
  s.finetune = cfg.finetune;
  return s;
}

json spec_json(const StudentSpec& s) {
  return {{"labelled_size", s.labelled_size},
          {"exclude_da_teacher", s.flags.exclude_da_teacher},
          {"exclude_filter", s.flags.exclude_filter},
          {"mask_da_teacher", s.flags.mask_da_teacher},
          {"teacher_subset", s.flags.teacher_subset},
          {"prior_epochs", s.prior.epochs},
          {"prior_batch_size", s.prior.batch_size},
          {"prior_learning_rate", s.prior.learning_rate},
          {"query_batch", s.prior.query_batch},
          {"finetune_epochs", s.finetune.epochs},
          {"finetune_batch_size", s.finetune.batch_size},
          {"finetune_learning_rate", s.finetune.learning_rate}};
}

StudentRun run_student(const ExperimentConfig& cfg, const FoldData& fold, const TeacherBank& bank,
                       const StudentSpec& spec) {
  const auto part = target_partition(fold, spec.labelled_size);
  return train_student(bank, part, cfg.model, cfg.aggregator, spec.prior, spec.finetune, spec.flags, fold.seed);
}

ModelResult evaluate_teacher(const FrozenTeacher& teacher, const std::string& kind, const FoldData& fold) {
  return evaluate_on_fold(teacher.name(), kind, fold,
                          [&](std::span<const Sample> s) { return predict_samples(teacher, s); });
}

ModelResult evaluate_student(const StudentModel& student, const StudentSpec& spec,
                             const std::vector<std::string>& bank_names, const FoldData& fold) {
  auto r = evaluate_on_fold(spec.name, "student", fold,
                            [&](std::span<const Sample> s) { return student_predict_samples(student, s); });
  r.labelled_size = spec.labelled_size;
  r.settings = spec_json(spec);
  r.settings["bank"] = bank_names;
  return r;
}

void merge_fold(std::vector<ModelResult>& into, const std::vector<ModelResult>& fold_results) {
  if (into.empty()) {
    into = fold_results;
    return;
  }
  if (into.size() != fold_results.size()) throw std::logic_error("merge_fold: model lists differ between folds");
  for (std::size_t m = 0; m < into.size(); ++m) {
    if (into[m].model != fold_results[m].model || into[m].datasets.size() != fold_results[m].datasets.size()) {
      throw std::logic_error("merge_fold: model " + into[m].model + " differs between folds");
    }
    for (std::size_t d = 0; d < into[m].datasets.size(); ++d) {
      const auto& add = fold_results[m].datasets[d].folds;
      into[m].datasets[d].folds.insert(into[m].datasets[d].folds.end(), add.begin(), add.end());
    }
  }
}

RunReport make_report(const std::string& experiment, const ExperimentConfig& cfg, std::span<const FoldData> folds,
                      std::vector<ModelResult> models) {
  RunReport r;
  r.experiment = experiment;
  r.config = config_to_json(cfg);
  r.seed = cfg.seed;
  for (const auto& f : folds) r.fold_seeds.push_back(f.seed);
  r.models = std::move(models);
  finalize(r);
  return r;
}

RunReport run_cv(const ExperimentConfig& cfg, int k) {
  const auto start = std::chrono::steady_clock::now();
  const auto datasets = generate_datasets(cfg);
  const auto folds = cv_folds(cfg, datasets, k);
  std::vector<std::vector<ModelResult>> per_fold(folds.size());
  parallel_for(folds.size(), cfg.jobs, [&](std::size_t f) {
    const auto& fold = folds[f];
    const auto teachers = train_teacher_set(cfg, fold);
    auto& out = per_fold[f];
    for (const auto& t : teachers.teachers) out.push_back(evaluate_teacher(*t, "teacher", fold));
    if (teachers.da_teacher) out.push_back(evaluate_teacher(*teachers.da_teacher, "da_teacher", fold));
    const auto bank = teachers.bank();
    for (int n : cfg.labelled_sizes) {
      const auto spec = default_student_spec(cfg, n);
      const auto run = run_student(cfg, fold, bank, spec);
      out.push_back(evaluate_student(run.student, spec, run.bank_names, fold));
    }
  });
  std::vector<ModelResult> merged;
  for (const auto& f : per_fold) merge_fold(merged, f);
  auto report = make_report("cv", cfg, folds, std::move(merged));
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::vector<StudentSpec> ablation_cells(const ExperimentConfig& cfg, int source_count, bool has_da_teacher) {
  std::vector<StudentSpec> cells;
  auto base = default_student_spec(cfg, cfg.suite.labelled_size);
  base.flags = AblationFlags{};
  base.flags.mask_da_teacher = cfg.ablation.mask_da_teacher;
  auto add = [&](const std::string& name, const std::function<void(StudentSpec&)>& edit) {
    StudentSpec s = base;
    s.name = name;
    edit(s);
    cells.push_back(std::move(s));
  };
  add("full", [](StudentSpec&) {});
  add("exclude_F", [](StudentSpec& s) { s.flags.exclude_filter = true; });
  if (has_da_teacher) {
    add("exclude_T_DA", [](StudentSpec& s) { s.flags.exclude_da_teacher = true; });
    add("exclude_both", [](StudentSpec& s) {
      s.flags.exclude_da_teacher = true;
      s.flags.exclude_filter = true;
    });
  }
  auto subsets = cfg.suite.teacher_subsets;
  if (subsets.empty() && source_count >= 2) {
    for (int leave = 0; leave < source_count; ++leave) {
      std::vector<int> s;
      for (int i = 0; i < source_count; ++i) {
        if (i != leave) s.push_back(i);
      }
      subsets.push_back(std::move(s));
    }
  }
  for (const auto& subset : subsets) {
    add("teachers_" + join_indices(subset), [&](StudentSpec& s) { s.flags.teacher_subset = subset; });
  }
  for (const auto& [prior, finetune] : cfg.suite.epoch_grid) {
    add("epochs_" + std::to_string(prior) + "_" + std::to_string(finetune), [&](StudentSpec& s) {
      s.prior.epochs = prior;
      s.finetune.epochs = finetune;
    });
  }
  return cells;
}

std::vector<RunReport> run_ablation_suite(const ExperimentConfig& cfg, std::span<const FoldData> folds,
                                          std::span<const TeacherSet> teachers) {
  if (folds.empty() || folds.size() != teachers.size()) throw std::invalid_argument("ablation: folds/teachers mismatch");
  const auto start = std::chrono::steady_clock::now();
  const int sources = static_cast<int>(teachers.front().teachers.size());
  const auto cells = ablation_cells(cfg, sources, teachers.front().da_teacher != nullptr);
  const json full = spec_json(cells.front());

  std::vector<ModelResult> results(cells.size() * folds.size());
  parallel_for(results.size(), cfg.jobs, [&](std::size_t task) {
    const auto c = task / folds.size();
    const auto f = task % folds.size();
    const auto bank = teachers[f].bank();
    const auto run = run_student(cfg, folds[f], bank, cells[c]);
    results[task] = evaluate_student(run.student, cells[c], run.bank_names, folds[f]);
  });

  std::vector<RunReport> reports;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    std::vector<ModelResult> merged;
    for (std::size_t f = 0; f < folds.size(); ++f) merge_fold(merged, {results[c * folds.size() + f]});
    json differs = json::array();
    const json mine = spec_json(cells[c]);
    for (const auto& [key, value] : mine.items()) {
      if (full.at(key) != value) differs.push_back(key);
    }
    merged.front().settings["differs_from_full"] = differs;
    reports.push_back(make_report("ablation/" + cells[c].name, cfg, folds, std::move(merged)));
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (auto& r : reports) r.wall_clock_seconds = seconds;
  return reports;
}

std::vector<RunReport> run_ablation_suite(const ExperimentConfig& cfg) {
  const auto datasets = generate_datasets(cfg);
  const std::vector<FoldData> folds{holdout_fold(cfg, datasets)};
  const std::vector<TeacherSet> teachers{train_teacher_set(cfg, folds.front(), cfg.jobs)};
  return run_ablation_suite(cfg, folds, teachers);
}

void export_embeddings(const nn::Mat<float>& embeddings, std::span<const Sample> samples,
                       const std::filesystem::path& path) {
  if (embeddings.cols() != static_cast<Eigen::Index>(samples.size())) {
    throw std::invalid_argument("export_embeddings: " + std::to_string(embeddings.cols()) + " embeddings for " +
                                std::to_string(samples.size()) + " samples");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write embeddings to " + path.string());
  out << "sample_id,domain_id,label";
  for (Eigen::Index k = 0; k < embeddings.rows(); ++k) out << ",e" << k;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    out << s.id << ',' << s.domain_id << ',';
    if (s.label) out << *s.label;
    for (Eigen::Index k = 0; k < embeddings.rows(); ++k) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(embeddings(k, static_cast<Eigen::Index>(i))));
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing embeddings to " + path.string());
}

void export_embeddings(const FrozenTeacher& teacher, const Dataset& ds, const std::filesystem::path& path) {
  export_embeddings(embed_samples(teacher, ds.samples), ds.samples, path);
}

void export_embeddings(const StudentModel& student, const Dataset& ds, const std::filesystem::path& path) {
  nn::Mat<float> emb(student.embedding_dim(), static_cast<Eigen::Index>(ds.size()));
  constexpr std::size_t kChunk = 256;
  const std::span<const Sample> all(ds.samples);
  for (std::size_t i = 0; i < ds.size(); i += kChunk) {
    const auto n = std::min(kChunk, ds.size() - i);
    emb.middleCols(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n)) = student.embed(batch_map(all.subspan(i, n)));
  }
  export_embeddings(emb, ds.samples, path);
}

void export_embeddings(const TeacherBank& bank, const Aggregator<float>& aggregator, const Dataset& ds,
                       const std::filesystem::path& path) {
  const auto stacks = collect_embeddings(bank, std::span<const Sample>(ds.samples));
  nn::Mat<float> emb(bank.embedding_dim(), static_cast<Eigen::Index>(ds.size()));
  for (std::size_t i = 0; i < stacks.size(); ++i) emb.col(static_cast<Eigen::Index>(i)) = aggregate(aggregator, stacks[i]);
  export_embeddings(emb, ds.samples, path);
}

}  // namespace mtms
