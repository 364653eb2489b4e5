#pragma once

#include <algorithm>
#include <cstring>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "mtms/batching.hpp"
#include "mtms/checkpoint.hpp"
#include "mtms/distillatory.hpp"
#include "mtms/harness.hpp"
#include "mtms/student.hpp"

namespace mtms::testkit {

struct ContractResult {
  bool ok = true;
  int cases = 0;
  std::string detail;

  void fail(const std::string& what) {
    if (ok) detail = what;
    ok = false;
  }
};

inline bool bit_equal(const Eigen::VectorXf& a, const Eigen::VectorXf& b) {
  return a.size() == b.size() && std::equal(a.data(), a.data() + a.size(), b.data(), [](float x, float y) {
           return std::memcmp(&x, &y, sizeof(float)) == 0;
         });
}

/// Random banks of scripted teachers and random labels. Checks per case:
///  - keep[j] is exactly "teacher j was right", with the all-wrong fallback;
///  - e_KD ignores any perturbation of masked tokens, bit for bit;
///  - an all-true mask gives the same bits as no mask.
inline ContractResult filter_contract(int cases, std::uint64_t seed) {
  ContractResult res;
  const float inf = std::numeric_limits<float>::infinity();
  for (int c = 0; c < cases; ++c) {
    Rng rng = make_rng(seed, Stream::kTest, static_cast<std::uint64_t>(c));
    const int n_teachers = static_cast<int>(uniform_int(rng, 1, 4));
    const bool with_da = n_teachers >= 2 && uniform(rng, 0.0, 1.0) < 0.5;
    const int dim = static_cast<int>(uniform_int(rng, 2, 8));
    const int n_samples = 6;
    auto samples = coded_samples(n_samples, 8, rng);
    // Every third case forces all teachers wrong on every sample.
    const bool all_wrong = c % 3 == 0;
    std::vector<std::shared_ptr<const FrozenTeacher>> teachers;
    std::vector<std::vector<int>> scripted;
    auto make = [&](const std::string& name, std::uint64_t salt) {
      std::vector<int> labels;
      for (const auto& s : samples) {
        labels.push_back(all_wrong ? 1 - *s.label : static_cast<int>(uniform_int(rng, 0, 1)));
      }
      scripted.push_back(labels);
      return std::make_shared<StubTeacher>(name, dim, labels, salt);
    };
    for (int j = 0; j < n_teachers; ++j) teachers.push_back(make("T" + std::to_string(j), static_cast<std::uint64_t>(j)));
    std::shared_ptr<const FrozenTeacher> da = with_da ? make("T_DA", 99) : nullptr;
    const TeacherBank bank(teachers, da);

    AggregatorConfig acfg;
    acfg.embedding_dim = dim;
    acfg.model_dim = 8;
    acfg.heads = static_cast<int>(uniform_int(rng, 1, 2));
    acfg.blocks = static_cast<int>(uniform_int(rng, 1, 2));
    acfg.ff_dim = 12;
    acfg.classifier_hidden = 6;
    acfg.slots = bank.token_count();
    Aggregator<float> agg(acfg);
    Rng init = make_rng(seed + 1, Stream::kAggregatorInit, static_cast<std::uint64_t>(c));
    agg.init(init);

    const auto masks = filter_masks(bank, samples);
    const auto stacks = collect_embeddings(bank, samples);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      ++res.cases;
      const auto& m = masks[i];
      const int label = *samples[i].label;
      bool any_right = false;
      for (int j = 0; j < bank.token_count(); ++j) any_right = any_right || scripted[static_cast<std::size_t>(j)][i] == label;
      std::ostringstream where;
      where << "case " << c << " sample " << i;
      if (m.fallback == any_right) res.fail(where.str() + ": fallback flag wrong");
      for (int j = 0; j < bank.token_count(); ++j) {
        const bool expect = !any_right || scripted[static_cast<std::size_t>(j)][i] == label;
        if (m.keep[static_cast<std::size_t>(j)] != expect) res.fail(where.str() + ": keep[" + std::to_string(j) + "] wrong");
      }
      if (filter_mask(bank, samples[i]).keep != m.keep) res.fail(where.str() + ": single and batched masks differ");

      const Eigen::VectorXf base = aggregate(agg, stacks[i], &m);
      for (int trial = 0; trial < 3; ++trial) {
        EmbeddingStack perturbed = stacks[i];
        for (int j = 0; j < bank.token_count(); ++j) {
          if (m.keep[static_cast<std::size_t>(j)]) continue;
          auto col = perturbed.col(j);
          if (trial == 0) col.setConstant(1e30f);
          else if (trial == 1) col.setConstant(std::numeric_limits<float>::quiet_NaN());
          else for (Eigen::Index k = 0; k < col.size(); ++k) col(k) = static_cast<float>(uniform(rng, -100.0, 100.0));
          if (trial == 1 && j % 2) col(0) = -inf;
        }
        if (!bit_equal(aggregate(agg, perturbed, &m), base)) res.fail(where.str() + ": masked token leaked into e_KD");
      }
      FilterMask all_true;
      all_true.keep.assign(static_cast<std::size_t>(bank.token_count()), true);
      if (!bit_equal(aggregate(agg, stacks[i], &all_true), aggregate(agg, stacks[i]))) {
        res.fail(where.str() + ": all-true mask differs from no mask");
      }
      if (m.fallback && !bit_equal(base, aggregate(agg, stacks[i]))) res.fail(where.str() + ": fallback differs from no mask");
    }
  }
  return res;
}

inline std::string aggregator_checksum(const Aggregator<float>& agg, bool classifier) {
  nn::ParameterSet<float> set;
  auto& mut = const_cast<Aggregator<float>&>(agg);  // collect() only takes addresses
  if (classifier) mut.collect_classifier(set);
  else mut.collect_aggregator(set);
  return parameter_checksum(set);
}

inline std::string classifier_checksum(const StudentModel& s) { return s.classifier_checksum(); }

/// Trains real (tiny) teachers, then runs a 3-epoch prior stage with an
/// observer and a fine-tune, asserting the update schedule:
///  - distillation batches change the student encoder and nothing else;
///  - c_theta, g_phi and c_phi change only in the epoch-end query pass, which
///    follows every distillation batch of its epoch;
///  - teacher checksums never change.
inline ContractResult schedule_contract(std::uint64_t seed) {
  ContractResult res;
  ExperimentConfig cfg = tiny_config();
  cfg.seed = seed;
  const auto datasets = generate_datasets(cfg);
  const auto fold = holdout_fold(cfg, datasets);
  const auto teachers = train_teacher_set(cfg, fold);
  const TeacherBank bank = teachers.bank();
  const auto teacher_sums = bank.checksums();
  auto check_teachers = [&](const std::string& when) {
    ++res.cases;
    if (bank.checksums() != teacher_sums) res.fail("teacher parameters changed " + when);
  };

  const auto target = target_partition(fold, 8);
  AggregatorConfig acfg = cfg.aggregator;
  acfg.embedding_dim = bank.embedding_dim();
  acfg.slots = bank.token_count();
  Aggregator<float> agg(acfg);
  Rng ar = make_rng(seed, Stream::kAggregatorInit);
  agg.init(ar);
  StudentModel student(cfg.model);
  Rng sr = make_rng(seed, Stream::kStudentInit);
  student.init(sr);

  PriorConfig pc = cfg.prior;
  pc.epochs = 3;
  pc.batch_size = 8;
  pc.query_batch = 4;
  pc.seed = seed;

  struct Snapshot {
    std::string encoder, classifier, agg, agg_cls;
  };
  auto snap = [&](const StudentModel& s, const Aggregator<float>& a) {
    return Snapshot{s.encoder_checksum(), s.classifier_checksum(), aggregator_checksum(a, false),
                    aggregator_checksum(a, true)};
  };
  Snapshot prev = snap(student, agg);
  int last_epoch = -1;
  bool in_query = false;
  int distill_batches = 0, query_batches = 0;
  bool head_moved = false, agg_moved = false;
  const std::size_t pool = target.labelled.size() + target.unlabelled.size();
  const int expected_distill = static_cast<int>(chunk(index_order(pool, nullptr), pc.batch_size, 2).size());

  auto observer = [&](const PriorProbe& p) {
    const Snapshot now = snap(p.student, p.aggregator);
    std::ostringstream where;
    where << "epoch " << p.epoch << " batch " << p.batch;
    if (p.phase == PriorPhase::kDistillBatch) {
      ++distill_batches;
      if (p.epoch != last_epoch) {
        if (last_epoch >= 0 && !in_query) res.fail(where.str() + ": epoch ended without a query pass");
        last_epoch = p.epoch;
        in_query = false;
      } else if (in_query) {
        res.fail(where.str() + ": distillation batch after the query pass");
      }
      if (now.encoder == prev.encoder) res.fail(where.str() + ": distillation did not update theta");
      if (now.classifier != prev.classifier) res.fail(where.str() + ": c_theta changed during distillation");
      if (now.agg != prev.agg) res.fail(where.str() + ": phi changed during distillation");
      if (now.agg_cls != prev.agg_cls) res.fail(where.str() + ": c_phi changed during distillation");
    } else {
      ++query_batches;
      if (p.epoch != last_epoch) res.fail(where.str() + ": query pass without distillation batches");
      in_query = true;
      head_moved = head_moved || now.classifier != prev.classifier;
      agg_moved = agg_moved || (now.agg != prev.agg && now.agg_cls != prev.agg_cls);
    }
    check_teachers("during " + where.str());
    ++res.cases;
    prev = now;
  };

  const PriorResult prior = prior_train(bank, agg, student, target, pc, true, {}, observer);
  if (prior.history.size() != 3) res.fail("expected 3 prior epochs, got " + std::to_string(prior.history.size()));
  if (distill_batches != 3 * expected_distill) {
    res.fail("expected " + std::to_string(3 * expected_distill) + " distillation batches, saw " +
             std::to_string(distill_batches));
  }
  if (query_batches != 3 * 2) res.fail("expected 2 query batches per epoch, saw " + std::to_string(query_batches));
  if (!head_moved) res.fail("c_theta never moved in the query pass");
  if (!agg_moved) res.fail("phi and c_phi never moved in the query pass");
  check_teachers("after the prior stage");

  FineTuneConfig fc = cfg.finetune;
  fc.seed = seed;
  std::vector<Sample> calib = target.labelled;
  calib.insert(calib.end(), target.unlabelled.begin(), target.unlabelled.end());
  const auto ft = fine_tune(prior.student, target.labelled, fc, calib);
  if (ft.history.size() != static_cast<std::size_t>(fc.epochs)) res.fail("fine-tune epoch count");
  check_teachers("after fine-tuning");

  const auto run = run_student(cfg, fold, bank, default_student_spec(cfg, 8));
  check_teachers("after a full student run");
  return res;
}

}  // namespace mtms::testkit

#include "mtms/metrics.hpp"

namespace mtms::testkit {

/// metrics() against a per-sample recount on random prediction/label vectors,
/// including single-class and all-correct/all-wrong configurations.
inline ContractResult metrics_contract(int cases, std::uint64_t seed, double tol = 1e-12) {
  ContractResult res;
  for (int c = 0; c < cases; ++c) {
    Rng rng = make_rng(seed, Stream::kTest, static_cast<std::uint64_t>(c));
    const int n = static_cast<int>(uniform_int(rng, 1, 300));
    const double p_pos = c % 10 == 0 ? 0.0 : c % 10 == 1 ? 1.0 : uniform(rng, 0.0, 1.0);
    const double p_flip = c % 7 == 0 ? 0.0 : c % 7 == 1 ? 1.0 : uniform(rng, 0.0, 1.0);
    std::vector<int> truth(static_cast<std::size_t>(n)), pred(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      truth[static_cast<std::size_t>(i)] = uniform(rng, 0.0, 1.0) < p_pos ? 1 : 0;
      pred[static_cast<std::size_t>(i)] =
          uniform(rng, 0.0, 1.0) < p_flip ? 1 - truth[static_cast<std::size_t>(i)] : truth[static_cast<std::size_t>(i)];
    }
    double correct = 0, pred_pos = 0, true_pos = 0, hits = 0;
    for (int i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      correct += pred[k] == truth[k];
      pred_pos += pred[k] == 1;
      true_pos += truth[k] == 1;
      hits += pred[k] == 1 && truth[k] == 1;
    }
    const double acc = correct / n;
    const double prec = pred_pos > 0 ? hits / pred_pos : 0.0;
    const double rec = true_pos > 0 ? hits / true_pos : 0.0;
    const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    const MetricSet m = metrics(confusion(pred, truth));
    ++res.cases;
    const double err = std::max({std::abs(m.accuracy - acc), std::abs(m.precision - prec), std::abs(m.recall - rec),
                                 std::abs(m.f1 - f1)});
    if (!(err <= tol)) res.fail("case " + std::to_string(c) + ": deviation " + std::to_string(err));
  }
  return res;
}

}  // namespace mtms::testkit
