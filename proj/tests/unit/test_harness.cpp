#include <gtest/gtest.h>

#include <atomic>
#include <fstream>

#include "fixtures.hpp"
#include "mtms/harness.hpp"

namespace {

using namespace mtms;

TEST(Harness, ParallelForVisitsEveryIndexOnce) {
  for (int jobs : {1, 2, 5}) {
    std::vector<std::atomic<int>> hits(37);
    parallel_for(hits.size(), jobs, [&](std::size_t i) { ++hits[i]; });
    for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
  parallel_for(0, 3, [](std::size_t) { FAIL(); });
}

TEST(Harness, ParallelForRethrows) {
  EXPECT_THROW(parallel_for(8, 3,
                            [](std::size_t i) {
                              if (i == 5) throw std::runtime_error("boom");
                            }),
               std::runtime_error);
}

TEST(Harness, DatasetsAreDeterministicAndBalanced) {
  const auto cfg = testkit::tiny_config();
  const auto a = generate_datasets(cfg);
  const auto b = generate_datasets(cfg);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t d = 0; d < a.size(); ++d) {
    EXPECT_EQ(a[d].name, cfg.domains[d].name);
    EXPECT_EQ(a[d].samples.size(), 40u);
    for (std::size_t i = 0; i < a[d].samples.size(); ++i) {
      EXPECT_TRUE(a[d].samples[i].image.isApprox(b[d].samples[i].image, 0.0f));
    }
  }
}

TEST(Harness, FoldsCarrySeedPlusFoldId) {
  const auto cfg = testkit::tiny_config();
  const auto data = generate_datasets(cfg);
  EXPECT_EQ(holdout_fold(cfg, data).seed, cfg.seed);
  const auto folds = cv_folds(cfg, data, 3);
  ASSERT_EQ(folds.size(), 3u);
  std::vector<std::size_t> tested;
  for (int f = 0; f < 3; ++f) {
    EXPECT_EQ(folds[f].fold_id, f);
    EXPECT_EQ(folds[f].seed, cfg.seed + static_cast<std::uint64_t>(f));
    EXPECT_EQ(folds[f].target_index, 2);
    const auto& s = folds[f].splits[0];
    EXPECT_EQ(s.train.size() + s.test.size(), 40u);
    tested.insert(tested.end(), s.test.begin(), s.test.end());
  }
  std::sort(tested.begin(), tested.end());
  EXPECT_EQ(std::adjacent_find(tested.begin(), tested.end()), tested.end());
  EXPECT_EQ(tested.size(), 40u);
}

TEST(Harness, TargetPartitionsAreNestedAndBalanced) {
  const auto cfg = testkit::tiny_config();
  const auto fold = holdout_fold(cfg, generate_datasets(cfg));
  const auto small = target_partition(fold, 4);
  const auto large = target_partition(fold, 8);
  ASSERT_EQ(small.labelled.size(), 4u);
  ASSERT_EQ(large.labelled.size(), 8u);
  int positives = 0;
  for (const auto& s : large.labelled) positives += *s.label;
  EXPECT_EQ(positives, 4);
  for (const auto& s : small.labelled) {
    EXPECT_TRUE(std::any_of(large.labelled.begin(), large.labelled.end(), [&](const Sample& l) { return l.id == s.id; }));
  }
  for (const auto& s : large.unlabelled) EXPECT_FALSE(s.label.has_value());
  EXPECT_EQ(large.labelled.size() + large.unlabelled.size(), fold.target_train().samples.size());
}

TEST(Harness, AblationCellsInSuiteOrder) {
  auto cfg = testkit::tiny_config();
  std::vector<std::string> names;
  for (const auto& c : ablation_cells(cfg, 2, true)) names.push_back(c.name);
  EXPECT_EQ(names, (std::vector<std::string>{"full", "exclude_F", "exclude_T_DA", "exclude_both", "teachers_1",
                                             "teachers_0", "epochs_1_1"}));
  const auto cells = ablation_cells(cfg, 2, true);
  EXPECT_TRUE(cells[3].flags.exclude_filter && cells[3].flags.exclude_da_teacher);
  EXPECT_EQ(cells[6].prior.epochs, 1);
  for (const auto& c : cells) EXPECT_EQ(c.labelled_size, 8);

  names.clear();
  for (const auto& c : ablation_cells(cfg, 1, false)) names.push_back(c.name);
  EXPECT_EQ(names, (std::vector<std::string>{"full", "exclude_F", "epochs_1_1"}));
}

TEST(Harness, CrossValidationIsByteReproducible) {
  auto cfg = testkit::tiny_config();
  cfg.labelled_sizes = {8};
  const RunReport a = run_cv(cfg, 2);
  EXPECT_TRUE(dump_report(a) == dump_report(run_cv(cfg, 2)));
  cfg.jobs = 2;
  const RunReport b = run_cv(cfg, 2);
  EXPECT_TRUE(a.models == b.models) << "results depend on the job count";
  EXPECT_EQ(a.fold_seeds, (std::vector<std::uint64_t>{11, 12}));
  ASSERT_NE(a.find("student", 8), nullptr);
  EXPECT_NE(a.find("T_DA"), nullptr);
  for (const auto& m : a.models) {
    ASSERT_EQ(m.datasets.size(), 3u);
    for (const auto& d : m.datasets) EXPECT_EQ(d.folds.size(), 2u);
  }
}

TEST(Harness, EmbeddingCsvLayout) {
  const auto dir = testkit::scratch_dir("harness_export");
  std::vector<Sample> samples(2);
  samples[0].id = 4;
  samples[0].domain_id = 1;
  samples[0].label = 1;
  samples[1].id = 9;
  samples[1].domain_id = 1;
  nn::Mat<float> e(3, 2);
  e << 0.5f, 1.0f, -2.0f, 0.25f, 0.0f, 3.0f;
  export_embeddings(e, samples, dir / "e.csv");
  std::ifstream in(dir / "e.csv");
  std::string header, r0, r1;
  std::getline(in, header);
  std::getline(in, r0);
  std::getline(in, r1);
  EXPECT_EQ(header, "sample_id,domain_id,label,e0,e1,e2");
  EXPECT_EQ(r0, "4,1,1,0.5,-2,0");
  EXPECT_EQ(r1, "9,1,,1,0.25,3");
  EXPECT_THROW(export_embeddings(e, std::span<const Sample>(samples).first(1), dir / "x.csv"), std::invalid_argument);
}

}  // namespace
