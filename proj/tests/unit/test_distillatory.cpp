#include <gtest/gtest.h>

#include <fstream>

#include "contracts.hpp"
#include "fixtures.hpp"
#include "mtms/distillatory.hpp"

namespace {

using namespace mtms;
using testkit::StubTeacher;

TEST(Filter, PropertySuiteOverRandomBanks) {
  const auto r = testkit::filter_contract(120, 77);
  EXPECT_GE(r.cases, 100);
  EXPECT_TRUE(r.ok) << r.detail;
}

TEST(Filter, DaTokenCanBeExemptFromMasking) {
  Rng rng(1);
  auto samples = testkit::coded_samples(4, 8, rng);
  std::vector<int> wrong, right;
  for (const auto& s : samples) {
    wrong.push_back(1 - *s.label);
    right.push_back(*s.label);
  }
  const TeacherBank bank({std::make_shared<StubTeacher>("a", 3, right), std::make_shared<StubTeacher>("b", 3, right)},
                         std::make_shared<StubTeacher>("da", 3, wrong));
  EXPECT_EQ(filter_mask(bank, samples[0]).keep, (std::vector<bool>{true, true, false}));
  FilterOptions keep_da;
  keep_da.mask_da_teacher = false;
  EXPECT_EQ(filter_mask(bank, samples[0], keep_da).keep, (std::vector<bool>{true, true, true}));
  samples[1].label.reset();
  EXPECT_THROW(filter_mask(bank, samples[1]), std::invalid_argument);
}

TEST(Bank, OrdersSlotsAndSelects) {
  const std::vector<int> any(4, 0);
  const TeacherBank bank({std::make_shared<StubTeacher>("t0", 3, any), std::make_shared<StubTeacher>("t1", 3, any),
                          std::make_shared<StubTeacher>("t2", 3, any)},
                         std::make_shared<StubTeacher>("da", 3, any));
  EXPECT_EQ(bank.token_count(), 4);
  EXPECT_TRUE(bank.has_da_teacher());
  EXPECT_EQ(bank.names(), (std::vector<std::string>{"t0", "t1", "t2", "da"}));
  EXPECT_EQ(bank.without_da_teacher().names(), (std::vector<std::string>{"t0", "t1", "t2"}));
  EXPECT_EQ(bank.select({2, 0}, true).names(), (std::vector<std::string>{"t2", "t0", "da"}));
  EXPECT_EQ(bank.select({1}, false).names(), (std::vector<std::string>{"t1"}));
  EXPECT_THROW(bank.select({3}, true), std::invalid_argument);
  EXPECT_THROW(bank.select({}, false), std::invalid_argument);
}

TEST(Bank, RejectsMixedWidthsAndUnfrozenTeachers) {
  const std::vector<int> any(4, 0);
  EXPECT_THROW(TeacherBank({std::make_shared<StubTeacher>("a", 3, any), std::make_shared<StubTeacher>("b", 4, any)}),
               std::invalid_argument);
  EXPECT_THROW(TeacherBank(std::vector<std::shared_ptr<const FrozenTeacher>>{}), std::invalid_argument);
  ModelConfig cfg;
  cfg.encoder.channels = {2};
  cfg.encoder.embedding_dim = 3;
  auto open = std::make_shared<TeacherModel>("open", cfg);
  EXPECT_THROW(TeacherBank({open}), std::invalid_argument);
}

TEST(Bank, StacksHoldOneColumnPerSlot) {
  Rng rng(2);
  const auto samples = testkit::coded_samples(3, 8, rng);
  const std::vector<int> any(3, 0);
  const TeacherBank bank({std::make_shared<StubTeacher>("a", 4, any, 1), std::make_shared<StubTeacher>("b", 4, any, 2)});
  const auto stacks = collect_embeddings(bank, samples);
  ASSERT_EQ(stacks.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(stacks[i].rows(), 4);
    EXPECT_EQ(stacks[i].cols(), 2);
    EXPECT_EQ(stacks[i], collect_embeddings(bank, samples[i].image));
    EXPECT_EQ(stacks[i].col(0), embed(bank.member(0), samples[i].image));
  }
}

TEST(Filter, AuditListsDecisions) {
  Rng rng(3);
  const auto samples = testkit::coded_samples(3, 8, rng);
  std::vector<int> right;
  for (const auto& s : samples) right.push_back(*s.label);
  const TeacherBank bank({std::make_shared<StubTeacher>("a", 2, right)});
  const auto masks = filter_masks(bank, samples);
  const auto path = testkit::scratch_dir("audit") / "mask.csv";
  write_mask_audit(path, bank, samples, masks);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "sample_id,label,a,fallback");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 3);
}

}  // namespace

namespace {

TEST(Filter, KeptTokensDoReachTheAggregate) {
  Rng rng(4);
  const auto samples = testkit::coded_samples(1, 8, rng);
  const std::vector<int> right{*samples[0].label};
  const TeacherBank bank({std::make_shared<StubTeacher>("a", 4, right, 1), std::make_shared<StubTeacher>("b", 4, right, 2)});
  AggregatorConfig cfg;
  cfg.embedding_dim = 4;
  cfg.model_dim = 8;
  cfg.heads = 2;
  cfg.ff_dim = 8;
  cfg.slots = 2;
  Aggregator<float> agg(cfg);
  agg.init(rng);
  const auto stack = collect_embeddings(bank, samples[0].image);
  const auto mask = filter_mask(bank, samples[0]);
  EmbeddingStack moved = stack;
  moved.col(1).array() += 0.5f;
  EXPECT_FALSE(testkit::bit_equal(aggregate(agg, stack, &mask), aggregate(agg, moved, &mask)));
}

}  // namespace
