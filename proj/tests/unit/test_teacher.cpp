#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "mtms/batching.hpp"
#include "mtms/harness.hpp"
#include "mtms/phantom.hpp"
#include "mtms/teacher.hpp"

namespace {

using namespace mtms;

ModelConfig small_model() {
  ModelConfig m;
  m.encoder.channels = {4};
  m.encoder.embedding_dim = 8;
  m.classifier_hidden = 8;
  m.domain_hidden = 8;
  return m;
}

Dataset domain(int id, double gamma, double background, int per_class = 20) {
  DomainParams p;
  p.name = "d" + std::to_string(id);
  p.domain_id = id;
  p.image_size = 16;
  p.gamma = gamma;
  p.background = background;
  p.ellipses_min = 0;
  p.ellipses_max = 1;
  return build_domain_dataset(p, CorruptionRanges{}, per_class, 100 + static_cast<std::uint64_t>(id));
}

TeacherTrainConfig quick(int epochs = 2) {
  TeacherTrainConfig c;
  c.epochs = epochs;
  c.batch_size = 8;
  c.seed = 5;
  return c;
}

TEST(Teacher, TrainingIsDeterministicAndFreezes) {
  const Dataset ds = domain(0, 1.0, 0.0);
  auto a = train_teacher(ds, quick(), small_model());
  auto b = train_teacher(ds, quick(), small_model());
  EXPECT_TRUE(a.model.frozen());
  EXPECT_EQ(a.model.checksum(), b.model.checksum());
  EXPECT_EQ(a.log.size(), 2u);
  auto c = train_teacher(ds, [] { auto q = quick(); q.seed = 6; return q; }(), small_model());
  EXPECT_NE(a.model.checksum(), c.model.checksum());
}

TEST(Teacher, EmbeddingNeverMutatesParameters) {
  const Dataset ds = domain(0, 1.0, 0.0);
  auto t = train_teacher(ds, quick(1), small_model());
  const auto before = t.model.checksum();
  const auto e = embed_samples(t.model, ds.samples);
  EXPECT_EQ(e.rows(), 8);
  EXPECT_EQ(e.cols(), static_cast<Eigen::Index>(ds.size()));
  predict_samples(t.model, ds.samples);
  EXPECT_EQ(t.model.checksum(), before);
  EXPECT_EQ(embed(t.model, ds.samples[3].image), e.col(3));
}

TEST(Teacher, UnfrozenTeacherRefusesToServe) {
  TeacherModel t("open", small_model());
  Rng rng(1);
  t.init(rng);
  const Dataset ds = domain(0, 1.0, 0.0, 2);
  EXPECT_THROW(embed(t, ds.samples[0].image), std::logic_error);
  const auto dir = testkit::scratch_dir("unfrozen");
  EXPECT_THROW(save_teacher(t, dir / "t"), std::logic_error);
}

TEST(Teacher, RejectsSingleClassOrUnlabelledData) {
  Dataset ds = domain(0, 1.0, 0.0, 4);
  Dataset one_class = subset(ds, {0, 1, 2});
  EXPECT_THROW(train_teacher(one_class, quick(), small_model()), std::invalid_argument);
  ds.samples[0].label.reset();
  EXPECT_THROW(train_teacher(ds, quick(), small_model()), std::invalid_argument);
}

TEST(Teacher, CheckpointRoundTrip) {
  const Dataset ds = domain(0, 1.0, 0.0);
  auto t = train_teacher(ds, quick(1), small_model());
  t.model.metadata["note"] = "x";
  const auto dir = testkit::scratch_dir("teacher_ckpt");
  save_teacher(t.model, dir / "t");
  const auto back = load_teacher(dir / "t");
  EXPECT_TRUE(back->frozen());
  EXPECT_EQ(back->checksum(), t.model.checksum());
  EXPECT_EQ(back->name(), t.model.name());
  EXPECT_EQ(back->metadata.at("note"), "x");
  const auto a = embed_samples(t.model, ds.samples);
  EXPECT_EQ(embed_samples(*back, ds.samples), a);
}

TEST(Teacher, BatchNormRecalibrationUsesEpochBatches) {
  const Dataset ds = domain(0, 1.0, 0.0, 8);
  TeacherModel t("t", small_model());
  Rng rng(2);
  t.init(rng);
  const std::vector<std::vector<std::size_t>> batches{{0, 1, 2, 3}, {4, 5, 6, 7}};
  recalibrate_batchnorm(t.encoder(), ds.samples, batches);
  const auto first = t.checksum();
  recalibrate_batchnorm(t.encoder(), ds.samples, batches);
  EXPECT_EQ(t.checksum(), first);  // an average, not a moving estimate
}

TEST(DaTeacher, NeedsTwoDomainsAndTrainsBothHeads) {
  const std::vector<Dataset> one{domain(0, 1.0, 0.0)};
  EXPECT_THROW(train_da_teacher(one, quick(), small_model()), std::invalid_argument);
  const std::vector<Dataset> two{domain(0, 0.6, 0.0), domain(1, 1.0, 0.3)};
  auto da = train_da_teacher(two, quick(), small_model());
  EXPECT_TRUE(da.model.frozen());
  EXPECT_EQ(da.model.domains(), 2);
  ASSERT_EQ(da.log.size(), 2u);
  EXPECT_TRUE(da.log.back().domain_loss.has_value());
  const auto lp = da.model.domain_log_probs(batch_map(two[0].samples));
  EXPECT_EQ(lp.rows(), 2);
  EXPECT_LT((lp.array().exp().colwise().sum() - 1.0f).abs().maxCoeff(), 1e-4f);

  const auto dir = testkit::scratch_dir("da_ckpt");
  save_teacher(da.model, dir / "da");
  const auto back = std::dynamic_pointer_cast<DATeacher>(load_teacher(dir / "da"));
  ASSERT_TRUE(back);
  EXPECT_EQ(back->checksum(), da.model.checksum());
}

TEST(DaTeacher, ZeroLambdaLeavesTheLabelPathUnchanged) {
  // With lambda = 0 the reversed gradient vanishes, so the encoder and label
  // head follow label BCE alone regardless of what the domain head learns.
  const std::vector<Dataset> two{domain(0, 0.6, 0.0), domain(1, 1.0, 0.3)};
  auto cfg = quick(1);
  cfg.grl_lambda = 0.0;
  auto model = small_model();
  auto a = train_da_teacher(two, cfg, model);
  model.domain_hidden = 4;
  auto b = train_da_teacher(two, cfg, model);
  const auto ea = embed_samples(a.model, two[0].samples);
  const auto eb = embed_samples(b.model, two[0].samples);
  EXPECT_LT((ea - eb).cwiseAbs().maxCoeff(), 1e-5f);
}

}  // namespace
