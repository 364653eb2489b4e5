#include <gtest/gtest.h>

#include "gradient_suite.hpp"

namespace {

TEST(Gradients, EveryComponentMatchesCentralDifferences) {
  const auto rows = mtms::testkit::run_gradient_suite(20);
  EXPECT_GE(rows.size(), 23u);
  for (const auto& row : rows) {
    EXPECT_EQ(row.instances, 20);
    EXPECT_LT(row.max_rel_error, 1e-4) << row.component << " worst at " << row.worst;
  }
}

TEST(Gradients, CheckerDetectsAWrongGradient) {
  mtms::Rng rng(3);
  auto x = mtms::testkit::random_mat(3, 2, rng);
  std::vector<mtms::testkit::GradTarget> t{{"x", &x, 2.0 * x}};  // true gradient of sum(x^2)/2 is x
  const auto r = mtms::testkit::check_gradients([&] { return 0.5 * x.squaredNorm(); }, t);
  EXPECT_GT(r.max_rel_error, 0.1);
}

}  // namespace
