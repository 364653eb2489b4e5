#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mtms/dataset.hpp"
#include "mtms/student.hpp"
#include "mtms/teacher.hpp"

namespace mtms {

/// Positive class is label 1 (artefact present).
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

struct MetricSet {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  bool operator==(const MetricSet&) const = default;
};

ConfusionCounts confusion(std::span<const int> predictions, std::span<const int> truths);

/// Zero denominators yield 0 for precision, recall and F1.
MetricSet metrics(const ConfusionCounts& c);

MetricSet evaluate_predictions(std::span<const Prediction> predictions, std::span<const Sample> samples);

/// Metrics over the test partition of `split` only.
MetricSet evaluate_model(const FrozenTeacher& model, const Dataset& ds, const SplitSpec& split);
MetricSet evaluate_model(const StudentModel& model, const Dataset& ds, const SplitSpec& split);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population (divisor n)
};

MeanStd mean_std(std::span<const double> values);

/// Element-wise mean and population std of each metric.
void summarize(std::span<const MetricSet> folds, MetricSet& mean, MetricSet& std);

}  // namespace mtms
