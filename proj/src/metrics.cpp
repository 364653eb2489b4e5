#include "mtms/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mtms {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::vector<Sample> test_samples(const Dataset& ds, const SplitSpec& split) {
  std::vector<Sample> out;
  out.reserve(split.test.size());
  for (std::size_t i : split.test) {
    if (i >= ds.size()) throw std::out_of_range("evaluate_model: test index out of range for " + ds.name);
    if (!ds.samples[i].label) {
      throw std::invalid_argument("evaluate_model: test sample " + std::to_string(ds.samples[i].id) + " of " + ds.name +
                                  " is unlabelled");
    }
    out.push_back(ds.samples[i]);
  }
  if (out.empty()) throw std::invalid_argument("evaluate_model: empty test partition for " + ds.name);
  return out;
}

}  // namespace

ConfusionCounts confusion(std::span<const int> predictions, std::span<const int> truths) {
  if (predictions.size() != truths.size()) {
    throw std::invalid_argument("confusion: " + std::to_string(predictions.size()) + " predictions vs " +
                                std::to_string(truths.size()) + " labels");
  }
  if (predictions.empty()) throw std::invalid_argument("confusion: nothing to evaluate");
  ConfusionCounts c;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const bool p = predictions[i] == 1;
    const bool t = truths[i] == 1;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

MetricSet metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw std::invalid_argument("metrics: empty confusion counts");
  MetricSet m;
  m.accuracy = ratio(c.tp + c.tn, c.total());
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  const double s = m.precision + m.recall;
  m.f1 = s > 0.0 ? 2.0 * m.precision * m.recall / s : 0.0;
  return m;
}

MetricSet evaluate_predictions(std::span<const Prediction> predictions, std::span<const Sample> samples) {
  if (predictions.size() != samples.size()) throw std::invalid_argument("evaluate_predictions: size mismatch");
  std::vector<int> pred, truth;
  pred.reserve(samples.size());
  truth.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].label) throw std::invalid_argument("evaluate_predictions: unlabelled sample");
    pred.push_back(predictions[i].label);
    truth.push_back(*samples[i].label);
  }
  return metrics(confusion(pred, truth));
}

MetricSet evaluate_model(const FrozenTeacher& model, const Dataset& ds, const SplitSpec& split) {
  const auto samples = test_samples(ds, split);
  return evaluate_predictions(predict_samples(model, samples), samples);
}

MetricSet evaluate_model(const StudentModel& model, const Dataset& ds, const SplitSpec& split) {
  const auto samples = test_samples(ds, split);
  return evaluate_predictions(student_predict_samples(model, samples), samples);
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean_std: no values");
  const auto n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / n;
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / n)};
}

void summarize(std::span<const MetricSet> folds, MetricSet& mean, MetricSet& std) {
  auto column = [&](double MetricSet::*field, double& m, double& s) {
    std::vector<double> v;
    v.reserve(folds.size());
    for (const auto& f : folds) v.push_back(f.*field);
    const auto r = mean_std(v);
    m = r.mean;
    s = r.std;
  };
  column(&MetricSet::accuracy, mean.accuracy, std.accuracy);
  column(&MetricSet::precision, mean.precision, std.precision);
  column(&MetricSet::recall, mean.recall, std.recall);
  column(&MetricSet::f1, mean.f1, std.f1);
}

}  // namespace mtms
