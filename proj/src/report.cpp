#include "mtms/report.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace mtms {

using nlohmann::json;

const ModelResult* RunReport::find(const std::string& model, int labelled_size) const {
  for (const auto& m : models) {
    if (m.model == model && (labelled_size < 0 || m.labelled_size == labelled_size)) return &m;
  }
  return nullptr;
}

void finalize(RunReport& report) {
  for (auto& m : report.models) {
    for (auto& d : m.datasets) {
      if (d.folds.empty()) throw std::logic_error("finalize: no folds for " + m.model + "/" + d.dataset);
      summarize(d.folds, d.mean, d.std);
    }
  }
}

json to_json(const MetricSet& m) {
  return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

MetricSet metric_set_from_json(const json& j) {
  return {j.at("accuracy").get<double>(), j.at("precision").get<double>(), j.at("recall").get<double>(),
          j.at("f1").get<double>()};
}

json to_json(const RunReport& r) {
  json models = json::array();
  for (const auto& m : r.models) {
    json datasets = json::array();
    for (const auto& d : m.datasets) {
      json folds = json::array();
      for (const auto& f : d.folds) folds.push_back(to_json(f));
      datasets.push_back({{"dataset", d.dataset},
                          {"target", d.target},
                          {"folds", folds},
                          {"mean", to_json(d.mean)},
                          {"std", to_json(d.std)}});
    }
    models.push_back({{"model", m.model},
                      {"kind", m.kind},
                      {"labelled_size", m.labelled_size},
                      {"settings", m.settings},
                      {"datasets", datasets}});
  }
  return {{"format", "mtms-report-v1"},
          {"experiment", r.experiment},
          {"seed", r.seed},
          {"fold_seeds", r.fold_seeds},
          {"std_convention", "population"},
          {"models", models},
          {"config", r.config}};
}

RunReport report_from_json(const json& j) {
  if (j.value("format", "") != "mtms-report-v1") throw std::runtime_error("not an mtms report");
  RunReport r;
  r.experiment = j.at("experiment").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.fold_seeds = j.at("fold_seeds").get<std::vector<std::uint64_t>>();
  r.config = j.at("config");
  for (const auto& jm : j.at("models")) {
    ModelResult m;
    m.model = jm.at("model").get<std::string>();
    m.kind = jm.at("kind").get<std::string>();
    m.labelled_size = jm.at("labelled_size").get<int>();
    m.settings = jm.at("settings");
    for (const auto& jd : jm.at("datasets")) {
      DatasetResult d;
      d.dataset = jd.at("dataset").get<std::string>();
      d.target = jd.at("target").get<bool>();
      for (const auto& f : jd.at("folds")) d.folds.push_back(metric_set_from_json(f));
      d.mean = metric_set_from_json(jd.at("mean"));
      d.std = metric_set_from_json(jd.at("std"));
      m.datasets.push_back(std::move(d));
    }
    r.models.push_back(std::move(m));
  }
  return r;
}

std::string dump_report(const RunReport& report) { return to_json(report).dump(2) + "\n"; }

void write_report(const std::filesystem::path& path, const RunReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write report " + path.string());
  out << dump_report(report);
  if (!out) throw std::runtime_error("failed writing report " + path.string());
}

RunReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read report " + path.string());
  return report_from_json(json::parse(in));
}

void write_report_csv(const std::filesystem::path& path, const std::vector<RunReport>& reports) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write table " + path.string());
  out << "experiment,model,kind,labelled_size,dataset,target,folds,accuracy,accuracy_std,precision,precision_std,"
         "recall,recall_std,f1,f1_std\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  for (const auto& r : reports) {
    for (const auto& m : r.models) {
      for (const auto& d : m.datasets) {
        out << r.experiment << ',' << m.model << ',' << m.kind << ',' << m.labelled_size << ',' << d.dataset << ','
            << (d.target ? 1 : 0) << ',' << d.folds.size() << ',' << num(d.mean.accuracy) << ','
            << num(d.std.accuracy) << ',' << num(d.mean.precision) << ',' << num(d.std.precision) << ','
            << num(d.mean.recall) << ',' << num(d.std.recall) << ',' << num(d.mean.f1) << ',' << num(d.std.f1)
            << '\n';
      }
    }
  }
  if (!out) throw std::runtime_error("failed writing table " + path.string());
}

}  // namespace mtms
