#include "mtms/config.hpp"

#include <fstream>
#include <set>

namespace mtms {

using nlohmann::json;

namespace {

/// Typed access to one JSON object; remembers its path for messages and
/// rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& require(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError("missing required key '" + join(key) + "'");
    return j_.at(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    out = convert<T>(j_.at(key), join(key));
  }

  template <typename T>
  T get_required(const std::string& key) {
    return convert<T>(require(key), join(key));
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    return Section(j_.contains(key) ? j_.at(key) : empty(), join(key));
  }

  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key '" + join(key) + "'");
    }
  }

 private:
  static const json& empty() {
    static const json e = json::object();
    return e;
  }
  std::string where() const { return path_.empty() ? "config" : path_; }

  template <typename T>
  static T convert(const json& v, const std::string& path) {
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(path + ": expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(path + ": expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(path + ": expected a non-negative integer");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(path + ": expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(path + ": expected a string");
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

DomainParams parse_domain(const json& j, const std::string& path, int id, bool& is_target) {
  Section s(j, path);
  DomainParams p;
  p.domain_id = id;
  p.name = s.get_required<std::string>("name");
  s.get("ellipses_min", p.ellipses_min);
  s.get("ellipses_max", p.ellipses_max);
  s.get("gamma", p.gamma);
  s.get("gamma_max", p.gamma_max);
  s.get("noise_sigma", p.noise_sigma);
  s.get("noise_sigma_max", p.noise_sigma_max);
  s.get("blur_radius", p.blur_radius);
  s.get("blur_radius_max", p.blur_radius_max);
  s.get("background", p.background);
  s.get("background_max", p.background_max);
  s.get("contrast", p.contrast);
  s.get("contrast_max", p.contrast_max);
  s.get("image_size", p.image_size);
  is_target = false;
  s.get("target", is_target);
  s.finish();
  return p;
}

json domain_json(const DomainParams& p, bool target) {
  return {{"name", p.name},
          {"target", target},
          {"ellipses_min", p.ellipses_min},
          {"ellipses_max", p.ellipses_max},
          {"gamma", p.gamma},
          {"gamma_max", p.gamma_max},
          {"noise_sigma", p.noise_sigma},
          {"noise_sigma_max", p.noise_sigma_max},
          {"blur_radius", p.blur_radius},
          {"blur_radius_max", p.blur_radius_max},
          {"background", p.background},
          {"background_max", p.background_max},
          {"contrast", p.contrast},
          {"contrast_max", p.contrast_max},
          {"image_size", p.image_size}};
}

Axis parse_axis(const std::string& s, const std::string& path) {
  if (s == "rows") return Axis::kRows;
  if (s == "columns") return Axis::kColumns;
  throw ConfigError(path + ": expected \"rows\" or \"columns\"");
}

std::vector<int> int_list(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path + ": expected an array of integers");
  std::vector<int> out;
  for (const auto& x : v) {
    if (!x.is_number_integer()) throw ConfigError(path + ": expected an array of integers");
    out.push_back(x.get<int>());
  }
  return out;
}

}  // namespace

std::vector<int> ExperimentConfig::source_indices() const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(domains.size()); ++i) {
    if (i != target_index) out.push_back(i);
  }
  return out;
}

ExperimentConfig config_from_json(const json& j) {
  Section root(j, "");
  ExperimentConfig cfg;
  cfg.seed = root.get_required<std::uint64_t>("seed");
  cfg.samples_per_class = root.get_required<int>("samples_per_class");

  const json& domains = root.require("domains");
  if (!domains.is_array()) throw ConfigError("domains: expected an array");
  for (std::size_t i = 0; i < domains.size(); ++i) {
    bool target = false;
    cfg.domains.push_back(parse_domain(domains[i], "domains[" + std::to_string(i) + "]", static_cast<int>(i), target));
    if (target) {
      if (cfg.target_index >= 0) throw ConfigError("domains: more than one target domain");
      cfg.target_index = static_cast<int>(i);
    }
  }

  {
    Section c(root.require("corruption"), "corruption");
    std::string axis = "rows";
    c.get("axis", axis);
    cfg.corruption.axis = parse_axis(axis, "corruption.axis");
    c.get("shift_min", cfg.corruption.shift_min);
    c.get("shift_max", cfg.corruption.shift_max);
    c.get("frequency_min", cfg.corruption.frequency_min);
    c.get("frequency_max", cfg.corruption.frequency_max);
    c.get("threshold_min", cfg.corruption.threshold_min);
    c.get("threshold_max", cfg.corruption.threshold_max);
    c.finish();
  }

  root.get("test_fraction", cfg.test_fraction);
  root.get("folds", cfg.folds);

  {
    auto m = root.child("model");
    if (m.has("channels")) cfg.model.encoder.channels = int_list(m.require("channels"), "model.channels");
    m.get("embedding_dim", cfg.model.encoder.embedding_dim);
    m.get("classifier_hidden", cfg.model.classifier_hidden);
    m.get("domain_hidden", cfg.model.domain_hidden);
    m.finish();
  }
  {
    auto a = root.child("aggregator");
    a.get("model_dim", cfg.aggregator.model_dim);
    a.get("blocks", cfg.aggregator.blocks);
    a.get("heads", cfg.aggregator.heads);
    a.get("ff_dim", cfg.aggregator.ff_dim);
    a.get("classifier_hidden", cfg.aggregator.classifier_hidden);
    a.finish();
    cfg.aggregator.embedding_dim = cfg.model.encoder.embedding_dim;
  }
  {
    auto t = root.child("teacher");
    t.get("epochs", cfg.teacher.epochs);
    t.get("batch_size", cfg.teacher.batch_size);
    t.get("learning_rate", cfg.teacher.learning_rate);
    t.get("grl_lambda", cfg.teacher.grl_lambda);
    t.finish();
  }
  {
    auto p = root.child("prior");
    p.get("epochs", cfg.prior.epochs);
    p.get("batch_size", cfg.prior.batch_size);
    p.get("learning_rate", cfg.prior.learning_rate);
    p.get("query_batch", cfg.prior.query_batch);
    p.finish();
  }
  {
    auto f = root.child("finetune");
    f.get("epochs", cfg.finetune.epochs);
    f.get("batch_size", cfg.finetune.batch_size);
    f.get("learning_rate", cfg.finetune.learning_rate);
    f.finish();
  }
  if (root.has("labelled_sizes")) cfg.labelled_sizes = int_list(root.require("labelled_sizes"), "labelled_sizes");
  {
    auto a = root.child("ablation");
    a.get("exclude_da_teacher", cfg.ablation.exclude_da_teacher);
    a.get("exclude_filter", cfg.ablation.exclude_filter);
    a.get("mask_da_teacher", cfg.ablation.mask_da_teacher);
    if (a.has("teacher_subset")) cfg.ablation.teacher_subset = int_list(a.require("teacher_subset"), "ablation.teacher_subset");
    a.finish();
  }
  {
    auto s = root.child("ablation_suite");
    if (s.has("teacher_subsets")) {
      const json& v = s.require("teacher_subsets");
      if (!v.is_array()) throw ConfigError("ablation_suite.teacher_subsets: expected an array of arrays");
      for (std::size_t i = 0; i < v.size(); ++i) {
        cfg.suite.teacher_subsets.push_back(int_list(v[i], "ablation_suite.teacher_subsets[" + std::to_string(i) + "]"));
      }
    }
    if (s.has("epoch_grid")) {
      const json& v = s.require("epoch_grid");
      if (!v.is_array()) throw ConfigError("ablation_suite.epoch_grid: expected an array of [prior, finetune] pairs");
      cfg.suite.epoch_grid.clear();
      for (std::size_t i = 0; i < v.size(); ++i) {
        const auto pair = int_list(v[i], "ablation_suite.epoch_grid[" + std::to_string(i) + "]");
        if (pair.size() != 2) throw ConfigError("ablation_suite.epoch_grid[" + std::to_string(i) + "]: expected 2 values");
        cfg.suite.epoch_grid.emplace_back(pair[0], pair[1]);
      }
    }
    s.get("labelled_size", cfg.suite.labelled_size);
    s.finish();
  }
  std::string out = cfg.output_dir.string();
  root.get("output_dir", out);
  cfg.output_dir = out;
  root.get("jobs", cfg.jobs);
  root.finish();

  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

json config_to_json(const ExperimentConfig& cfg) {
  json domains = json::array();
  for (std::size_t i = 0; i < cfg.domains.size(); ++i) {
    domains.push_back(domain_json(cfg.domains[i], static_cast<int>(i) == cfg.target_index));
  }
  json subsets = json::array();
  for (const auto& s : cfg.suite.teacher_subsets) subsets.push_back(s);
  json grid = json::array();
  for (const auto& [p, f] : cfg.suite.epoch_grid) grid.push_back({p, f});
  return {
      {"seed", cfg.seed},
      {"samples_per_class", cfg.samples_per_class},
      {"test_fraction", cfg.test_fraction},
      {"folds", cfg.folds},
      {"domains", domains},
      {"corruption",
       {{"axis", cfg.corruption.axis == Axis::kRows ? "rows" : "columns"},
        {"shift_min", cfg.corruption.shift_min},
        {"shift_max", cfg.corruption.shift_max},
        {"frequency_min", cfg.corruption.frequency_min},
        {"frequency_max", cfg.corruption.frequency_max},
        {"threshold_min", cfg.corruption.threshold_min},
        {"threshold_max", cfg.corruption.threshold_max}}},
      {"model", model_config_json(cfg.model)},
      {"aggregator",
       {{"model_dim", cfg.aggregator.model_dim},
        {"blocks", cfg.aggregator.blocks},
        {"heads", cfg.aggregator.heads},
        {"ff_dim", cfg.aggregator.ff_dim},
        {"classifier_hidden", cfg.aggregator.classifier_hidden}}},
      {"teacher",
       {{"epochs", cfg.teacher.epochs},
        {"batch_size", cfg.teacher.batch_size},
        {"learning_rate", cfg.teacher.learning_rate},
        {"grl_lambda", cfg.teacher.grl_lambda}}},
      {"prior",
       {{"epochs", cfg.prior.epochs},
        {"batch_size", cfg.prior.batch_size},
        {"learning_rate", cfg.prior.learning_rate},
        {"query_batch", cfg.prior.query_batch}}},
      {"finetune",
       {{"epochs", cfg.finetune.epochs},
        {"batch_size", cfg.finetune.batch_size},
        {"learning_rate", cfg.finetune.learning_rate}}},
      {"labelled_sizes", cfg.labelled_sizes},
      {"ablation",
       {{"exclude_da_teacher", cfg.ablation.exclude_da_teacher},
        {"exclude_filter", cfg.ablation.exclude_filter},
        {"mask_da_teacher", cfg.ablation.mask_da_teacher},
        {"teacher_subset", cfg.ablation.teacher_subset}}},
      {"ablation_suite", {{"teacher_subsets", subsets}, {"epoch_grid", grid}, {"labelled_size", cfg.suite.labelled_size}}},
      {"output_dir", cfg.output_dir.string()},
      {"jobs", cfg.jobs},
  };
}

void validate(const ExperimentConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (cfg.domains.size() < 2) fail("domains: need one target and at least one source domain");
  if (cfg.target_index < 0) fail("domains: no domain is marked \"target\": true");
  std::set<std::string> names;
  for (std::size_t i = 0; i < cfg.domains.size(); ++i) {
    const auto& d = cfg.domains[i];
    const std::string path = "domains[" + std::to_string(i) + "]";
    if (d.name.empty() || d.name.find_first_of("/\\ ") != std::string::npos) fail(path + ".name: must be a plain file-safe name");
    if (!names.insert(d.name).second) fail(path + ".name: duplicate domain name '" + d.name + "'");
    if (d.name == "DA") fail(path + ".name: \"DA\" is reserved for the domain-adaptation teacher");
    if (!is_power_of_two(d.image_size)) fail(path + ".image_size: must be a power of two");
    if (d.image_size != cfg.domains.front().image_size) fail(path + ".image_size: all domains must share one image size");
    if (d.ellipses_min < 0 || d.ellipses_max < d.ellipses_min) fail(path + ": invalid ellipse count range");
    if (!(d.gamma > 0.0)) fail(path + ".gamma: must be positive");
    if (d.noise_sigma < 0.0) fail(path + ".noise_sigma: must be non-negative");
    if (d.blur_radius < 0) fail(path + ".blur_radius: must be non-negative");
    if (d.background < 0.0 || d.background >= 1.0) fail(path + ".background: must lie in [0,1)");
    if (d.background_max >= 1.0) fail(path + ".background_max: must be below 1");
    if (d.contrast < 0.0) fail(path + ".contrast: must be non-negative");
  }
  const auto& c = cfg.corruption;
  if (c.shift_min < 1 || c.shift_max < c.shift_min) fail("corruption: shift range must satisfy 1 <= shift_min <= shift_max");
  if (c.shift_max >= cfg.domains.front().image_size) fail("corruption.shift_max: must be smaller than the image size");
  if (c.frequency_min < 0.0 || c.frequency_max < c.frequency_min) fail("corruption: invalid frequency range");
  if (c.threshold_max < c.threshold_min) fail("corruption: invalid threshold range");
  if (cfg.samples_per_class < 2) fail("samples_per_class: must be at least 2");
  if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0)) fail("test_fraction: must lie in (0,1)");
  if (cfg.folds < 2) fail("folds: must be at least 2");
  if (cfg.folds > 2 * cfg.samples_per_class) fail("folds: more folds than samples");
  if (cfg.model.encoder.embedding_dim < 1 || cfg.model.classifier_hidden < 1 || cfg.model.domain_hidden < 1) {
    fail("model: dimensions must be positive");
  }
  for (int ch : cfg.model.encoder.channels) {
    if (ch < 1) fail("model.channels: widths must be positive");
  }
  if (cfg.aggregator.heads < 1 || cfg.aggregator.model_dim % cfg.aggregator.heads != 0) {
    fail("aggregator.model_dim: must be divisible by aggregator.heads");
  }
  if (cfg.aggregator.blocks < 0 || cfg.aggregator.ff_dim < 1 || cfg.aggregator.classifier_hidden < 1) {
    fail("aggregator: invalid sizes");
  }
  if (cfg.teacher.epochs < 1 || cfg.teacher.batch_size < 2 || !(cfg.teacher.learning_rate > 0.0)) {
    fail("teacher: epochs >= 1, batch_size >= 2 and learning_rate > 0 required");
  }
  if (cfg.teacher.grl_lambda < 0.0) fail("teacher.grl_lambda: must be non-negative");
  if (cfg.prior.epochs < 0 || cfg.prior.batch_size < 2 || cfg.prior.query_batch < 1 || !(cfg.prior.learning_rate > 0.0)) {
    fail("prior: invalid schedule");
  }
  if (cfg.finetune.epochs < 0 || cfg.finetune.batch_size < 1 || !(cfg.finetune.learning_rate > 0.0)) {
    fail("finetune: invalid schedule");
  }
  if (cfg.labelled_sizes.empty()) fail("labelled_sizes: at least one size required");
  // The smallest class share of a training split bounds the labelled subset.
  const auto per_class_train =
      static_cast<int>(cfg.samples_per_class - std::ceil(cfg.test_fraction * cfg.samples_per_class));
  auto check_size = [&](int n, const std::string& path) {
    if (n < 2 || n % 2 != 0) fail(path + ": labelled sizes must be even and >= 2 (balanced classes)");
    if (n / 2 > per_class_train) fail(path + ": " + std::to_string(n) + " exceeds the labelled samples available");
  };
  for (int n : cfg.labelled_sizes) check_size(n, "labelled_sizes");
  check_size(cfg.suite.labelled_size, "ablation_suite.labelled_size");
  const int sources = static_cast<int>(cfg.domains.size()) - 1;
  auto check_subset = [&](const std::vector<int>& subset, const std::string& path) {
    std::set<int> seen;
    for (int i : subset) {
      if (i < 0 || i >= sources) fail(path + ": teacher index " + std::to_string(i) + " out of range");
      if (!seen.insert(i).second) fail(path + ": duplicate teacher index");
    }
  };
  check_subset(cfg.ablation.teacher_subset, "ablation.teacher_subset");
  for (const auto& s : cfg.suite.teacher_subsets) {
    if (s.empty()) fail("ablation_suite.teacher_subsets: subsets must be non-empty");
    check_subset(s, "ablation_suite.teacher_subsets");
  }
  for (const auto& [p, f] : cfg.suite.epoch_grid) {
    if (p < 0 || f < 0) fail("ablation_suite.epoch_grid: epochs must be non-negative");
  }
  if (cfg.jobs < 1) fail("jobs: must be at least 1");
  if (cfg.output_dir.empty()) fail("output_dir: must not be empty");
}

}  // namespace mtms
