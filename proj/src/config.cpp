#include "fedbound/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fedbound/errors.hpp"

namespace fedbound {

namespace {

enum class Scope { kAlways, kDataset, kCompressor };

struct Field {
  std::string key;
  Scope scope;
  // Returns an error message, empty on success.
  std::function<std::string(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
std::string parse_number(std::string_view s, T& out) {
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    return "'" + std::string(s) + "' is not a valid number";
  }
  return {};
}

std::string parse_bool(std::string_view s, bool& out) {
  if (s == "true") {
    out = true;
  } else if (s == "false") {
    out = false;
  } else {
    return "expected true or false, got '" + std::string(s) + "'";
  }
  return {};
}

template <typename T>
Field number(std::string key, Scope scope, T ExperimentConfig::*section, auto member) {
  return Field{
      std::move(key), scope,
      [section, member](ExperimentConfig& c, std::string_view v) {
        return parse_number(v, (c.*section).*member);
      },
      [section, member](const ExperimentConfig& c) {
        const auto value = (c.*section).*member;
        if constexpr (std::is_floating_point_v<decltype(value)>) {
          return format_double(value);
        } else {
          return std::to_string(value);
        }
      }};
}

template <typename T>
Field optional_real(std::string key, T ExperimentConfig::*section, auto member) {
  return Field{std::move(key), Scope::kAlways,
               [section, member](ExperimentConfig& c, std::string_view v) {
                 double x = 0.0;
                 auto err = parse_number(v, x);
                 if (err.empty()) ((c.*section).*member) = x;
                 return err;
               },
               [section, member](const ExperimentConfig& c) {
                 const auto& value = (c.*section).*member;
                 return value ? format_double(*value) : std::string();
               }};
}

template <typename T>
Field text(std::string key, Scope scope, T ExperimentConfig::*section, std::string T::*member,
           std::initializer_list<std::string_view> allowed = {}) {
  std::vector<std::string> options(allowed.begin(), allowed.end());
  return Field{std::move(key), scope,
               [section, member, options](ExperimentConfig& c, std::string_view v) {
                 if (options.empty()) {
                   (c.*section).*member = std::string(v);
                   return std::string();
                 }
                 for (const auto& o : options) {
                   if (v == o) {
                     (c.*section).*member = o;
                     return std::string();
                   }
                 }
                 std::string msg = "'" + std::string(v) + "' is not one of";
                 for (const auto& o : options) msg += " " + o;
                 return msg;
               },
               [section, member](const ExperimentConfig& c) { return (c.*section).*member; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    using C = ExperimentConfig;
    std::vector<Field> f;
    f.push_back(text("problem.kind", Scope::kAlways, &C::problem, &ProblemConfig::kind,
                     {"quadratic", "logistic", "mlp"}));
    f.push_back(number("problem.dim", Scope::kAlways, &C::problem, &ProblemConfig::dim));
    f.push_back(number("problem.eig_min", Scope::kAlways, &C::problem, &ProblemConfig::eig_min));
    f.push_back(number("problem.eig_max", Scope::kAlways, &C::problem, &ProblemConfig::eig_max));
    f.push_back(number("problem.radius", Scope::kAlways, &C::problem, &ProblemConfig::radius));
    f.push_back(number("problem.sigma2", Scope::kAlways, &C::problem, &ProblemConfig::sigma2));
    f.push_back(
        number("problem.init_radius", Scope::kAlways, &C::problem, &ProblemConfig::init_radius));
    f.push_back(number("problem.instance_seed", Scope::kAlways, &C::problem,
                       &ProblemConfig::instance_seed));
    f.push_back(number("problem.batch", Scope::kAlways, &C::problem, &ProblemConfig::batch));
    f.push_back(number("problem.ridge", Scope::kAlways, &C::problem, &ProblemConfig::ridge));
    f.push_back(number("problem.hidden", Scope::kAlways, &C::problem, &ProblemConfig::hidden));

    f.push_back(text("dataset.kind", Scope::kDataset, &C::dataset, &DatasetConfig::kind,
                     {"blobs", "idx"}));
    f.push_back(text("dataset.images", Scope::kDataset, &C::dataset, &DatasetConfig::images));
    f.push_back(text("dataset.labels", Scope::kDataset, &C::dataset, &DatasetConfig::labels));
    f.push_back(
        text("dataset.test_images", Scope::kDataset, &C::dataset, &DatasetConfig::test_images));
    f.push_back(
        text("dataset.test_labels", Scope::kDataset, &C::dataset, &DatasetConfig::test_labels));
    f.push_back(number("dataset.limit", Scope::kDataset, &C::dataset, &DatasetConfig::limit));
    f.push_back(number("dataset.classes", Scope::kDataset, &C::dataset, &DatasetConfig::classes));
    f.push_back(
        number("dataset.per_class", Scope::kDataset, &C::dataset, &DatasetConfig::per_class));
    f.push_back(number("dataset.test_per_class", Scope::kDataset, &C::dataset,
                       &DatasetConfig::test_per_class));
    f.push_back(number("dataset.dim", Scope::kDataset, &C::dataset, &DatasetConfig::dim));
    f.push_back(number("dataset.spread", Scope::kDataset, &C::dataset, &DatasetConfig::spread));
    f.push_back(number("dataset.seed", Scope::kDataset, &C::dataset, &DatasetConfig::seed));

    f.push_back(Field{"partition.mode", Scope::kDataset,
                      [](C& c, std::string_view v) {
                        try {
                          c.partition_mode = parse_partition_mode(v);
                        } catch (const ConfigError& e) {
                          return std::string(e.what());
                        }
                        return std::string();
                      },
                      [](const C& c) { return std::string(partition_mode_name(c.partition_mode)); }});

    f.push_back(text("run.algorithm", Scope::kAlways, &C::run, &RunConfig::algorithm,
                     {"full_precision", "error_feedback"}));
    f.push_back(number("run.workers", Scope::kAlways, &C::run, &RunConfig::workers));
    f.push_back(number("run.rounds", Scope::kAlways, &C::run, &RunConfig::rounds));
    f.push_back(Field{"run.seeds", Scope::kAlways,
                      [](C& c, std::string_view v) {
                        std::vector<std::uint64_t> seeds;
                        std::size_t pos = 0;
                        while (pos <= v.size()) {
                          const auto comma = std::min(v.find(',', pos), v.size());
                          std::uint64_t s = 0;
                          auto err = parse_number(trim(v.substr(pos, comma - pos)), s);
                          if (!err.empty()) return err;
                          seeds.push_back(s);
                          pos = comma + 1;
                        }
                        c.run.seeds = std::move(seeds);
                        return std::string();
                      },
                      [](const C& c) {
                        std::string out;
                        for (auto s : c.run.seeds) {
                          if (!out.empty()) out += ",";
                          out += std::to_string(s);
                        }
                        return out;
                      }});
    f.push_back(text("run.output", Scope::kAlways, &C::run, &RunConfig::output));
    f.push_back(number("run.threads", Scope::kAlways, &C::run, &RunConfig::threads));

    f.push_back(text("local.kind", Scope::kAlways, &C::local, &LocalConfig::kind,
                     {"gradient", "prox"}));
    f.push_back(number("local.T", Scope::kAlways, &C::local, &LocalConfig::T));
    f.push_back(number("local.inner_lr", Scope::kAlways, &C::local, &LocalConfig::inner_lr));
    f.push_back(number("local.inner_iters", Scope::kAlways, &C::local, &LocalConfig::inner_iters));
    f.push_back(number("local.tolerance", Scope::kAlways, &C::local, &LocalConfig::tolerance));
    f.push_back(Field{"local.rescale_by_T", Scope::kAlways,
                      [](C& c, std::string_view v) { return parse_bool(v, c.local.rescale_by_T); },
                      [](const C& c) { return std::string(c.local.rescale_by_T ? "true" : "false"); }});
    f.push_back(text("local.cap_policy", Scope::kAlways, &C::local, &LocalConfig::cap_policy,
                     {"clamp", "report"}));

    f.push_back(text("compressor.kind", Scope::kCompressor, &C::compressor,
                     &CompressorConfig::kind, {"none", "identity", "topk", "scaled_sign"}));
    f.push_back(number("compressor.k", Scope::kCompressor, &C::compressor, &CompressorConfig::k));
    f.push_back(number("compressor.fraction", Scope::kCompressor, &C::compressor,
                       &CompressorConfig::fraction));

    f.push_back(text("schedule.kind", Scope::kAlways, &C::schedule, &ScheduleConfig::kind,
                     {"fixed", "diminishing", "step_decay"}));
    f.push_back(number("schedule.c", Scope::kAlways, &C::schedule, &ScheduleConfig::c));
    f.push_back(number("schedule.nu", Scope::kAlways, &C::schedule, &ScheduleConfig::nu));
    f.push_back(number("schedule.gamma0", Scope::kAlways, &C::schedule, &ScheduleConfig::gamma0));
    f.push_back(
        number("schedule.decay_base", Scope::kAlways, &C::schedule, &ScheduleConfig::decay_base));
    f.push_back(number("schedule.period", Scope::kAlways, &C::schedule, &ScheduleConfig::period));

    f.push_back(optional_real("theory.R", &C::theory, &TheoryConfig::R));
    f.push_back(optional_real("theory.L", &C::theory, &TheoryConfig::L));
    f.push_back(optional_real("theory.sigma2", &C::theory, &TheoryConfig::sigma2));
    f.push_back(number("theory.finf_iters", Scope::kAlways, &C::theory, &TheoryConfig::finf_iters));
    f.push_back(
        number("theory.noise_samples", Scope::kAlways, &C::theory, &TheoryConfig::noise_samples));
    f.push_back(
        number("theory.noise_probes", Scope::kAlways, &C::theory, &TheoryConfig::noise_probes));
    f.push_back(number("theory.smoothness_pairs", Scope::kAlways, &C::theory,
                       &TheoryConfig::smoothness_pairs));
    return f;
  }();
  return table;
}

const Field* find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

std::vector<std::string> check(const ExperimentConfig& c) {
  std::vector<std::string> issues;
  auto need = [&issues](bool ok, std::string msg) {
    if (!ok) issues.push_back(std::move(msg));
  };
  const auto& p = c.problem;
  if (p.kind == "quadratic") {
    need(p.dim > 0, "problem.dim must be positive");
    need(p.eig_min >= 0.0 && p.eig_max > 0.0 && p.eig_min <= p.eig_max,
         "problem.eig_min/eig_max need 0 <= eig_min <= eig_max, eig_max > 0");
    need(p.radius >= 0.0, "problem.radius must be non-negative");
    need(p.sigma2 >= 0.0, "problem.sigma2 must be non-negative");
    need(p.init_radius >= 0.0, "problem.init_radius must be non-negative");
  } else {
    need(p.batch > 0, "problem.batch must be positive");
    need(p.ridge >= 0.0, "problem.ridge must be non-negative");
    need(p.hidden > 0, "problem.hidden must be positive");
    const auto& d = c.dataset;
    if (d.kind == "idx") {
      need(!d.images.empty() && !d.labels.empty(),
           "dataset.images and dataset.labels are required for dataset.kind = idx");
      need(d.test_images.empty() == d.test_labels.empty(),
           "dataset.test_images and dataset.test_labels go together");
    } else {
      need(d.classes > 0 && d.per_class > 0 && d.dim > 0,
           "dataset.classes, dataset.per_class and dataset.dim must be positive");
      need(d.spread >= 0.0, "dataset.spread must be non-negative");
    }
  }
  need(c.run.workers > 0, "run.workers must be positive");
  need(c.run.rounds > 0, "run.rounds must be positive");
  need(!c.run.seeds.empty(), "run.seeds must list at least one seed");
  need(c.run.threads > 0, "run.threads must be positive");
  {
    auto sorted = c.run.seeds;
    std::sort(sorted.begin(), sorted.end());
    need(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
         "run.seeds contains duplicates");
  }
  if (c.local.kind == "gradient") {
    need(c.local.T > 0, "local.T must be at least 1");
  } else {
    need(c.local.inner_lr > 0.0, "local.inner_lr must be positive");
    need(c.local.inner_iters > 0, "local.inner_iters must be positive");
    need(c.local.tolerance >= 0.0, "local.tolerance must be non-negative");
  }
  const auto& q = c.compressor;
  if (c.error_feedback()) {
    need(q.kind != "none", "run.algorithm = error_feedback needs compressor.kind");
    if (q.kind == "topk") {
      need((q.k > 0) != (q.fraction > 0.0),
           "compressor.kind = topk needs exactly one of compressor.k, compressor.fraction");
      need(q.fraction >= 0.0 && q.fraction <= 1.0, "compressor.fraction must lie in (0, 1]");
    }
  }
  const auto& s = c.schedule;
  if (s.kind == "fixed") {
    need(s.c > 0.0, "schedule.c must be positive");
  } else if (s.kind == "diminishing") {
    need(s.c > 0.0, "schedule.c must be positive");
    need(s.nu > 0.5 && s.nu < 1.0, "schedule.nu must lie in (1/2, 1)");
  } else {
    need(s.gamma0 > 0.0, "schedule.gamma0 must be positive");
    need(s.decay_base > 1.0, "schedule.decay_base must exceed 1");
    need(s.period > 0, "schedule.period must be positive");
  }
  if (c.theory.R) need(*c.theory.R > 0.0, "theory.R must be positive");
  if (c.theory.L) need(*c.theory.L > 0.0, "theory.L must be positive");
  if (c.theory.sigma2) need(*c.theory.sigma2 >= 0.0, "theory.sigma2 must be non-negative");
  need(c.theory.noise_samples > 0, "theory.noise_samples must be positive");
  return issues;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  keys.emplace_back("partition.workers");
  return keys;
}

void validate_config(const ExperimentConfig& cfg) {
  auto issues = check(cfg);
  if (!issues.empty()) throw ConfigError(std::move(issues));
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::vector<std::string> issues;
  std::map<std::string, std::size_t> seen;
  std::optional<std::size_t> partition_workers;
  std::string section;
  bool dataset_keys = false;
  bool compressor_keys = false;

  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') {
        issues.push_back(where + "unterminated section header");
        continue;
      }
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      issues.push_back(where + "expected key = value");
      continue;
    }
    std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    if (!section.empty()) key = section + "." + key;
    if (auto it = seen.find(key); it != seen.end()) {
      issues.push_back(where + "duplicate key " + key + " (first set on line " +
                       std::to_string(it->second) + ")");
      continue;
    }
    seen.emplace(key, lineno);
    if (key == "partition.workers") {
      std::size_t n = 0;
      auto err = parse_number(value, n);
      if (!err.empty()) {
        issues.push_back(where + key + ": " + err);
      } else {
        partition_workers = n;
        dataset_keys = true;
      }
      continue;
    }
    const Field* field = find_field(key);
    if (field == nullptr) {
      issues.push_back(where + "unknown key " + key);
      continue;
    }
    if (field->scope == Scope::kDataset) dataset_keys = true;
    if (field->scope == Scope::kCompressor) compressor_keys = true;
    if (auto err = field->set(cfg, value); !err.empty()) {
      issues.push_back(where + key + ": " + err);
    }
  }

  if (partition_workers) {
    if (seen.count("run.workers") && *partition_workers != cfg.run.workers) {
      issues.emplace_back("partition.workers disagrees with run.workers");
    }
    cfg.run.workers = *partition_workers;
  }
  if (dataset_keys && !cfg.uses_dataset()) {
    issues.emplace_back("dataset and partition keys need a dataset problem (logistic or mlp)");
  }
  if (compressor_keys && !cfg.error_feedback()) {
    issues.emplace_back("compressor keys need run.algorithm = error_feedback");
  }
  auto more = check(cfg);
  issues.insert(issues.end(), more.begin(), more.end());
  if (!issues.empty()) throw ConfigError(std::move(issues));
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) {
    if (f.scope == Scope::kDataset && !cfg.uses_dataset()) continue;
    if (f.scope == Scope::kCompressor && !cfg.error_feedback()) continue;
    const std::string value = f.get(cfg);
    if (value.empty()) continue;
    out += f.key + " = " + value + "\n";
  }
  return out;
}

}  // namespace fedbound
