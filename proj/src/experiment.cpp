#include "fedbound/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>
#include <tbb/blocked_range.h>
#include <tbb/global_control.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include "fedbound/errors.hpp"

namespace fedbound {

namespace {

using json = nlohmann::ordered_json;

json real(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

LabeledDataset truncate(LabeledDataset ds, std::size_t limit) {
  if (limit == 0 || limit >= ds.size()) return ds;
  ds.labels.resize(limit);
  ds.features.resize(limit * ds.dim);
  return ds;
}

std::vector<std::shared_ptr<const DatasetObjective>> make_dataset_objectives(
    const ExperimentConfig& cfg, const std::shared_ptr<const LabeledDataset>& train,
    const Partition& part, const std::vector<double>& noise, const std::vector<double>& smooth) {
  std::vector<std::shared_ptr<const DatasetObjective>> out;
  const auto& p = cfg.problem;
  for (std::size_t i = 0; i < part.workers(); ++i) {
    if (p.kind == "logistic") {
      out.push_back(std::make_shared<LogisticObjective>(train, part.assignment[i], p.batch,
                                                        p.ridge, noise[i]));
    } else {
      out.push_back(std::make_shared<MlpObjective>(train, part.assignment[i], p.batch, p.ridge,
                                                   p.hidden, noise[i], smooth[i]));
    }
  }
  return out;
}

// Best objective value seen along full-batch gradient descent with step 1/L.
double descend_for_infimum(const Objective& f, ParamVector x, double L, std::size_t iters) {
  double best = f.value(x);
  for (std::size_t t = 0; t < iters; ++t) {
    axpy(-1.0 / L, f.full_gradient(x), x);
    const double v = f.value(x);
    if (!std::isfinite(v)) break;
    best = std::min(best, v);
  }
  return best;
}

BuiltProblem build_quadratic(const ExperimentConfig& cfg) {
  const auto& p = cfg.problem;
  QuadraticFamilySpec spec;
  spec.dim = p.dim;
  spec.workers = cfg.run.workers;
  spec.eig_min = p.eig_min;
  spec.eig_max = p.eig_max;
  spec.radius = p.radius;
  spec.sigma2 = p.sigma2;
  spec.init_radius = p.init_radius;
  spec.instance_seed = p.instance_seed;
  const auto family = make_quadratic_family(spec);
  BuiltProblem out;
  out.workers = family.objectives();
  out.f_inf = family.infimum;
  out.global = std::make_shared<AverageObjective>(out.workers, family.infimum);
  out.x0 = family.initial_point;
  out.smoothness = family.smoothness;
  out.sigma2 = p.sigma2;
  out.delta_inf = delta_inf(out.workers, out.f_inf);
  return out;
}

BuiltProblem build_dataset_problem(const ExperimentConfig& cfg) {
  auto [train_ds, test_ds] = build_datasets(cfg);
  auto train = std::make_shared<const LabeledDataset>(std::move(train_ds));
  auto test = std::make_shared<const LabeledDataset>(std::move(test_ds));
  Partition part = build_partition(cfg, *train);
  const std::size_t n = part.workers();
  const auto& p = cfg.problem;
  const auto& th = cfg.theory;
  BuiltProblem out;

  if (p.kind == "logistic") {
    out.x0 = ParamVector(LogisticObjective::parameter_count(train->dim, train->classes));
  } else {
    RngStream init(cfg.dataset.seed, StreamId{0, 0, 0, Purpose::kInit});
    out.x0 = MlpObjective::initial_point(train->dim, p.hidden, train->classes, init);
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> smooth(n, nan);
  auto objs = make_dataset_objectives(cfg, train, part, std::vector<double>(n, nan), smooth);
  if (p.kind == "mlp") {
    for (std::size_t i = 0; i < n; ++i) {
      smooth[i] = estimate_smoothness(*objs[i], out.x0, 1.0, th.smoothness_pairs,
                                      cfg.dataset.seed + i);
    }
    objs = make_dataset_objectives(cfg, train, part, std::vector<double>(n, nan), smooth);
    out.notes.emplace_back("mlp smoothness is a sampled estimate, not a certified constant");
  }

  std::vector<ParamVector> probes{out.x0};
  for (std::size_t j = 0; j < th.noise_probes; ++j) {
    RngStream rng(cfg.dataset.seed, StreamId{0, 0, j, Purpose::kProbe});
    probes.push_back(out.x0 + gaussian_vector(rng, out.x0.size(), 1.0));
  }
  std::vector<double> noise(n);
  for (std::size_t i = 0; i < n; ++i) {
    noise[i] = estimate_noise_bound(*objs[i], probes, th.noise_samples, cfg.dataset.seed + 1000 + i);
  }
  objs = make_dataset_objectives(cfg, train, part, noise, smooth);
  out.workers.assign(objs.begin(), objs.end());
  out.sigma2 = *std::max_element(noise.begin(), noise.end());
  for (const auto& o : objs) out.smoothness = std::max(out.smoothness, o->smoothness());

  const AverageObjective probe_avg(out.workers, 0.0);
  out.f_inf = descend_for_infimum(probe_avg, out.x0, out.smoothness, th.finf_iters);
  out.global = std::make_shared<AverageObjective>(out.workers, out.f_inf);
  out.delta_inf = delta_inf(out.workers, out.f_inf);
  out.notes.emplace_back("sigma2 measured by Monte Carlo at the initial point and " +
                         std::to_string(th.noise_probes) + " probes");
  out.notes.emplace_back("f_inf is the best value of " + std::to_string(th.finf_iters) +
                         " full-batch gradient steps; worker lower bounds are 0");

  if (test->size() > 0) {
    auto model = objs.front();
    out.accuracy = [model, test](const ParamVector& x) { return model->accuracy(x, *test); };
  }
  out.train = train;
  out.test = test;
  out.partition = std::move(part);
  return out;
}

}  // namespace

std::pair<LabeledDataset, LabeledDataset> build_datasets(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  if (d.kind == "idx") {
    auto train = truncate(load_idx(d.images, d.labels), d.limit);
    LabeledDataset test;
    test.dim = train.dim;
    test.classes = train.classes;
    if (!d.test_images.empty()) {
      test = load_idx(d.test_images, d.test_labels);
      if (test.dim != train.dim) throw IngestionError("test images differ in size from training images");
      test.classes = std::max(test.classes, train.classes);
      train.classes = test.classes;
    }
    return {std::move(train), std::move(test)};
  }
  RngStream rng(d.seed, StreamId{0, 0, 0, Purpose::kDataset});
  if (d.test_per_class == 0) {
    auto train = synth_blobs(rng, d.classes, d.per_class, d.dim, d.spread);
    LabeledDataset test;
    test.dim = train.dim;
    test.classes = train.classes;
    return {std::move(train), std::move(test)};
  }
  return synth_blobs_split(rng, d.classes, d.per_class, d.test_per_class, d.dim, d.spread);
}

Partition build_partition(const ExperimentConfig& cfg, const LabeledDataset& train) {
  RngStream rng(cfg.dataset.seed, StreamId{0, 0, 0, Purpose::kPartition});
  return partition(train, cfg.run.workers, cfg.partition_mode, rng);
}

BuiltProblem build_problem(const ExperimentConfig& cfg) {
  validate_config(cfg);
  BuiltProblem out = cfg.uses_dataset() ? build_dataset_problem(cfg) : build_quadratic(cfg);
  if (cfg.theory.L) {
    out.smoothness = *cfg.theory.L;
    out.notes.emplace_back("smoothness overridden by theory.L");
  }
  if (cfg.theory.sigma2) {
    out.sigma2 = *cfg.theory.sigma2;
    out.notes.emplace_back("sigma2 overridden by theory.sigma2");
  }
  return out;
}

ConstantsSource constants_source_for(const ExperimentConfig& cfg) {
  const bool prox = cfg.local.kind == "prox";
  if (cfg.error_feedback()) return prox ? ConstantsSource::kEfFedProx : ConstantsSource::kEfFedAvg;
  return prox ? ConstantsSource::kFedProx : ConstantsSource::kFedAvg;
}

std::optional<CompressorSpec> compressor_for(const ExperimentConfig& cfg, std::size_t d) {
  if (!cfg.error_feedback()) return std::nullopt;
  const auto& q = cfg.compressor;
  if (q.kind == "identity") return IdentityCompressor{};
  if (q.kind == "scaled_sign") return ScaledSignCompressor{};
  if (q.kind == "topk") {
    if (q.fraction > 0.0) return topk_from_fraction(q.fraction, d);
    if (q.k > d) {
      throw ConfigError("compressor.k=" + std::to_string(q.k) + " exceeds dimension d=" +
                        std::to_string(d));
    }
    return TopKCompressor{q.k};
  }
  throw ConfigError("error feedback needs compressor.kind");
}

ScheduleSpec schedule_for(const ExperimentConfig& cfg) {
  const auto& s = cfg.schedule;
  if (s.kind == "fixed") return FixedSchedule{s.c, cfg.run.rounds};
  if (s.kind == "diminishing") return DiminishingSchedule{s.c, s.nu};
  return StepDecaySchedule{s.gamma0, s.decay_base, s.period};
}

LocalOperatorSpec local_for(const ExperimentConfig& cfg) {
  if (cfg.local.kind == "prox") {
    return Proximal{cfg.local.inner_lr, cfg.local.inner_iters, cfg.local.tolerance};
  }
  return GradientSteps{cfg.local.T};
}

double step_scale_for(const ExperimentConfig& cfg) {
  if (cfg.local.kind == "gradient" && !cfg.local.rescale_by_T) {
    return static_cast<double>(cfg.local.T);
  }
  return 1.0;
}

PropositionDetail constants_for(const ExperimentConfig& cfg, const BuiltProblem& problem) {
  PropositionInputs in;
  in.L = problem.smoothness;
  in.T = cfg.local.kind == "prox" ? 1 : cfg.local.T;
  in.sigma2 = problem.sigma2;
  in.delta_inf = problem.delta_inf;
  if (const auto q = compressor_for(cfg, problem.x0.size())) {
    in.contraction = contraction_factor(*q, problem.x0.size());
  }
  return proposition_detail(constants_source_for(cfg), in);
}

bool ExperimentResult::any_diverged() const {
  return std::any_of(records.begin(), records.end(), [](const RunRecord& r) { return r.diverged; });
}

json verdict_json(const Verdict& v) {
  json j;
  j["theorem"] = v.theorem;
  j["bound"] = real(v.bound);
  j["measured_min_W"] = real(v.measured_min_W);
  j["standard_error"] = real(v.standard_error);
  j["argmin_round"] = v.argmin_round;
  j["margin"] = real(v.margin);
  j["in_regime"] = v.in_regime;
  j["violated"] = v.violated;
  j["seeds"] = v.seeds;
  j["rounds"] = v.rounds;
  j["V0"] = real(v.V0);
  j["notes"] = v.notes;
  return j;
}

json constants_json(const PropositionDetail& d) {
  json j;
  j["source"] = std::string(constants_source_name(d.constants.source));
  j["b1"] = real(d.constants.b1);
  j["b2"] = real(d.constants.b2);
  j["b3"] = real(d.constants.b3);
  j["step_cap"] = real(d.constants.step_cap);
  json inter = json::object();
  for (const auto& [name, value] : d.intermediates) inter[name] = real(value);
  j["intermediates"] = inter;
  return j;
}

ExperimentResult run_experiment(const ExperimentConfig& input, const RunOptions& options) {
  ExperimentConfig cfg = input;
  if (options.seeds) cfg.run.seeds = *options.seeds;
  validate_config(cfg);
  const std::size_t threads = options.threads.value_or(cfg.run.threads);
  if (threads == 0) throw ConfigError("--threads must be at least 1");
  const std::string output = options.output.value_or(cfg.run.output);

  const BuiltProblem problem = build_problem(cfg);
  ExperimentResult result;
  result.config = cfg;
  result.constants = constants_for(cfg, problem);
  const auto& bc = result.constants.constants;

  EngineConfig base;
  base.workers = problem.workers;
  base.global = problem.global;
  base.f_inf = problem.f_inf;
  base.x0 = problem.x0;
  base.local = local_for(cfg);
  base.compressor = compressor_for(cfg, problem.x0.size());
  base.schedule = schedule_for(cfg);
  base.rounds = cfg.run.rounds;
  base.threads = threads;
  base.rescale_by_T = cfg.local.rescale_by_T;
  base.step_cap = bc.step_cap;
  base.cap_policy = cfg.local.cap_policy == "report" ? CapPolicy::kReport : CapPolicy::kClamp;
  base.accuracy = problem.accuracy;
  const Algorithm algorithm =
      cfg.error_feedback() ? Algorithm::kErrorFeedback : Algorithm::kFullPrecision;

  const auto& seeds = cfg.run.seeds;
  result.records.resize(seeds.size());
  auto run_seed = [&](std::size_t s) {
    EngineConfig ec = base;
    ec.seed = seeds[s];
    result.records[s] = run_algorithm(ec, algorithm);
  };
  if (threads > 1) {
    tbb::global_control limit(tbb::global_control::max_allowed_parallelism, threads);
    tbb::task_arena arena(static_cast<int>(threads));
    arena.execute([&] {
      tbb::parallel_for(tbb::blocked_range<std::size_t>(0, seeds.size(), 1),
                        [&](const tbb::blocked_range<std::size_t>& r) {
                          for (std::size_t s = r.begin(); s != r.end(); ++s) run_seed(s);
                        });
    });
  } else {
    for (std::size_t s = 0; s < seeds.size(); ++s) run_seed(s);
  }

  result.aggregate = aggregate_records(result.records);
  VerifyOptions vo;
  vo.R = cfg.theory.R;
  const auto params =
      theorem_params_for(schedule_for(cfg), step_scale_for(cfg), cfg.theory.R.value_or(1.0));
  result.verdict = verify_run(result.records, bc, params, vo);
  for (const auto& note : problem.notes) result.verdict.notes.push_back(note);

  json summary;
  {
    json c = json::object();
    std::istringstream lines(serialize_config(cfg));
    std::string line;
    while (std::getline(lines, line)) {
      const auto eq = line.find(" = ");
      c[line.substr(0, eq)] = line.substr(eq + 3);
    }
    summary["config"] = c;
  }
  summary["problem"] = {{"kind", cfg.problem.kind},
                        {"dimension", problem.x0.size()},
                        {"workers", problem.workers.size()},
                        {"smoothness", real(problem.smoothness)},
                        {"sigma2", real(problem.sigma2)},
                        {"f_inf", real(problem.f_inf)},
                        {"delta_inf", real(problem.delta_inf)},
                        {"notes", problem.notes}};
  summary["constants"] = constants_json(result.constants);
  json per_seed = json::array();
  for (const auto& r : result.records) {
    double min_w = std::numeric_limits<double>::infinity();
    for (const auto& row : r.rows) min_w = std::min(min_w, row.grad_norm_sq);
    per_seed.push_back({{"seed", r.seed},
                        {"diverged", r.diverged},
                        {"message", r.message},
                        {"cap_exceeded", r.cap_exceeded},
                        {"rows", r.rows.size()},
                        {"final_loss_gap", real(r.rows.empty() ? NAN : r.rows.back().loss_gap)},
                        {"min_grad_norm_sq", real(min_w)}});
  }
  summary["seeds"] = per_seed;
  if (!result.aggregate.empty()) {
    const auto& last = result.aggregate.back();
    double min_w = std::numeric_limits<double>::infinity();
    double min_v = std::numeric_limits<double>::infinity();
    for (const auto& a : result.aggregate) {
      min_w = std::min(min_w, a.grad_norm_sq_mean);
      min_v = std::min(min_v, a.loss_gap_mean);
    }
    summary["final"] = {{"round", last.round},
                        {"loss_gap_mean", real(last.loss_gap_mean)},
                        {"loss_gap_std", real(last.loss_gap_std)},
                        {"grad_norm_sq_mean", real(last.grad_norm_sq_mean)},
                        {"grad_norm_sq_std", real(last.grad_norm_sq_std)},
                        {"err_norm_sq_mean", real(last.err_norm_sq_mean)},
                        {"test_acc_mean", real(last.test_acc_mean)},
                        {"test_acc_std", real(last.test_acc_std)}};
    summary["min"] = {{"grad_norm_sq_mean", real(min_w)}, {"loss_gap_mean", real(min_v)}};
  }
  summary["verdict"] = verdict_json(result.verdict);
  result.summary = summary;

  if (!output.empty()) {
    const std::filesystem::path dir(output);
    std::filesystem::create_directories(dir);
    auto open = [&dir](const std::string& name) {
      std::ofstream f(dir / name, std::ios::binary);
      if (!f) throw ConfigError("cannot write " + (dir / name).string());
      return f;
    };
    {
      ExperimentConfig echo = input;
      echo.run.seeds = cfg.run.seeds;
      auto f = open("config.cfg");
      f << serialize_config(echo);
    }
    for (const auto& r : result.records) {
      auto f = open("seed_" + std::to_string(r.seed) + ".csv");
      write_run_csv(f, r);
    }
    {
      auto f = open("aggregate.csv");
      write_aggregate_csv(f, result.aggregate);
    }
    {
      auto f = open("summary.json");
      f << result.summary.dump(2) << '\n';
    }
    spdlog::info("wrote {} seed records to {}", result.records.size(), dir.string());
  }
  return result;
}

std::vector<std::string> preset_names() {
  return {"fig3-like", "diminishing-like", "step-decay-like", "quadratic-rate"};
}

namespace {

ExperimentConfig figure_base() {
  ExperimentConfig c;
  c.problem.kind = "logistic";
  c.problem.batch = 64;
  c.dataset.kind = "blobs";
  c.dataset.classes = 10;
  c.dataset.per_class = 100;
  c.dataset.test_per_class = 20;
  c.dataset.dim = 10;
  c.dataset.spread = 1.0;
  c.run.workers = 10;
  c.run.rounds = 400;
  c.run.seeds = {1, 2, 3, 4, 5};
  c.local.T = 30;
  c.local.inner_lr = 0.1;
  c.local.inner_iters = 50;
  c.local.rescale_by_T = false;
  c.local.cap_policy = "report";
  c.compressor.fraction = 0.01;
  return c;
}

std::vector<std::pair<std::string, ExperimentConfig>> algorithm_grid(const ExperimentConfig& base) {
  std::vector<std::pair<std::string, ExperimentConfig>> out;
  for (auto mode : {PartitionMode::kIid, PartitionMode::kNonIid2, PartitionMode::kNonIid1}) {
    for (std::string algo : {"fedavg", "fedprox", "ef_fedavg", "ef_fedprox"}) {
      ExperimentConfig c = base;
      c.partition_mode = mode;
      c.local.kind = algo.find("fedprox") != std::string::npos ? "prox" : "gradient";
      if (algo.rfind("ef_", 0) == 0) {
        c.run.algorithm = "error_feedback";
        c.compressor.kind = "topk";
      } else {
        c.run.algorithm = "full_precision";
        c.compressor = CompressorConfig{};
      }
      out.emplace_back(std::string(partition_mode_name(mode)) + "/" + algo, c);
    }
  }
  return out;
}

}  // namespace

std::vector<std::pair<std::string, ExperimentConfig>> preset(const std::string& name) {
  if (name == "fig3-like") {
    auto base = figure_base();
    base.schedule.kind = "fixed";
    base.schedule.c = 2.0;
    return algorithm_grid(base);
  }
  if (name == "diminishing-like") {
    auto base = figure_base();
    base.schedule.kind = "diminishing";
    base.schedule.c = 0.8;
    base.schedule.nu = 0.51;
    return algorithm_grid(base);
  }
  if (name == "step-decay-like") {
    auto base = figure_base();
    base.schedule.kind = "step_decay";
    base.schedule.gamma0 = 0.8;
    base.schedule.decay_base = 2.0;
    base.schedule.period = 50;
    return algorithm_grid(base);
  }
  if (name == "quadratic-rate") {
    std::vector<std::pair<std::string, ExperimentConfig>> out;
    for (std::size_t K : {100, 400, 1600, 6400}) {
      ExperimentConfig c;
      c.problem.kind = "quadratic";
      c.problem.dim = 10;
      c.problem.radius = 2.0;
      c.problem.sigma2 = 0.1;
      c.run.workers = 10;
      c.run.rounds = K;
      c.local.kind = "gradient";
      c.local.T = 5;
      c.schedule.kind = "fixed";
      c.schedule.c = 1.0 / std::sqrt(6.0);
      out.emplace_back("K" + std::to_string(K), c);
    }
    return out;
  }
  std::string known;
  for (const auto& n : preset_names()) known += " " + n;
  throw ConfigError("unknown preset '" + name + "'; known:" + known);
}

std::string partition_report_csv(const ExperimentConfig& cfg) {
  validate_config(cfg);
  if (!cfg.uses_dataset()) throw ConfigError("partition-report needs a dataset problem");
  const auto [train, test] = build_datasets(cfg);
  const auto part = build_partition(cfg, train);
  const auto hist = class_histograms(train, part);
  std::ostringstream out;
  out << "worker";
  for (std::size_t c = 0; c < train.classes; ++c) out << ",class_" << c;
  out << ",total\n";
  for (std::size_t i = 0; i < hist.size(); ++i) {
    out << i;
    std::size_t total = 0;
    for (auto v : hist[i]) {
      out << ',' << v;
      total += v;
    }
    out << ',' << total << '\n';
  }
  return out.str();
}

nlohmann::ordered_json partition_report_json(const ExperimentConfig& cfg) {
  validate_config(cfg);
  if (!cfg.uses_dataset()) throw ConfigError("partition-report needs a dataset problem");
  const auto [train, test] = build_datasets(cfg);
  const auto part = build_partition(cfg, train);
  json j;
  j["mode"] = std::string(partition_mode_name(cfg.partition_mode));
  j["workers"] = part.workers();
  j["classes"] = train.classes;
  j["dropped"] = part.dropped;
  j["histograms"] = class_histograms(train, part);
  return j;
}

}  // namespace fedbound
