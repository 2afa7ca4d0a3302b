#include "fedbound/federated.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include <spdlog/spdlog.h>
#include <tbb/blocked_range.h>
#include <tbb/global_control.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include "fedbound/errors.hpp"

namespace fedbound {

// The global_control lifts TBB's default worker limit (the core count), so
// the requested thread count is honoured even on small machines.
struct FederatedEngine::Arena {
  explicit Arena(std::size_t threads)
      : limit(tbb::global_control::max_allowed_parallelism, threads),
        arena(static_cast<int>(threads)) {}
  tbb::global_control limit;
  tbb::task_arena arena;
};

namespace {

void validate_engine(const EngineConfig& cfg, Algorithm algorithm) {
  std::vector<std::string> issues;
  if (cfg.workers.empty()) issues.emplace_back("engine: no workers");
  if (!cfg.global) issues.emplace_back("engine: global objective missing");
  if (cfg.threads == 0) issues.emplace_back("--threads must be at least 1");
  if (!(cfg.step_cap > 0.0)) issues.emplace_back("engine: step cap must be positive");
  if (!cfg.x0.all_finite()) issues.emplace_back("engine: initial point is not finite");
  for (const auto& w : cfg.workers) {
    if (!w) {
      issues.emplace_back("engine: null worker objective");
    } else if (w->dimension() != cfg.x0.size()) {
      issues.emplace_back("engine: worker dimension " + std::to_string(w->dimension()) +
                          " differs from the initial point's " + std::to_string(cfg.x0.size()));
      break;
    }
  }
  if (cfg.global && cfg.global->dimension() != cfg.x0.size()) {
    issues.emplace_back("engine: global objective dimension differs from the initial point's");
  }
  try {
    validate(cfg.local);
  } catch (const ConfigError& e) {
    issues.insert(issues.end(), e.issues().begin(), e.issues().end());
  }
  try {
    validate(cfg.schedule);
  } catch (const ConfigError& e) {
    issues.insert(issues.end(), e.issues().begin(), e.issues().end());
  }
  if (algorithm == Algorithm::kErrorFeedback) {
    if (!cfg.compressor) {
      issues.emplace_back("error feedback needs a compressor");
    } else if (const auto* topk = std::get_if<TopKCompressor>(&*cfg.compressor)) {
      if (topk->k == 0 || topk->k > cfg.x0.size()) {
        issues.emplace_back("compressor.k=" + std::to_string(topk->k) + " must lie in [1, d=" +
                            std::to_string(cfg.x0.size()) + "]");
      }
    }
  }
  if (!issues.empty()) throw ConfigError(std::move(issues));
}

}  // namespace

FederatedEngine::FederatedEngine(EngineConfig cfg, Algorithm algorithm)
    : cfg_(std::move(cfg)), algorithm_(algorithm) {
  validate_engine(cfg_, algorithm_);
  server_.x = cfg_.x0;
  workers_.reserve(cfg_.workers.size());
  for (std::size_t i = 0; i < cfg_.workers.size(); ++i) {
    workers_.push_back(WorkerState{cfg_.workers[i], ParamVector(cfg_.x0.size()),
                                   StreamFamily{cfg_.seed, i, 0}});
  }
  last_gradient_sum_ = ParamVector(cfg_.x0.size());
  if (cfg_.threads > 1) arena_ = std::make_unique<Arena>(cfg_.threads);
}

FederatedEngine::~FederatedEngine() = default;

void FederatedEngine::step() {
  const std::size_t k = server_.round;
  const double raw = step_size(cfg_.schedule, k);
  const bool gradient_steps = std::holds_alternative<GradientSteps>(cfg_.local);
  const std::size_t steps = local_steps(cfg_.local);
  const bool scale_up = gradient_steps && !cfg_.rescale_by_T;

  double alpha = scale_up ? raw * static_cast<double>(steps) : raw;
  bool clamped = false;
  if (alpha > cfg_.step_cap) {
    ++cap_exceeded_;
    if (cfg_.cap_policy == CapPolicy::kClamp) {
      if (!warned_) {
        spdlog::warn("round {}: step {:.6g} exceeds the cap {:.6g}; clamping", k, alpha,
                     cfg_.step_cap);
        warned_ = true;
      }
      alpha = cfg_.step_cap;
      clamped = true;
    }
  }
  double inner = alpha;
  if (gradient_steps) inner = (scale_up && !clamped) ? raw : alpha / static_cast<double>(steps);

  const std::size_t n = workers_.size();
  std::vector<ParamVector> sent(n);
  std::vector<ParamVector> gsums(cfg_.track_gradients ? n : 0);

  auto work = [&](std::size_t i) {
    WorkerState& w = workers_[i];
    w.streams.round = k;
    ParamVector u;
    if (gradient_steps) {
      std::vector<ParamVector> grads;
      u = gradient_steps_displacement(*w.objective, server_.x, inner, steps, w.streams,
                                      cfg_.track_gradients ? &grads : nullptr);
      if (cfg_.track_gradients) {
        ParamVector acc(server_.x.size());
        for (const auto& g : grads) acc += g;
        gsums[i] = std::move(acc);
      }
    } else {
      ParamVector g;
      u = prox_displacement(*w.objective, server_.x, inner, std::get<Proximal>(cfg_.local),
                            w.streams, cfg_.track_gradients ? &g : nullptr);
      if (cfg_.track_gradients) gsums[i] = std::move(g);
    }
    if (algorithm_ == Algorithm::kErrorFeedback) {
      ParamVector v = u + w.error;
      ParamVector q = compress(*cfg_.compressor, v);
      w.error = v - q;
      sent[i] = std::move(q);
    } else {
      sent[i] = std::move(u);
    }
  };

  if (arena_) {
    arena_->arena.execute([&] {
      tbb::parallel_for(tbb::blocked_range<std::size_t>(0, n, 1),
                        [&](const tbb::blocked_range<std::size_t>& r) {
                          for (std::size_t i = r.begin(); i != r.end(); ++i) work(i);
                        });
    });
  } else {
    for (std::size_t i = 0; i < n; ++i) work(i);
  }

  server_.x += mean_reduce(sent);
  if (!server_.x.all_finite()) {
    throw DivergenceError("non-finite server model after round " + std::to_string(k));
  }
  if (cfg_.track_gradients) {
    ParamVector acc(server_.x.size());
    for (const auto& g : gsums) acc += g;
    last_gradient_sum_ = std::move(acc);
  }
  last_step_ = alpha;
  last_inner_ = inner;
  server_.round = k + 1;
}

RoundRow FederatedEngine::metrics() const {
  RoundRow row;
  row.round = server_.round;
  row.loss_gap = cfg_.global->value(server_.x) - cfg_.f_inf;
  row.grad_norm_sq = l2_norm_sq(cfg_.global->full_gradient(server_.x));
  double err = 0.0;
  for (const auto& w : workers_) err += l2_norm_sq(w.error);
  row.err_norm_sq = err / static_cast<double>(workers_.size());
  if (cfg_.accuracy) row.test_acc = cfg_.accuracy(server_.x);
  if (!std::isfinite(row.loss_gap) || !std::isfinite(row.grad_norm_sq)) {
    throw DivergenceError("non-finite loss or gradient at round " + std::to_string(row.round));
  }
  return row;
}

RunRecord run_algorithm(const EngineConfig& cfg, Algorithm algorithm) {
  FederatedEngine engine(cfg, algorithm);
  RunRecord record;
  record.seed = cfg.seed;
  record.step_cap = cfg.step_cap;
  record.rows.reserve(cfg.rounds + 1);
  try {
    record.rows.push_back(engine.metrics());
    for (std::size_t k = 0; k < cfg.rounds; ++k) {
      engine.step();
      record.rows.back().gamma = engine.last_round_step();
      record.rows.push_back(engine.metrics());
    }
  } catch (const DivergenceError& e) {
    record.diverged = true;
    record.message = e.what();
    spdlog::warn("seed {}: {}", cfg.seed, e.what());
  }
  record.cap_exceeded = engine.cap_exceeded();
  return record;
}

RunRecord run_full_precision(const EngineConfig& cfg) {
  return run_algorithm(cfg, Algorithm::kFullPrecision);
}

RunRecord run_error_feedback(const EngineConfig& cfg) {
  return run_algorithm(cfg, Algorithm::kErrorFeedback);
}

ParamVector virtual_iterate(const ServerState& server, const std::vector<WorkerState>& workers) {
  if (workers.empty()) return server.x;
  std::vector<ParamVector> errors;
  errors.reserve(workers.size());
  for (const auto& w : workers) errors.push_back(w.error);
  return server.x + mean_reduce(errors);
}

namespace {

struct MeanStd {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();
};

MeanStd mean_std(const std::vector<double>& xs) {
  std::vector<double> finite;
  for (double x : xs) {
    if (!std::isnan(x)) finite.push_back(x);
  }
  MeanStd out;
  if (finite.empty()) return out;
  double sum = 0.0;
  for (double x : finite) sum += x;
  out.mean = sum / static_cast<double>(finite.size());
  double ss = 0.0;
  for (double x : finite) ss += (x - out.mean) * (x - out.mean);
  out.std = finite.size() > 1 ? std::sqrt(ss / static_cast<double>(finite.size() - 1)) : 0.0;
  return out;
}

}  // namespace

std::vector<AggregateRow> aggregate_records(const std::vector<RunRecord>& records) {
  std::size_t longest = 0;
  for (const auto& r : records) longest = std::max(longest, r.rows.size());
  std::vector<AggregateRow> out;
  out.reserve(longest);
  for (std::size_t k = 0; k < longest; ++k) {
    std::vector<double> gamma, loss, grad, err, acc;
    for (const auto& r : records) {
      if (k >= r.rows.size()) continue;
      const auto& row = r.rows[k];
      gamma.push_back(row.gamma);
      loss.push_back(row.loss_gap);
      grad.push_back(row.grad_norm_sq);
      err.push_back(row.err_norm_sq);
      acc.push_back(row.test_acc);
    }
    AggregateRow a;
    a.round = k;
    a.seeds = loss.size();
    a.gamma = mean_std(gamma).mean;
    const auto l = mean_std(loss);
    const auto g = mean_std(grad);
    const auto e = mean_std(err);
    const auto t = mean_std(acc);
    a.loss_gap_mean = l.mean;
    a.loss_gap_std = l.std;
    a.grad_norm_sq_mean = g.mean;
    a.grad_norm_sq_std = g.std;
    a.err_norm_sq_mean = e.mean;
    a.err_norm_sq_std = e.std;
    a.test_acc_mean = t.mean;
    a.test_acc_std = t.std;
    out.push_back(a);
  }
  return out;
}

std::string_view algorithm_name(Algorithm algorithm) {
  return algorithm == Algorithm::kFullPrecision ? "full_precision" : "error_feedback";
}

std::string format_real(double v) {
  if (std::isnan(v)) return {};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_run_csv(std::ostream& out, const RunRecord& record) {
  out << "round,gamma,loss_gap,grad_norm_sq,err_norm_sq,test_acc\n";
  for (const auto& r : record.rows) {
    out << r.round << ',' << format_real(r.gamma) << ',' << format_real(r.loss_gap) << ','
        << format_real(r.grad_norm_sq) << ',' << format_real(r.err_norm_sq) << ','
        << format_real(r.test_acc) << '\n';
  }
}

void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows) {
  out << "round,gamma,loss_gap_mean,loss_gap_std,grad_norm_sq_mean,grad_norm_sq_std,"
         "err_norm_sq_mean,err_norm_sq_std,test_acc_mean,test_acc_std,seeds\n";
  for (const auto& r : rows) {
    out << r.round << ',' << format_real(r.gamma) << ',' << format_real(r.loss_gap_mean) << ','
        << format_real(r.loss_gap_std) << ',' << format_real(r.grad_norm_sq_mean) << ','
        << format_real(r.grad_norm_sq_std) << ',' << format_real(r.err_norm_sq_mean) << ','
        << format_real(r.err_norm_sq_std) << ',' << format_real(r.test_acc_mean) << ','
        << format_real(r.test_acc_std) << ',' << r.seeds << '\n';
  }
}

RunRecord read_run_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "round,gamma,loss_gap,grad_norm_sq,err_norm_sq,test_acc") {
    throw IngestionError("run csv: unexpected header");
  }
  RunRecord record;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() != 6) {
      throw IngestionError("run csv line " + std::to_string(lineno) + ": expected 6 fields");
    }
    auto real = [&](const std::string& s) {
      if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
      try {
        return std::stod(s);
      } catch (const std::exception&) {
        throw IngestionError("run csv line " + std::to_string(lineno) + ": bad number '" + s + "'");
      }
    };
    RoundRow row;
    row.round = static_cast<std::size_t>(real(fields[0]));
    row.gamma = real(fields[1]);
    row.loss_gap = real(fields[2]);
    row.grad_norm_sq = real(fields[3]);
    row.err_norm_sq = real(fields[4]);
    row.test_acc = real(fields[5]);
    record.rows.push_back(row);
  }
  return record;
}

}  // namespace fedbound
