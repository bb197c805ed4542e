#pragma once

#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "natex/config.hpp"
#include "natex/csv.hpp"
#include "natex/dataset.hpp"
#include "natex/errors.hpp"
#include "natex/estimators.hpp"
#include "natex/learners.hpp"
#include "natex/metrics.hpp"

namespace natex {

// One estimator invocation inside one run.
struct RunRecord {
  std::size_t run = 0;
  std::string estimator;
  bool failed = false;
  double estimate = 0.0;
  double true_ate = 0.0;  // that run's ground-truth effect
  double squared_error = 0.0;
  double elapsed_s = 0.0;
  std::string message;
};

struct BenchmarkTable {
  std::vector<std::pair<std::string, RunSummary>> rows;  // configuration order
  std::vector<RunRecord> run_log;                        // run-major order
  std::string provenance;
};

struct SweepSeries {
  std::string estimator;
  std::vector<double> median;
  std::vector<double> q1;
  std::vector<double> q3;
};

struct SweepResult {
  std::string axis_name;
  std::vector<double> axis_values;
  std::vector<SweepSeries> series;
};

namespace detail {

// Runs fn(0..count-1) with at most `parallelism` worker threads; each index
// writes only its own slot, so results do not depend on scheduling.
template <typename Fn>
void parallel_for_indexed(std::size_t count, std::size_t parallelism, Fn&& fn) {
  if (parallelism <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  const std::size_t workers = std::min(parallelism, count);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// Sweep hooks layered onto the per-run pipeline.
struct RunModifiers {
  double extra_outcome_noise_sd = 0.0;   // added to both potential outcomes
  std::optional<double> propensity_noise_level;  // perturb true p given to estimators
};

struct RunOutput {
  std::vector<RunRecord> records;
  double bce = 0.0;  // cross entropy of the propensities handed to estimators
};

inline RunOutput run_single_benchmark_run(const BenchmarkConfig& cfg, const FullDataset& base,
                                          bool regenerate_outcomes, const RunModifiers& mods,
                                          std::size_t run_index) {
  const std::uint64_t run_seed = derive_seed(cfg.master_seed, run_index);

  FullDataset sub;
  const auto base_n = static_cast<std::size_t>(base.size());
  if (cfg.subsample && *cfg.subsample < base_n) {
    sub = subsample(base, *cfg.subsample, derive_seed(run_seed, 0));
  } else {
    sub = base;
  }

  if (regenerate_outcomes) {
    auto [y0, y1] = generate_outcomes(sub.propensity, cfg.generation.effect_scale,
                                      cfg.generation.outcome_noise_sd, derive_seed(run_seed, 1));
    sub.y0 = std::move(y0);
    sub.y1 = std::move(y1);
  }
  if (mods.extra_outcome_noise_sd > 0) {
    sub.y0 = add_outcome_noise(sub.y0, mods.extra_outcome_noise_sd, derive_seed(run_seed, 5));
    sub.y1 = add_outcome_noise(sub.y1, mods.extra_outcome_noise_sd, derive_seed(run_seed, 6));
  }
  sub.true_ate = (sub.y1 - sub.y0).mean();

  const IntVector z = sample_treatment(sub.propensity, derive_seed(run_seed, 2));
  const ObservedDataset obs = observe(sub, z);

  Vector p_est;
  if (mods.propensity_noise_level) {
    p_est = perturb_propensities(sub.propensity, *mods.propensity_noise_level,
                                 derive_seed(run_seed, 4));
  } else {
    switch (cfg.propensity_source) {
      case PropensitySource::kTrue:
        p_est = sub.propensity;
        break;
      case PropensitySource::kEstimated:
      case PropensitySource::kEstimatedThenTruncated:
        // fit_propensity already truncates to [0.01, 0.99]
        p_est = fit_propensity(obs.covariates, obs.z, cfg.learner, derive_seed(run_seed, 3));
        break;
    }
  }

  RunOutput out;
  out.bce = binary_cross_entropy(p_est, z);

  EstimatorContext ctx;
  ctx.spec = cfg.learner;
  ctx.rd_window = cfg.rd_window;
  ctx.strat_bins = cfg.strat_bins;
  for (std::size_t idx = 0; idx < cfg.estimators.size(); ++idx) {
    const std::string& name = cfg.estimators[idx];
    ctx.seed = derive_seed(run_seed, 100 + idx);
    RunRecord record;
    record.run = run_index;
    record.estimator = name;
    record.true_ate = sub.true_ate;
    try {
      const EstimatorResult res = run_estimator(name, obs, p_est, ctx);
      record.estimate = res.estimate;
      record.squared_error = squared_error(res.estimate, sub.true_ate);
      record.elapsed_s = res.elapsed_s;
    } catch (const error& e) {
      record.failed = true;
      record.message = e.what();
    }
    out.records.push_back(std::move(record));
  }
  return out;
}

inline std::string benchmark_provenance(const BenchmarkConfig& cfg) {
  std::ostringstream os;
  os << "master_seed=" << cfg.master_seed << " runs=" << cfg.runs;
  if (cfg.subsample) os << " subsample=" << *cfg.subsample;
  os << " propensity_source=" << propensity_source_name(cfg.propensity_source)
     << " learner=" << regressor_kind_name(cfg.learner.kind);
  if (cfg.dataset_csv) {
    os << " dataset=" << *cfg.dataset_csv;
  } else {
    os << " dataset=generated(n=" << cfg.generation.n << ",d=" << cfg.generation.d
       << ",seed=" << cfg.generation.seed << ")";
  }
  os << " estimators=";
  for (std::size_t i = 0; i < cfg.estimators.size(); ++i) {
    if (i) os << "|";
    os << cfg.estimators[i];
  }
  os << " timing=per-estimator-call,excludes-shared-propensity-fit";
  return os.str();
}

inline BenchmarkTable run_benchmark_impl(const BenchmarkConfig& cfg, const RunModifiers& mods,
                                         double* mean_bce_out) {
  cfg.validate();
  FullDataset base;
  bool regenerate_outcomes = false;
  if (cfg.dataset_csv) {
    base = load_full_csv(*cfg.dataset_csv);
  } else {
    base = generate_dataset(cfg.generation);
    regenerate_outcomes = true;
  }
  if (cfg.subsample && *cfg.subsample > static_cast<std::size_t>(base.size())) {
    throw config_error("benchmark config: subsample exceeds dataset size");
  }

  std::vector<RunOutput> outputs(cfg.runs);
  parallel_for_indexed(cfg.runs, cfg.parallelism, [&](std::size_t k) {
    outputs[k] = run_single_benchmark_run(cfg, base, regenerate_outcomes, mods, k);
  });

  BenchmarkTable table;
  table.provenance = benchmark_provenance(cfg);
  for (std::size_t k = 0; k < cfg.runs; ++k) {
    for (auto& record : outputs[k].records) table.run_log.push_back(record);
  }
  for (std::size_t idx = 0; idx < cfg.estimators.size(); ++idx) {
    const std::string& name = cfg.estimators[idx];
    std::vector<double> errors, times;
    std::size_t failures = 0;
    for (std::size_t k = 0; k < cfg.runs; ++k) {
      const RunRecord& record = outputs[k].records[idx];
      if (record.failed) {
        ++failures;
      } else {
        errors.push_back(record.squared_error);
        times.push_back(record.elapsed_s);
      }
    }
    RunSummary summary;
    if (!errors.empty()) summary = quartile_summary(errors, times);
    summary.failures = failures;
    table.rows.emplace_back(name, summary);
  }
  if (mean_bce_out) {
    KahanSum bce;
    for (const auto& out : outputs) bce.add(out.bce);
    *mean_bce_out = bce.value() / static_cast<double>(cfg.runs);
  }
  return table;
}

inline std::string format_sci3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2e", v);
  return buf;
}

}  // namespace detail

// Full benchmark: per run, fresh outcomes (for generated data), fresh
// assignment, propensity estimation per the configured source, then every
// configured estimator with squared error against that run's true effect.
// Deterministic in (config, master_seed) and independent of parallelism.
inline BenchmarkTable run_benchmark(const BenchmarkConfig& cfg) {
  return detail::run_benchmark_impl(cfg, {}, nullptr);
}

// Re-runs the benchmark at each subsample size.
inline SweepResult sweep_by_n(const BenchmarkConfig& cfg, const std::vector<std::size_t>& ns) {
  SweepResult result;
  result.axis_name = "n";
  std::vector<BenchmarkTable> tables;
  for (const std::size_t n : ns) {
    BenchmarkConfig level_cfg = cfg;
    level_cfg.subsample = n;
    tables.push_back(detail::run_benchmark_impl(level_cfg, {}, nullptr));
    result.axis_values.push_back(static_cast<double>(n));
  }
  for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
    SweepSeries series;
    series.estimator = cfg.estimators[e];
    for (const auto& table : tables) {
      series.median.push_back(table.rows[e].second.median);
      series.q1.push_back(table.rows[e].second.q1);
      series.q3.push_back(table.rows[e].second.q3);
    }
    result.series.push_back(std::move(series));
  }
  return result;
}

// Adds outcome noise at each level; the axis is the average of the distance
// correlations between the propensities and each noised potential outcome,
// computed on a 2000-row metric subsample.
inline SweepResult sweep_by_correlation(const BenchmarkConfig& cfg,
                                        const std::vector<double>& noise_sds) {
  cfg.validate();
  if (cfg.dataset_csv) {
    throw config_error("sweep_by_correlation requires a generated dataset");
  }
  for (double sd : noise_sds) {
    if (sd < 0) throw config_error("sweep_by_correlation: noise levels must be >= 0");
  }
  const FullDataset base = generate_dataset(cfg.generation);

  SweepResult result;
  result.axis_name = "distance_correlation";
  std::vector<BenchmarkTable> tables;
  const std::size_t metric_rows = std::min<std::size_t>(2000, base.size());
  for (std::size_t level = 0; level < noise_sds.size(); ++level) {
    const double sd = noise_sds[level];
    detail::RunModifiers mods;
    mods.extra_outcome_noise_sd = sd;
    tables.push_back(detail::run_benchmark_impl(cfg, mods, nullptr));

    // Axis label from a level-seeded noised copy of the base data.
    const std::uint64_t metric_seed = derive_seed(cfg.master_seed, 0xd0c0 + level);
    FullDataset metric = subsample(base, metric_rows, derive_seed(metric_seed, 0));
    const Vector y0 = add_outcome_noise(metric.y0, sd, derive_seed(metric_seed, 1));
    const Vector y1 = add_outcome_noise(metric.y1, sd, derive_seed(metric_seed, 2));
    const double axis = 0.5 * (distance_correlation(metric.propensity, y1) +
                               distance_correlation(metric.propensity, y0));
    result.axis_values.push_back(axis);
  }
  for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
    SweepSeries series;
    series.estimator = cfg.estimators[e];
    for (const auto& table : tables) {
      series.median.push_back(table.rows[e].second.median);
      series.q1.push_back(table.rows[e].second.q1);
      series.q3.push_back(table.rows[e].second.q3);
    }
    result.series.push_back(std::move(series));
  }
  return result;
}

// Estimators evaluated in the propensity-accuracy sweep: the methods that
// consume externally supplied propensities or adjust directly.
inline std::vector<std::string> entropy_sweep_estimators() {
  return {"regression-discontinuity", "propensity-stratification", "adjusted-direct",
          "off-policy",               "double-double",             "doubly-robust"};
}

// Perturbs the propensities handed to the estimators on the log-odds scale
// (outcomes untouched); the axis is the mean cross entropy between the
// perturbed propensities and the sampled assignments.
inline SweepResult sweep_by_entropy(const BenchmarkConfig& cfg,
                                    const std::vector<double>& levels) {
  for (double level : levels) {
    if (level < 0) throw config_error("sweep_by_entropy: levels must be >= 0");
  }
  BenchmarkConfig level_cfg = cfg;
  level_cfg.estimators = entropy_sweep_estimators();

  SweepResult result;
  result.axis_name = "cross_entropy";
  std::vector<BenchmarkTable> tables;
  for (const double level : levels) {
    detail::RunModifiers mods;
    mods.propensity_noise_level = level;
    double mean_bce = 0.0;
    tables.push_back(detail::run_benchmark_impl(level_cfg, mods, &mean_bce));
    result.axis_values.push_back(mean_bce);
  }
  for (std::size_t e = 0; e < level_cfg.estimators.size(); ++e) {
    SweepSeries series;
    series.estimator = level_cfg.estimators[e];
    for (const auto& table : tables) {
      series.median.push_back(table.rows[e].second.median);
      series.q1.push_back(table.rows[e].second.q1);
      series.q3.push_back(table.rows[e].second.q3);
    }
    result.series.push_back(std::move(series));
  }
  return result;
}

enum class TableFormat { kMarkdown, kCsv };

// Renders the summary table. Numbers use scientific notation with three
// significant digits.
inline std::string emit_table(const BenchmarkTable& table, TableFormat format) {
  if (table.rows.empty()) throw validation_error("emit_table: empty table");
  std::ostringstream os;
  if (format == TableFormat::kCsv) {
    os << "Method,Mean,1st Quartile,2nd Quartile,3rd Quartile,Time (s)\n";
    for (const auto& [name, s] : table.rows) {
      os << name << "," << detail::format_sci3(s.mean) << "," << detail::format_sci3(s.q1)
         << "," << detail::format_sci3(s.median) << "," << detail::format_sci3(s.q3) << ","
         << detail::format_sci3(s.mean_time_s) << "\n";
    }
  } else {
    os << "| Method | Mean | 1st Quartile | 2nd Quartile | 3rd Quartile | Time (s) |\n";
    os << "| --- | --- | --- | --- | --- | --- |\n";
    for (const auto& [name, s] : table.rows) {
      os << "| " << name << " | " << detail::format_sci3(s.mean) << " | "
         << detail::format_sci3(s.q1) << " | " << detail::format_sci3(s.median) << " | "
         << detail::format_sci3(s.q3) << " | " << detail::format_sci3(s.mean_time_s) << " |\n";
    }
  }
  return os.str();
}

// Parses the CSV rendering of a summary table (inverse of emit_table at
// three significant digits).
inline std::vector<std::pair<std::string, RunSummary>> parse_table_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::pair<std::string, RunSummary>> rows;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 6) throw parse_error("table csv: expected 6 columns");
    RunSummary s;
    s.mean = std::stod(cells[1]);
    s.q1 = std::stod(cells[2]);
    s.median = std::stod(cells[3]);
    s.q3 = std::stod(cells[4]);
    s.mean_time_s = std::stod(cells[5]);
    rows.emplace_back(cells[0], s);
  }
  return rows;
}

// Long-format sweep CSV: one row per (estimator, axis point); the axis
// column is named after the sweep axis. Full-precision values.
inline std::string emit_sweep(const SweepResult& result) {
  if (result.series.empty() || result.axis_values.empty()) {
    throw validation_error("emit_sweep: empty sweep");
  }
  std::ostringstream os;
  os << "estimator," << result.axis_name << ",median,q1,q3\n";
  for (const auto& series : result.series) {
    for (std::size_t a = 0; a < result.axis_values.size(); ++a) {
      os << series.estimator << "," << detail::format_double(result.axis_values[a]) << ","
         << detail::format_double(series.median[a]) << ","
         << detail::format_double(series.q1[a]) << "," << detail::format_double(series.q3[a])
         << "\n";
    }
  }
  return os.str();
}

inline SweepResult parse_sweep(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  SweepResult result;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 5) throw parse_error("sweep csv: expected 5 columns");
    if (header) {
      result.axis_name = cells[1];
      header = false;
      continue;
    }
    const double axis = std::stod(cells[1]);
    if (result.series.empty() || result.series.back().estimator != cells[0]) {
      result.series.push_back(SweepSeries{cells[0], {}, {}, {}});
    }
    auto& series = result.series.back();
    series.median.push_back(std::stod(cells[2]));
    series.q1.push_back(std::stod(cells[3]));
    series.q3.push_back(std::stod(cells[4]));
    if (result.series.size() == 1) result.axis_values.push_back(axis);
  }
  return result;
}

// Deterministic per-run record CSV. Wall times are deliberately absent:
// every field here is a pure function of the configuration and master seed.
inline std::string emit_run_log(const BenchmarkTable& table) {
  std::ostringstream os;
  os << "run,estimator,status,estimate,true_ate,squared_error\n";
  for (const auto& record : table.run_log) {
    os << record.run << "," << record.estimator << ","
       << (record.failed ? "failed" : "ok") << ",";
    if (record.failed) {
      os << "," << detail::format_double(record.true_ate) << ",";
    } else {
      os << detail::format_double(record.estimate) << ","
         << detail::format_double(record.true_ate) << ","
         << detail::format_double(record.squared_error);
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace natex
