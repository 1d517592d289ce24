#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "latmix/dataset.hpp"
#include "latmix/distributions.hpp"
#include "latmix/errors.hpp"
#include "latmix/model.hpp"

namespace latmix {

/// One tail-probability curve: ascending latency grid, nonincreasing
/// probabilities.
struct CcdfCurve {
  std::vector<double> grid_ms;
  std::vector<double> probs;
  std::string label;
  std::vector<double> condition;

  void validate() const {
    if (grid_ms.size() != probs.size()) {
      throw ConfigError("CcdfCurve: grid/probs length mismatch");
    }
    for (std::size_t i = 1; i < grid_ms.size(); ++i) {
      if (!(grid_ms[i] >= grid_ms[i - 1])) {
        throw ConfigError("CcdfCurve: grid must be ascending");
      }
      if (probs[i] > probs[i - 1] + 1e-12) {
        throw ConfigError("CcdfCurve: probabilities must be nonincreasing");
      }
    }
  }
};

/// Exact counting estimate: probs[j] = |{y_i > grid[j]}| / n.
inline CcdfCurve empirical_ccdf(std::span<const double> samples_ms,
                                std::vector<double> grid_ms,
                                std::string label = "empirical") {
  if (samples_ms.empty()) throw ConfigError("empirical_ccdf: empty sample set");
  std::vector<double> sorted(samples_ms.begin(), samples_ms.end());
  std::sort(sorted.begin(), sorted.end());
  CcdfCurve curve;
  curve.label = std::move(label);
  curve.grid_ms = std::move(grid_ms);
  curve.probs.reserve(curve.grid_ms.size());
  const double n = static_cast<double>(sorted.size());
  for (double g : curve.grid_ms) {
    const auto above = sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), g);
    curve.probs.push_back(static_cast<double>(above) / n);
  }
  return curve;
}

/// Model tail probabilities over a grid in original milliseconds; the
/// condition is raw (unnormalized), latency denormalization comes from the
/// stored statistics.
inline CcdfCurve predict_ccdf(const ModelWeights& model,
                              std::span<const double> condition_raw,
                              const std::vector<double>& grid_ms,
                              std::string label = "model") {
  const Eigen::VectorXd x = model.normalization.normalize_conditions(condition_raw);
  const SplicedMixtureParams theta =
      forward(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
              model);
  CcdfCurve curve;
  curve.label = std::move(label);
  curve.condition.assign(condition_raw.begin(), condition_raw.end());
  curve.grid_ms = grid_ms;
  curve.probs.reserve(grid_ms.size());
  for (double g : grid_ms) {
    curve.probs.push_back(
        detail::spliced_ccdf_unchecked(model.normalization.to_normalized_latency(g), theta));
  }
  return curve;
}

/// Model quantile (in ms) at cdf level p for a raw condition.
inline double predict_quantile(const ModelWeights& model,
                               std::span<const double> condition_raw, double p) {
  const Eigen::VectorXd x = model.normalization.normalize_conditions(condition_raw);
  const SplicedMixtureParams theta =
      forward(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
              model);
  return model.normalization.to_latency_ms(spliced_quantile(p, theta));
}

struct Band {
  CcdfCurve min;
  CcdfCurve avg;
  CcdfCurve max;
};

/// Pointwise min / mean / max over curves sharing one grid.
inline Band ensemble_bands(const std::vector<CcdfCurve>& curves) {
  if (curves.empty()) throw ConfigError("ensemble_bands: no curves");
  const std::vector<double>& grid = curves.front().grid_ms;
  for (const auto& c : curves) {
    if (c.grid_ms != grid) throw ConfigError("ensemble_bands: grid mismatch");
  }
  Band band;
  band.min.grid_ms = band.avg.grid_ms = band.max.grid_ms = grid;
  band.min.label = "band_min";
  band.avg.label = "band_avg";
  band.max.label = "band_max";
  band.min.condition = band.avg.condition = band.max.condition =
      curves.front().condition;
  const std::size_t m = grid.size();
  band.min.probs.assign(m, std::numeric_limits<double>::infinity());
  band.max.probs.assign(m, -std::numeric_limits<double>::infinity());
  band.avg.probs.assign(m, 0.0);
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < m; ++i) {
      band.min.probs[i] = std::min(band.min.probs[i], c.probs[i]);
      band.max.probs[i] = std::max(band.max.probs[i], c.probs[i]);
      band.avg.probs[i] += c.probs[i];
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    band.avg.probs[i] /= static_cast<double>(curves.size());
  }
  return band;
}

/// Quantile of a tabulated curve at tail probability `level`:
/// log-probability interpolation between bracketing grid points, never
/// extrapolation.
inline std::optional<double> curve_quantile(const CcdfCurve& curve, double level) {
  if (curve.grid_ms.empty()) return std::nullopt;
  if (level > curve.probs.front()) return std::nullopt;
  for (std::size_t i = 0; i < curve.probs.size(); ++i) {
    if (curve.probs[i] <= level) {
      if (curve.probs[i] == level || i == 0) return curve.grid_ms[i];
      const double hi_p = curve.probs[i - 1];
      const double lo_p = curve.probs[i];
      // A crossing into an exactly-zero bin cannot be interpolated; the true
      // quantile lies beyond what the curve resolves.
      if (lo_p <= 0.0) return std::nullopt;
      if (hi_p <= lo_p) return curve.grid_ms[i];
      const double t = (std::log(hi_p) - std::log(level)) /
                       (std::log(hi_p) - std::log(lo_p));
      return curve.grid_ms[i - 1] + t * (curve.grid_ms[i] - curve.grid_ms[i - 1]);
    }
  }
  return std::nullopt;  // level below the curve's resolution
}

/// Curve value at latency y: log-interpolated inside the grid.
inline std::optional<double> curve_value(const CcdfCurve& curve, double y) {
  if (curve.grid_ms.empty() || y < curve.grid_ms.front() ||
      y > curve.grid_ms.back()) {
    return std::nullopt;
  }
  auto it = std::lower_bound(curve.grid_ms.begin(), curve.grid_ms.end(), y);
  std::size_t i = static_cast<std::size_t>(it - curve.grid_ms.begin());
  if (i < curve.grid_ms.size() && curve.grid_ms[i] == y) return curve.probs[i];
  const double x0 = curve.grid_ms[i - 1];
  const double x1 = curve.grid_ms[i];
  const double p0 = curve.probs[i - 1];
  const double p1 = curve.probs[i];
  if (p0 <= 0.0) return 0.0;
  if (p1 <= 0.0) return std::nullopt;  // cannot log-interpolate into zero
  const double t = (y - x0) / (x1 - x0);
  return std::exp(std::log(p0) + t * (std::log(p1) - std::log(p0)));
}

/// Tail accuracy at one probability level. Either metric is marked
/// unavailable when the level lies below the relevant curve's resolution;
/// nothing is extrapolated.
struct TailErrorEntry {
  double level = 0.0;
  bool available = false;           // log10_prob_error resolved
  double log10_prob_error = 0.0;    // log10(predicted_ccdf(y_level) / level)
  bool quantile_available = false;  // quantile_error_ms resolved
  double quantile_error_ms = 0.0;   // predicted quantile minus truth quantile
};

inline constexpr std::array<double, 4> kDefaultTailLevels{1e-2, 1e-3, 1e-4, 1e-5};

/// For each level p: evaluate the predicted curve at the truth's p-quantile
/// and report the log10 probability ratio, plus the horizontal quantile gap
/// where the predicted curve itself reaches p.
inline std::vector<TailErrorEntry> tail_error(const CcdfCurve& predicted,
                                              const CcdfCurve& truth,
                                              std::span<const double> levels) {
  std::vector<TailErrorEntry> out;
  out.reserve(levels.size());
  for (double level : levels) {
    TailErrorEntry entry;
    entry.level = level;
    const std::optional<double> y_level = curve_quantile(truth, level);
    if (y_level) {
      const std::optional<double> predicted_prob = curve_value(predicted, *y_level);
      if (predicted_prob && *predicted_prob > 0.0) {
        entry.available = true;
        entry.log10_prob_error = std::log10(*predicted_prob / level);
      }
      const std::optional<double> predicted_quantile = curve_quantile(predicted, level);
      if (predicted_quantile) {
        entry.quantile_available = true;
        entry.quantile_error_ms = *predicted_quantile - *y_level;
      }
    }
    out.push_back(entry);
  }
  return out;
}

/// Log-spaced ccdf levels, `points` of them from `top` down to `floor`.
inline std::vector<double> ccdf_levels(double top = 0.5, double floor_level = 1e-6,
                                       std::size_t points = 60) {
  std::vector<double> levels;
  levels.reserve(points);
  const double step = (std::log(top) - std::log(floor_level)) /
                      static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) {
    levels.push_back(std::exp(std::log(top) - step * static_cast<double>(i)));
  }
  return levels;
}

/// Evaluation grid: truth quantiles at log-spaced ccdf levels, so points
/// concentrate in the tail exactly where the log-scale comparisons happen.
inline std::vector<double> grid_from_analytic_truth(const SplicedMixtureParams& theta,
                                                    std::span<const double> levels) {
  std::vector<double> grid;
  grid.reserve(levels.size());
  for (double level : levels) grid.push_back(spliced_quantile(1.0 - level, theta));
  std::sort(grid.begin(), grid.end());
  return grid;
}

inline std::vector<double> grid_from_samples(std::span<const double> samples,
                                             std::span<const double> levels) {
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<long long>(sorted.size());
  std::vector<double> grid;
  grid.reserve(levels.size());
  for (double level : levels) {
    // Pick the order statistic with round(level*n) samples above it, so the
    // empirical ccdf at the grid point is the level itself. Levels below the
    // 1/n resolution are skipped, not extrapolated.
    const long long above = std::llround(level * static_cast<double>(n));
    if (above < 1) continue;
    const long long idx = std::max(n - 1 - above, 0LL);
    grid.push_back(sorted[static_cast<std::size_t>(idx)]);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

// ---------------------------------------------------------------------------
// Evaluation report: one JSON document plus per-curve CSVs for plotting.
// ---------------------------------------------------------------------------

struct ConditionReport {
  std::vector<double> condition;
  CcdfCurve truth;
  std::vector<CcdfCurve> model_curves;
  Band band;
  std::vector<TailErrorEntry> metrics;  // ensemble-average curve vs truth
};

struct EvaluationReport {
  std::vector<std::string> condition_names;
  std::vector<ConditionReport> conditions;
  std::vector<std::uint64_t> seeds;
  nlohmann::json config_echo;
};

namespace detail {

inline void write_curve_csv(const CcdfCurve& curve, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write " + path);
  out << "latency_ms,prob\n";
  for (std::size_t i = 0; i < curve.grid_ms.size(); ++i) {
    out << format_double(curve.grid_ms[i]) << ',' << format_double(curve.probs[i])
        << '\n';
  }
}

inline CcdfCurve read_curve_csv(const std::string& path, std::string label) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || !line.starts_with("latency_ms,prob")) {
    throw FormatError(path + ": not a curve CSV");
  }
  CcdfCurve curve;
  curve.label = std::move(label);
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    const auto fields = split_csv_line(line);
    if (fields.size() != 2) throw FormatError(path + ": bad row " + std::to_string(row));
    curve.grid_ms.push_back(parse_double(fields[0], row, "latency_ms"));
    curve.probs.push_back(parse_double(fields[1], row, "prob"));
  }
  return curve;
}

}  // namespace detail

/// Writes report.json plus one CSV per curve into `dir`.
inline void emit_report(const EvaluationReport& report, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json j;
  j["kind"] = "latmix-report";
  j["format_version"] = 1;
  j["seeds"] = report.seeds;
  j["condition_names"] = report.condition_names;
  j["config"] = report.config_echo;
  // The tail metric is this artifact's own construction (the reference
  // evaluation protocol is visual); reports label it explicitly.
  j["metric_definition"] =
      "log10(predicted_ccdf(truth_quantile(level)) / level)";
  j["conditions"] = nlohmann::json::array();
  for (std::size_t c = 0; c < report.conditions.size(); ++c) {
    const ConditionReport& cond = report.conditions[c];
    const std::string prefix = "cond" + std::to_string(c) + "_";
    nlohmann::json cj;
    cj["condition"] = cond.condition;
    const std::string truth_csv = prefix + "truth.csv";
    detail::write_curve_csv(cond.truth, dir + "/" + truth_csv);
    cj["truth"] = {{"csv", truth_csv}, {"label", cond.truth.label}};
    cj["models"] = nlohmann::json::array();
    for (const auto& curve : cond.model_curves) {
      const std::string csv = prefix + curve.label + ".csv";
      detail::write_curve_csv(curve, dir + "/" + csv);
      cj["models"].push_back({{"label", curve.label}, {"csv", csv}});
    }
    const std::string min_csv = prefix + "band_min.csv";
    const std::string avg_csv = prefix + "band_avg.csv";
    const std::string max_csv = prefix + "band_max.csv";
    detail::write_curve_csv(cond.band.min, dir + "/" + min_csv);
    detail::write_curve_csv(cond.band.avg, dir + "/" + avg_csv);
    detail::write_curve_csv(cond.band.max, dir + "/" + max_csv);
    cj["band"] = {{"min", min_csv}, {"avg", avg_csv}, {"max", max_csv}};
    cj["metrics"] = nlohmann::json::array();
    for (const auto& m : cond.metrics) {
      nlohmann::json mj;
      mj["level"] = m.level;
      mj["available"] = m.available;
      mj["log10_prob_error"] =
          m.available ? nlohmann::json(m.log10_prob_error) : nlohmann::json();
      mj["quantile_available"] = m.quantile_available;
      mj["quantile_error_ms"] = m.quantile_available
                                    ? nlohmann::json(m.quantile_error_ms)
                                    : nlohmann::json();
      cj["metrics"].push_back(mj);
    }
    j["conditions"].push_back(cj);
  }
  std::ofstream out(dir + "/report.json", std::ios::binary);
  if (!out) throw IngestError("cannot write " + dir + "/report.json");
  out << j.dump(2) << '\n';
}

inline EvaluationReport read_report(const std::string& dir) {
  std::ifstream in(dir + "/report.json");
  if (!in) throw IngestError("cannot open " + dir + "/report.json");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report.json: ") + e.what());
  }
  EvaluationReport report;
  try {
    if (j.at("kind").get<std::string>() != "latmix-report") {
      throw FormatError("not a latmix report");
    }
    report.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    report.condition_names =
        j.at("condition_names").get<std::vector<std::string>>();
    report.config_echo = j.at("config");
    for (const auto& cj : j.at("conditions")) {
      ConditionReport cond;
      cond.condition = cj.at("condition").get<std::vector<double>>();
      cond.truth = detail::read_curve_csv(
          dir + "/" + cj.at("truth").at("csv").get<std::string>(),
          cj.at("truth").at("label").get<std::string>());
      cond.truth.condition = cond.condition;
      for (const auto& mj : cj.at("models")) {
        CcdfCurve curve = detail::read_curve_csv(
            dir + "/" + mj.at("csv").get<std::string>(),
            mj.at("label").get<std::string>());
        curve.condition = cond.condition;
        cond.model_curves.push_back(std::move(curve));
      }
      cond.band.min = detail::read_curve_csv(
          dir + "/" + cj.at("band").at("min").get<std::string>(), "band_min");
      cond.band.avg = detail::read_curve_csv(
          dir + "/" + cj.at("band").at("avg").get<std::string>(), "band_avg");
      cond.band.max = detail::read_curve_csv(
          dir + "/" + cj.at("band").at("max").get<std::string>(), "band_max");
      cond.band.min.condition = cond.band.avg.condition =
          cond.band.max.condition = cond.condition;
      for (const auto& mj : cj.at("metrics")) {
        TailErrorEntry entry;
        entry.level = mj.at("level").get<double>();
        entry.available = mj.at("available").get<bool>();
        if (entry.available) {
          entry.log10_prob_error = mj.at("log10_prob_error").get<double>();
        }
        entry.quantile_available = mj.at("quantile_available").get<bool>();
        if (entry.quantile_available) {
          entry.quantile_error_ms = mj.at("quantile_error_ms").get<double>();
        }
        cond.metrics.push_back(entry);
      }
      report.conditions.push_back(std::move(cond));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report.json: ") + e.what());
  }
  return report;
}

}  // namespace latmix
