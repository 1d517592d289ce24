#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "latmix/distributions.hpp"
#include "latmix/errors.hpp"
#include "latmix/math.hpp"

namespace latmix {

inline constexpr const char* kLatencyColumn = "latency_ms";

/// Trace profile and provenance carried alongside the samples.
struct DatasetMeta {
  std::string source;               // file path or "synthetic"
  double packet_length_bytes = 172; // B_s
  double period_ms = 10.0;          // T_s
  std::string synthetic_spec_json;  // ground-truth spec echo, empty if measured
};

/// Ordered collection of latency observations with a named condition schema.
/// Conditions are stored row-major: conditions[i*dim + j] is feature j of
/// sample i.
struct Dataset {
  std::vector<std::string> condition_names;
  std::vector<double> latency_ms;
  std::vector<double> conditions;
  DatasetMeta meta;

  std::size_t size() const { return latency_ms.size(); }
  std::size_t dimension() const { return condition_names.size(); }

  std::span<const double> condition_row(std::size_t i) const {
    return {conditions.data() + i * dimension(), dimension()};
  }

  void validate() const {
    if (conditions.size() != size() * dimension()) {
      throw IngestError("Dataset: condition matrix shape mismatch");
    }
    for (std::size_t i = 0; i < size(); ++i) {
      if (!std::isfinite(latency_ms[i]) || latency_ms[i] <= 0.0) {
        throw IngestError("Dataset: nonpositive or non-finite latency at row " +
                          std::to_string(i + 1));
      }
    }
    for (double c : conditions) {
      if (!std::isfinite(c)) throw IngestError("Dataset: non-finite condition value");
    }
  }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text, std::size_t row,
                           const std::string& column) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc{} || res.ptr != last) {
    throw IngestError("row " + std::to_string(row) + ", column '" + column +
                      "': unparsable number '" + std::string(text) + "'");
  }
  return value;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

}  // namespace detail

/// Reads a latency CSV: header row, a latency_ms column, numeric condition
/// columns. `schema` selects condition columns by name; empty schema takes
/// every non-latency column in file order. Unknown columns (when a schema is
/// given) are ignored with a warning.
inline Dataset load_csv(const std::string& path,
                        const std::vector<std::string>& schema = {}) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IngestError(path + ": missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = detail::split_csv_line(line);

  std::ptrdiff_t latency_idx = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == kLatencyColumn) latency_idx = static_cast<std::ptrdiff_t>(i);
  }
  if (latency_idx < 0) {
    throw IngestError(path + ": missing required column '" +
                      std::string(kLatencyColumn) + "'");
  }

  Dataset ds;
  std::vector<std::size_t> cond_idx;
  if (schema.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (static_cast<std::ptrdiff_t>(i) == latency_idx) continue;
      ds.condition_names.push_back(header[i]);
      cond_idx.push_back(i);
    }
  } else {
    for (const std::string& name : schema) {
      auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) {
        throw IngestError(path + ": missing condition column '" + name + "'");
      }
      ds.condition_names.push_back(name);
      cond_idx.push_back(static_cast<std::size_t>(it - header.begin()));
    }
    for (std::size_t i = 0; i < header.size(); ++i) {
      const bool used = static_cast<std::ptrdiff_t>(i) == latency_idx ||
                        std::find(cond_idx.begin(), cond_idx.end(), i) != cond_idx.end();
      if (!used) {
        std::cerr << "latmix: ignoring unknown column '" << header[i] << "' in "
                  << path << "\n";
      }
    }
  }

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    const std::vector<std::string> fields = detail::split_csv_line(line);
    if (fields.size() != header.size()) {
      throw IngestError(path + ": row " + std::to_string(row) + " has " +
                        std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(header.size()));
    }
    const double latency = detail::parse_double(
        fields[static_cast<std::size_t>(latency_idx)], row, kLatencyColumn);
    if (!std::isfinite(latency) || latency <= 0.0) {
      throw IngestError(path + ": row " + std::to_string(row) +
                        ": nonpositive latency " + std::to_string(latency));
    }
    ds.latency_ms.push_back(latency);
    for (std::size_t j = 0; j < cond_idx.size(); ++j) {
      ds.conditions.push_back(
          detail::parse_double(fields[cond_idx[j]], row, ds.condition_names[j]));
    }
  }
  ds.meta.source = path;
  return ds;
}

/// Inverse of load_csv; shortest-roundtrip decimal, so reload is bit-exact.
inline void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write " + path);
  out << kLatencyColumn;
  for (const auto& name : ds.condition_names) out << ',' << name;
  out << '\n';
  const std::size_t dim = ds.dimension();
  std::string buf;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    buf.clear();
    buf += detail::format_double(ds.latency_ms[i]);
    for (std::size_t j = 0; j < dim; ++j) {
      buf += ',';
      buf += detail::format_double(ds.conditions[i * dim + j]);
    }
    buf += '\n';
    out << buf;
  }
  if (!out) throw IngestError("failed writing " + path);
}

/// Uniform random split without replacement; (train, test) are disjoint and
/// their union is the input.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction,
                                         std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("split: train_fraction must lie in (0,1)");
  }
  const std::size_t n = ds.size();
  const auto train_n = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(n)));
  if (train_n == 0 || train_n >= n) {
    throw ConfigError("split: fraction leaves an empty side for n=" +
                      std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = rng.bounded(i + 1);
    std::swap(order[i], order[j]);
  }
  const std::size_t dim = ds.dimension();
  auto take = [&](std::size_t from, std::size_t count) {
    Dataset part;
    part.condition_names = ds.condition_names;
    part.meta = ds.meta;
    part.latency_ms.reserve(count);
    part.conditions.reserve(count * dim);
    for (std::size_t i = from; i < from + count; ++i) {
      const std::size_t src = order[i];
      part.latency_ms.push_back(ds.latency_ms[src]);
      for (std::size_t j = 0; j < dim; ++j) {
        part.conditions.push_back(ds.conditions[src * dim + j]);
      }
    }
    return part;
  };
  return {take(0, train_n), take(train_n, n - train_n)};
}

/// One synthetic grid point: a condition vector, its analytically known
/// latency law, and how many samples to draw.
struct SyntheticGridPoint {
  std::vector<double> condition;
  SplicedMixtureParams theta;
  std::size_t count = 0;
};

/// Specification for the synthetic ground-truth generator. Every grid point
/// carries a full spliced-mixture law, so exact tail probabilities are
/// computable at any latency -- the property measured testbeds lack.
struct SyntheticSpec {
  std::vector<std::string> condition_names;
  std::vector<SyntheticGridPoint> grid;
  std::uint64_t seed = 1;
  double packet_length_bytes = 172;
  double period_ms = 10.0;

  void validate() const {
    if (grid.empty()) throw ConfigError("SyntheticSpec: empty grid");
    for (const auto& point : grid) {
      if (point.condition.size() != condition_names.size()) {
        throw ConfigError("SyntheticSpec: condition arity mismatch");
      }
      point.theta.validate();
    }
  }
};

namespace detail {

inline nlohmann::json theta_to_json(const SplicedMixtureParams& theta) {
  nlohmann::json j;
  j["weights"] = theta.bulk.weights;
  j["locations"] = theta.bulk.locations;
  j["scales"] = theta.bulk.scales;
  if (theta.tail) {
    j["tail"] = {{"threshold", theta.tail->threshold},
                 {"scale", theta.tail->scale},
                 {"shape", theta.tail->shape}};
  } else {
    j["tail"] = nullptr;
  }
  return j;
}

inline SplicedMixtureParams theta_from_json(const nlohmann::json& j) {
  SplicedMixtureParams theta;
  try {
    theta.bulk.weights = j.at("weights").get<std::vector<double>>();
    theta.bulk.locations = j.at("locations").get<std::vector<double>>();
    theta.bulk.scales = j.at("scales").get<std::vector<double>>();
    if (!j.at("tail").is_null()) {
      TailParams tail;
      tail.threshold = j.at("tail").at("threshold").get<double>();
      tail.scale = j.at("tail").at("scale").get<double>();
      tail.shape = j.at("tail").at("shape").get<double>();
      theta.tail = tail;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("theta: ") + e.what());
  }
  theta.validate();
  return theta;
}

}  // namespace detail

inline nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec) {
  nlohmann::json j;
  j["kind"] = "latmix-synthetic-spec";
  j["format_version"] = 1;
  j["seed"] = spec.seed;
  j["condition_names"] = spec.condition_names;
  j["packet_length_bytes"] = spec.packet_length_bytes;
  j["period_ms"] = spec.period_ms;
  j["grid"] = nlohmann::json::array();
  for (const auto& point : spec.grid) {
    j["grid"].push_back({{"condition", point.condition},
                         {"count", point.count},
                         {"theta", detail::theta_to_json(point.theta)}});
  }
  return j;
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec spec;
  try {
    if (j.at("kind").get<std::string>() != "latmix-synthetic-spec") {
      throw FormatError("not a latmix synthetic spec");
    }
    if (j.at("format_version").get<int>() != 1) {
      throw FormatError("unsupported synthetic spec format_version");
    }
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.condition_names = j.at("condition_names").get<std::vector<std::string>>();
    spec.packet_length_bytes = j.value("packet_length_bytes", 172.0);
    spec.period_ms = j.value("period_ms", 10.0);
    for (const auto& pj : j.at("grid")) {
      SyntheticGridPoint point;
      point.condition = pj.at("condition").get<std::vector<double>>();
      point.count = pj.at("count").get<std::size_t>();
      point.theta = detail::theta_from_json(pj.at("theta"));
      spec.grid.push_back(std::move(point));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("synthetic spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

inline SyntheticSpec load_synthetic_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return synthetic_spec_from_json(j);
}

/// Draws every grid point's samples from its analytic law. Deterministic:
/// grid point i uses the sub-stream mix_seed(spec.seed, i).
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.condition_names = spec.condition_names;
  ds.meta.source = "synthetic";
  ds.meta.packet_length_bytes = spec.packet_length_bytes;
  ds.meta.period_ms = spec.period_ms;
  ds.meta.synthetic_spec_json = synthetic_spec_to_json(spec).dump();
  const std::size_t dim = spec.condition_names.size();
  for (std::size_t g = 0; g < spec.grid.size(); ++g) {
    const auto& point = spec.grid[g];
    if (point.count == 0) continue;
    const std::vector<double> draws =
        spliced_sample(point.count, point.theta, mix_seed(spec.seed, g));
    for (double y : draws) {
      ds.latency_ms.push_back(y);
      for (std::size_t j = 0; j < dim; ++j) {
        ds.conditions.push_back(point.condition[j]);
      }
    }
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Built-in synthetic presets. Bulk is a two-component mixture; tail scale and
// shape grow with load (packet length) and shrink with link quality (MCS), so
// the analytic 1-1e-4 quantiles are strictly ordered across the sweep.
// ---------------------------------------------------------------------------

inline SplicedMixtureParams heavy_tail_theta() {
  SplicedMixtureParams theta;
  theta.bulk.weights = {0.55, 0.45};
  theta.bulk.locations = {6.0, 8.0};
  theta.bulk.scales = {0.5, 1.0};
  theta.tail = TailParams{8.5, 0.8, 0.3};
  return theta;
}

inline SyntheticSpec make_heavy_tail_spec(std::size_t count, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.condition_names = {};
  spec.seed = seed;
  spec.grid.push_back({{}, heavy_tail_theta(), count});
  return spec;
}

inline SyntheticSpec make_mcs_sweep_spec(std::size_t count_per_condition,
                                         std::uint64_t seed) {
  SyntheticSpec spec;
  spec.condition_names = {"mcs"};
  spec.seed = seed;
  struct Row { double mcs, mu0, mu1, sigma0, sigma1, u, beta, xi; };
  const Row rows[] = {
      {3.0, 7.0, 9.5, 0.6, 1.2, 10.5, 1.2, 0.35},
      {5.0, 6.0, 8.0, 0.5, 1.0, 8.8, 0.8, 0.25},
      {7.0, 5.0, 6.5, 0.4, 0.8, 7.2, 0.5, 0.15},
  };
  for (const Row& r : rows) {
    SplicedMixtureParams theta;
    theta.bulk.weights = {0.6, 0.4};
    theta.bulk.locations = {r.mu0, r.mu1};
    theta.bulk.scales = {r.sigma0, r.sigma1};
    theta.tail = TailParams{r.u, r.beta, r.xi};
    spec.grid.push_back({{r.mcs}, theta, count_per_condition});
  }
  return spec;
}

inline SyntheticSpec make_packet_length_sweep_spec(std::size_t count_per_condition,
                                                   std::uint64_t seed) {
  SyntheticSpec spec;
  spec.condition_names = {"packet_length"};
  spec.seed = seed;
  struct Row { double length, mu0, mu1, sigma0, sigma1, u, beta, xi; };
  const Row rows[] = {
      {172.0, 4.5, 5.5, 0.35, 0.7, 6.2, 0.4, 0.10},
      {3440.0, 5.5, 7.0, 0.45, 0.9, 8.0, 0.7, 0.25},
      {6880.0, 6.5, 8.5, 0.55, 1.1, 9.8, 1.0, 0.40},
  };
  for (const Row& r : rows) {
    SplicedMixtureParams theta;
    theta.bulk.weights = {0.6, 0.4};
    theta.bulk.locations = {r.mu0, r.mu1};
    theta.bulk.scales = {r.sigma0, r.sigma1};
    theta.tail = TailParams{r.u, r.beta, r.xi};
    spec.grid.push_back({{r.length}, theta, count_per_condition});
  }
  return spec;
}

}  // namespace latmix
