#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "latmix/dataset.hpp"
#include "latmix/errors.hpp"
#include "latmix/math.hpp"
#include "latmix/model.hpp"

namespace latmix {

struct LearningRound {
  int epochs = 200;
  double learning_rate = 1e-2;
};

enum class NoiseMode {
  kPerDataset,  // noise drawn once per sample at preprocessing time (default)
  kPerEpoch,    // noise redrawn every epoch
};

inline std::string to_string(NoiseMode mode) {
  return mode == NoiseMode::kPerDataset ? "per-dataset" : "per-epoch";
}

inline NoiseMode noise_mode_from_string(const std::string& s) {
  if (s == "per-dataset") return NoiseMode::kPerDataset;
  if (s == "per-epoch") return NoiseMode::kPerEpoch;
  throw ConfigError("unknown noise mode '" + s + "' (expected per-dataset|per-epoch)");
}

/// Training schedule and regularization knobs. Defaults follow the staged
/// protocol: four rounds of 200 epochs at learning rates 1e-2..1e-5, batches
/// of 1/8 of the training set, ten ensemble members.
struct TrainConfig {
  std::vector<LearningRound> rounds{{200, 1e-2}, {200, 1e-3}, {200, 1e-4}, {200, 1e-5}};
  double batch_fraction = 0.125;
  double noise_std_ms = 0.0;
  NoiseMode noise_mode = NoiseMode::kPerDataset;
  int ensemble_size = 10;
  std::uint64_t seed = 1;

  int total_epochs() const {
    int total = 0;
    for (const auto& r : rounds) total += r.epochs;
    return total;
  }

  void validate() const {
    if (rounds.empty()) throw ConfigError("TrainConfig: at least one round");
    double previous = std::numeric_limits<double>::infinity();
    for (const auto& r : rounds) {
      if (r.epochs < 1) throw ConfigError("TrainConfig: round epochs must be >= 1");
      if (!(r.learning_rate > 0.0)) {
        throw ConfigError("TrainConfig: learning rates must be positive");
      }
      if (r.learning_rate > previous) {
        throw ConfigError("TrainConfig: learning rates must be nonincreasing");
      }
      previous = r.learning_rate;
    }
    if (!(batch_fraction > 0.0 && batch_fraction <= 1.0)) {
      throw ConfigError("TrainConfig: batch_fraction must lie in (0,1]");
    }
    if (noise_std_ms < 0.0) throw ConfigError("TrainConfig: noise_std_ms must be >= 0");
    if (ensemble_size < 1) throw ConfigError("TrainConfig: ensemble_size must be >= 1");
  }
};

inline std::size_t batch_size_for(std::size_t n, double batch_fraction) {
  return static_cast<std::size_t>(
      std::ceil(batch_fraction * static_cast<double>(n)));
}

/// Centering/scaling statistics gathered from the training set.
struct PreprocessStats {
  double latency_mean_ms = 0.0;
  double latency_scale_ms = 1.0;
  std::vector<std::string> condition_names;
  std::vector<double> condition_min;
  std::vector<double> condition_max;

  Normalization to_normalization() const {
    Normalization norm;
    norm.latency_mean_ms = latency_mean_ms;
    norm.latency_scale_ms = latency_scale_ms;
    norm.condition_names = condition_names;
    norm.condition_min = condition_min;
    norm.condition_max = condition_max;
    return norm;
  }
};

/// Normalized training matrices: conditions mapped to [0,1] columnwise,
/// latencies centered (ms scale retained).
struct PreprocessedData {
  Eigen::MatrixXd conditions;  // input_dim x N
  Eigen::VectorXd latencies;   // N, normalized; includes noise when requested
  PreprocessStats stats;
};

/// Centers latencies by their mean, min-max maps each condition column to
/// [0,1], and (when noise_std_ms > 0) adds one Gaussian draw per training
/// sample. Evaluation data never passes through here; it stays untouched.
inline PreprocessedData preprocess(const Dataset& ds, double noise_std_ms,
                                   std::uint64_t seed) {
  if (ds.size() == 0) throw IngestError("preprocess: empty dataset");
  ds.validate();
  const std::size_t n = ds.size();
  const std::size_t dim = ds.dimension();

  PreprocessedData out;
  out.stats.condition_names = ds.condition_names;
  out.stats.condition_min.assign(dim, std::numeric_limits<double>::infinity());
  out.stats.condition_max.assign(dim, -std::numeric_limits<double>::infinity());

  long double mean_acc = 0.0L;
  for (double y : ds.latency_ms) mean_acc += y;
  out.stats.latency_mean_ms = static_cast<double>(mean_acc / n);
  out.stats.latency_scale_ms = 1.0;  // samples already arrive in milliseconds

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double v = ds.conditions[i * dim + j];
      out.stats.condition_min[j] = std::min(out.stats.condition_min[j], v);
      out.stats.condition_max[j] = std::max(out.stats.condition_max[j], v);
    }
  }
  for (std::size_t j = 0; j < dim; ++j) {
    if (!(out.stats.condition_max[j] > out.stats.condition_min[j])) {
      std::cerr << "latmix: condition '" << ds.condition_names[j]
                << "' is constant; normalizing to 0.5\n";
    }
  }

  const Normalization norm = out.stats.to_normalization();
  out.conditions.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(n));
  out.latencies.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    out.latencies[static_cast<Eigen::Index>(i)] =
        norm.to_normalized_latency(ds.latency_ms[i]);
    for (std::size_t j = 0; j < dim; ++j) {
      out.conditions(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) =
          norm.normalize_condition(j, ds.conditions[i * dim + j]);
    }
  }

  if (noise_std_ms > 0.0) {
    Rng rng(seed);
    const double scaled_std = noise_std_ms / out.stats.latency_scale_ms;
    for (Eigen::Index i = 0; i < out.latencies.size(); ++i) {
      out.latencies[i] += scaled_std * rng.normal();
    }
  }
  return out;
}

/// Adam first/second-moment state.
struct AdamState {
  WeightGradients first_moment;
  WeightGradients second_moment;
  long step = 0;

  static AdamState zeros_like(const ModelWeights& w) {
    return {WeightGradients::zeros_like(w), WeightGradients::zeros_like(w), 0};
  }
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

/// One bias-corrected Adam update, applied in place.
inline void adam_step(ModelWeights& w, const WeightGradients& grads,
                      AdamState& state, double learning_rate) {
  if (!grads.all_finite()) {
    throw TrainingError("adam_step: non-finite gradient");
  }
  state.step += 1;
  const double correction1 = 1.0 - std::pow(kAdamBeta1, state.step);
  const double correction2 = 1.0 - std::pow(kAdamBeta2, state.step);
  for (std::size_t l = 0; l < w.weights.size(); ++l) {
    auto& m = state.first_moment.weights[l];
    auto& v = state.second_moment.weights[l];
    m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * grads.weights[l];
    v.array() = kAdamBeta2 * v.array() +
                (1.0 - kAdamBeta2) * grads.weights[l].array().square();
    w.weights[l].array() -=
        learning_rate * (m.array() / correction1) /
        ((v.array() / correction2).sqrt() + kAdamEpsilon);

    auto& mb = state.first_moment.biases[l];
    auto& vb = state.second_moment.biases[l];
    mb = kAdamBeta1 * mb + (1.0 - kAdamBeta1) * grads.biases[l];
    vb.array() = kAdamBeta2 * vb.array() +
                 (1.0 - kAdamBeta2) * grads.biases[l].array().square();
    w.biases[l].array() -= learning_rate * (mb.array() / correction1) /
                           ((vb.array() / correction2).sqrt() + kAdamEpsilon);
  }
}

struct TraceRow {
  int epoch = 0;  // 1-based, global across rounds
  int round = 0;  // 1-based
  double learning_rate = 0.0;
  double mean_nll = 0.0;
};

inline void write_trace_csv(const std::vector<TraceRow>& trace,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write " + path);
  out << "epoch,round,lr,mean_nll\n";
  for (const auto& row : trace) {
    out << row.epoch << ',' << row.round << ','
        << detail::format_double(row.learning_rate) << ','
        << detail::format_double(row.mean_nll) << '\n';
  }
}

struct TrainResult {
  ModelWeights model;
  std::vector<TraceRow> trace;
  bool aborted = false;
  std::string abort_reason;
};

/// Trains one model: preprocess, fan-in init (threshold bias at the
/// empirical 90th percentile), then the staged Adam schedule over shuffled
/// batches. Deterministic given (dataset, configs, seed).
inline TrainResult train(const Dataset& ds, const ModelConfig& model_config,
                         const TrainConfig& train_config) {
  model_config.validate();
  train_config.validate();
  if (static_cast<std::size_t>(model_config.input_dim) != ds.dimension()) {
    // input_dim 0 means "infer from the dataset"; any other mismatch is a
    // caller bug.
    if (model_config.input_dim != 0) {
      throw ConfigError("train: model input_dim " +
                        std::to_string(model_config.input_dim) +
                        " does not match dataset dimension " +
                        std::to_string(ds.dimension()));
    }
    ModelConfig adjusted = model_config;
    adjusted.input_dim = static_cast<int>(ds.dimension());
    return train(ds, adjusted, train_config);
  }

  const std::uint64_t noise_seed = mix_seed(train_config.seed, 0xA11CE);
  const std::uint64_t init_seed = mix_seed(train_config.seed, 0xB0B);
  const std::uint64_t shuffle_seed = mix_seed(train_config.seed, 0xC0FFEE);

  const bool noise_in_preprocess =
      train_config.noise_mode == NoiseMode::kPerDataset;
  PreprocessedData data = preprocess(
      ds, noise_in_preprocess ? train_config.noise_std_ms : 0.0, noise_seed);
  const std::size_t n = static_cast<std::size_t>(data.latencies.size());

  // Threshold bias: empirical 90th percentile of the normalized targets.
  double q90 = 0.0;
  if (model_config.head == HeadKind::kGmevm) {
    std::vector<double> sorted(data.latencies.data(), data.latencies.data() + n);
    const auto idx = static_cast<std::size_t>(
        std::llround(0.9 * static_cast<double>(n - 1)));
    std::nth_element(sorted.begin(), sorted.begin() + idx, sorted.end());
    q90 = sorted[idx];
  }

  TrainResult result;
  result.model = init_weights(model_config, init_seed, q90);
  result.model.normalization = data.stats.to_normalization();
  result.model.seed = train_config.seed;

  AdamState adam = AdamState::zeros_like(result.model);
  WeightGradients grads = WeightGradients::zeros_like(result.model);
  detail::MdnWorkspace workspace;

  const std::size_t batch_size = batch_size_for(n, train_config.batch_fraction);
  const std::size_t steps_per_epoch = (n + batch_size - 1) / batch_size;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(shuffle_seed);
  Rng epoch_noise_rng(mix_seed(noise_seed, 1));

  Eigen::VectorXd targets = data.latencies;
  TrainingBatch batch;

  int epoch_global = 0;
  for (std::size_t round_idx = 0; round_idx < train_config.rounds.size(); ++round_idx) {
    const LearningRound& round = train_config.rounds[round_idx];
    for (int epoch = 0; epoch < round.epochs; ++epoch) {
      ++epoch_global;
      // Full reshuffle per epoch (Fisher-Yates on the run's stream).
      for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = shuffle_rng.bounded(i + 1);
        std::swap(order[i], order[j]);
      }
      if (!noise_in_preprocess && train_config.noise_std_ms > 0.0) {
        const double scaled_std =
            train_config.noise_std_ms / data.stats.latency_scale_ms;
        for (Eigen::Index i = 0; i < targets.size(); ++i) {
          targets[i] = data.latencies[i] + scaled_std * epoch_noise_rng.normal();
        }
      }

      double loss_sum = 0.0;
      for (std::size_t step = 0; step < steps_per_epoch; ++step) {
        const std::size_t begin = step * batch_size;
        const std::size_t count = std::min(batch_size, n - begin);
        batch.conditions.resize(data.conditions.rows(),
                                static_cast<Eigen::Index>(count));
        batch.latencies.resize(static_cast<Eigen::Index>(count));
        for (std::size_t c = 0; c < count; ++c) {
          const auto src = static_cast<Eigen::Index>(order[begin + c]);
          batch.conditions.col(static_cast<Eigen::Index>(c)) =
              data.conditions.col(src);
          batch.latencies[static_cast<Eigen::Index>(c)] = targets[src];
        }

        const double loss =
            detail::mdn_loss_batch(result.model, batch, workspace, &grads);
        if (!std::isfinite(loss) || !grads.all_finite()) {
          result.aborted = true;
          result.abort_reason = "non-finite loss or gradient at epoch " +
                                std::to_string(epoch_global) + ", step " +
                                std::to_string(step + 1) +
                                "; weights kept from last completed step";
          return result;
        }
        adam_step(result.model, grads, adam, round.learning_rate);
        loss_sum += loss * static_cast<double>(count);
      }
      result.trace.push_back({epoch_global, static_cast<int>(round_idx + 1),
                              round.learning_rate,
                              loss_sum / static_cast<double>(n)});
    }
  }
  return result;
}

struct EnsembleResult {
  std::vector<TrainResult> members;
  std::vector<std::uint64_t> member_seeds;

  bool all_ok() const {
    return std::none_of(members.begin(), members.end(),
                        [](const TrainResult& r) { return r.aborted; });
  }

  std::vector<std::size_t> failed_members() const {
    std::vector<std::size_t> failed;
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (members[i].aborted) failed.push_back(i);
    }
    return failed;
  }
};

/// Trains ensemble_size independent models whose runs differ only in the
/// derived member seed mix_seed(seed, i). Members share nothing mutable, so
/// the artifacts are identical whether members run sequentially or on
/// `jobs` threads.
inline EnsembleResult train_ensemble(const Dataset& ds,
                                     const ModelConfig& model_config,
                                     const TrainConfig& train_config,
                                     int jobs = 1) {
  train_config.validate();
  const int k = train_config.ensemble_size;
  EnsembleResult result;
  result.members.resize(k);
  result.member_seeds.resize(k);
  for (int i = 0; i < k; ++i) {
    result.member_seeds[i] = mix_seed(train_config.seed, static_cast<std::uint64_t>(i));
  }

  auto run_member = [&](int i) {
    TrainConfig member_config = train_config;
    member_config.seed = result.member_seeds[i];
    result.members[i] = train(ds, model_config, member_config);
  };

  const int workers = std::max(1, std::min(jobs, k));
  if (workers == 1) {
    for (int i = 0; i < k; ++i) run_member(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (int i = next.fetch_add(1); i < k; i = next.fetch_add(1)) {
          run_member(i);
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  return result;
}

}  // namespace latmix
