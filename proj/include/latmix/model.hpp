#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "latmix/distributions.hpp"
#include "latmix/errors.hpp"
#include "latmix/math.hpp"

namespace latmix {

enum class HeadKind { kGmm, kGmevm };

inline std::string to_string(HeadKind head) {
  return head == HeadKind::kGmm ? "gmm" : "gmevm";
}

inline HeadKind head_kind_from_string(const std::string& s) {
  if (s == "gmm") return HeadKind::kGmm;
  if (s == "gmevm") return HeadKind::kGmevm;
  throw ConfigError("unknown head kind '" + s + "' (expected gmm|gmevm)");
}

/// Network architecture and head layout. The raw output vector carries
/// 3 values per mixture center (weight logit, location, scale logit) plus,
/// for the spliced head, threshold / tail-scale logit / tail-shape logit.
struct ModelConfig {
  std::vector<int> hidden_sizes{10, 100, 100, 80};
  int num_centers = 15;
  HeadKind head = HeadKind::kGmevm;
  int input_dim = 0;

  int raw_output_dim() const {
    return head == HeadKind::kGmevm ? 3 * num_centers + 3 : 3 * num_centers;
  }

  void validate() const {
    if (num_centers < 1) throw ConfigError("ModelConfig: num_centers must be >= 1");
    if (input_dim < 0) throw ConfigError("ModelConfig: input_dim must be >= 0");
    if (hidden_sizes.empty()) throw ConfigError("ModelConfig: at least one hidden layer");
    for (int h : hidden_sizes) {
      if (h < 1) throw ConfigError("ModelConfig: hidden sizes must be >= 1");
    }
  }

  // Layer dimensions including input and raw output.
  std::vector<int> layer_dims() const {
    std::vector<int> dims;
    dims.push_back(input_dim);
    dims.insert(dims.end(), hidden_sizes.begin(), hidden_sizes.end());
    dims.push_back(raw_output_dim());
    return dims;
  }
};

/// Normalization statistics captured at preprocessing time and stored with
/// the weights, so predictions can be made from raw units.
struct Normalization {
  double latency_mean_ms = 0.0;
  double latency_scale_ms = 1.0;
  std::vector<std::string> condition_names;
  std::vector<double> condition_min;
  std::vector<double> condition_max;

  double to_normalized_latency(double ms) const {
    return (ms - latency_mean_ms) / latency_scale_ms;
  }
  double to_latency_ms(double normalized) const {
    return normalized * latency_scale_ms + latency_mean_ms;
  }

  // Min-max map to [0,1]; a degenerate (constant) training column pins to 0.5.
  double normalize_condition(std::size_t j, double raw) const {
    const double lo = condition_min[j];
    const double hi = condition_max[j];
    if (!(hi > lo)) return 0.5;
    return (raw - lo) / (hi - lo);
  }

  Eigen::VectorXd normalize_conditions(std::span<const double> raw) const {
    if (raw.size() != condition_names.size()) {
      throw ConfigError("condition vector has dimension " +
                        std::to_string(raw.size()) + ", model expects " +
                        std::to_string(condition_names.size()));
    }
    Eigen::VectorXd out(static_cast<Eigen::Index>(raw.size()));
    for (std::size_t j = 0; j < raw.size(); ++j) {
      out[static_cast<Eigen::Index>(j)] = normalize_condition(j, raw[j]);
    }
    return out;
  }
};

/// All layer weights and biases plus the head configuration and the
/// normalization statistics. Immutable once built; the trainer produces new
/// values via optimizer steps.
struct ModelWeights {
  ModelConfig config;
  Normalization normalization;
  std::vector<Eigen::MatrixXd> weights;  // weights[l]: rows = out, cols = in
  std::vector<Eigen::VectorXd> biases;
  std::uint64_t seed = 0;

  void validate() const {
    config.validate();
    const std::vector<int> dims = config.layer_dims();
    const std::size_t layers = dims.size() - 1;
    if (weights.size() != layers || biases.size() != layers) {
      throw ConfigError("ModelWeights: layer count mismatch");
    }
    for (std::size_t l = 0; l < layers; ++l) {
      if (weights[l].rows() != dims[l + 1] || weights[l].cols() != dims[l] ||
          biases[l].size() != dims[l + 1]) {
        throw ConfigError("ModelWeights: layer " + std::to_string(l) +
                          " shape mismatch");
      }
      if (!weights[l].allFinite() || !biases[l].allFinite()) {
        throw ConfigError("ModelWeights: non-finite entries in layer " +
                          std::to_string(l));
      }
    }
    if (normalization.condition_names.size() !=
            static_cast<std::size_t>(config.input_dim) ||
        normalization.condition_min.size() != normalization.condition_names.size() ||
        normalization.condition_max.size() != normalization.condition_names.size()) {
      throw ConfigError("ModelWeights: normalization schema mismatch");
    }
    if (!(normalization.latency_scale_ms > 0.0)) {
      throw ConfigError("ModelWeights: latency scale must be positive");
    }
  }
};

/// Gradient (or optimizer moment) container with the same shape as the
/// weights.
struct WeightGradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static WeightGradients zeros_like(const ModelWeights& w) {
    WeightGradients g;
    g.weights.reserve(w.weights.size());
    g.biases.reserve(w.biases.size());
    for (std::size_t l = 0; l < w.weights.size(); ++l) {
      g.weights.emplace_back(Eigen::MatrixXd::Zero(w.weights[l].rows(), w.weights[l].cols()));
      g.biases.emplace_back(Eigen::VectorXd::Zero(w.biases[l].size()));
    }
    return g;
  }

  bool all_finite() const {
    for (const auto& m : weights) {
      if (!m.allFinite()) return false;
    }
    for (const auto& v : biases) {
      if (!v.allFinite()) return false;
    }
    return true;
  }
};

/// A training batch in normalized space: one column per sample.
struct TrainingBatch {
  Eigen::MatrixXd conditions;  // input_dim x B
  Eigen::VectorXd latencies;   // B
};

/// Fan-in-scaled uniform initialization; biases start at zero except the
/// threshold output, whose bias is set so the tail threshold starts near the
/// given normalized latency (typically the empirical 90th percentile).
inline ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed,
                                 double threshold_bias = 0.0) {
  config.validate();
  ModelWeights w;
  w.config = config;
  w.seed = seed;
  w.normalization.condition_names.resize(config.input_dim);
  w.normalization.condition_min.assign(config.input_dim, 0.0);
  w.normalization.condition_max.assign(config.input_dim, 1.0);
  Rng rng(seed);
  const std::vector<int> dims = config.layer_dims();
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int in = dims[l];
    const int out = dims[l + 1];
    Eigen::MatrixXd weight(out, in);
    const double bound = in > 0 ? std::sqrt(1.0 / in) : 0.0;
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) {
        weight(r, c) = bound * (2.0 * rng.uniform01() - 1.0);
      }
    }
    w.weights.push_back(std::move(weight));
    w.biases.emplace_back(Eigen::VectorXd::Zero(out));
  }
  if (config.head == HeadKind::kGmevm) {
    w.biases.back()[3 * config.num_centers] = threshold_bias;
  }
  return w;
}

namespace detail {

/// Maps the raw network output vector to distribution parameters:
/// softmax -> weights, identity -> locations, floored softplus -> scales and
/// tail scale, softplus -> tail shape, identity -> threshold.
inline SplicedMixtureParams head_squash(const Eigen::VectorXd& raw,
                                        const ModelConfig& config) {
  const int k = config.num_centers;
  SplicedMixtureParams theta;
  theta.bulk.weights.resize(k);
  theta.bulk.locations.resize(k);
  theta.bulk.scales.resize(k);
  const double peak = raw.head(k).maxCoeff();
  double norm = 0.0;
  for (int i = 0; i < k; ++i) {
    theta.bulk.weights[i] = std::exp(raw[i] - peak);
    norm += theta.bulk.weights[i];
  }
  for (int i = 0; i < k; ++i) {
    theta.bulk.weights[i] /= norm;
    theta.bulk.locations[i] = raw[k + i];
    theta.bulk.scales[i] = softplus(raw[2 * k + i]) + kScaleFloor;
  }
  if (config.head == HeadKind::kGmevm) {
    TailParams tail;
    tail.threshold = raw[3 * k];
    tail.scale = softplus(raw[3 * k + 1]) + kBetaFloor;
    tail.shape = softplus(raw[3 * k + 2]);
    theta.tail = tail;
  }
  return theta;
}

inline Eigen::VectorXd raw_forward(const Eigen::VectorXd& x, const ModelWeights& w) {
  Eigen::VectorXd h = x;
  const std::size_t layers = w.weights.size();
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    Eigen::VectorXd z = w.weights[l] * h + w.biases[l];
    h = z.unaryExpr([](double v) { return softplus(v); });
  }
  return w.weights[layers - 1] * h + w.biases[layers - 1];
}

/// Scratch buffers for the batched forward/backward pass; reusable across
/// steps so the training loop does not allocate. Exponentials computed in
/// the forward pass (activation exp(-|z|), softmax numerators) are kept and
/// reused by the backward pass.
struct MdnWorkspace {
  std::vector<Eigen::MatrixXd> act;      // act[0] = inputs, act[l] = hidden l output
  std::vector<Eigen::MatrixXd> pre;      // pre-activation of hidden layer l
  std::vector<Eigen::ArrayXXd> act_exp;  // exp(-|pre|) per hidden layer
  Eigen::MatrixXd raw;                   // raw head outputs, out x B
  Eigen::MatrixXd raw_grad;
  Eigen::ArrayXXd log_weights, locations, scale_logits, scales, log_scales, zscores, log_norm;
  Eigen::ArrayXXd comp_log_density;  // logw + logN, K x B
  Eigen::ArrayXXd weight_exp;        // exp(weight logits - column max)
  Eigen::ArrayXXd resp_exp;          // exp(comp_log_density - column max)
  Eigen::ArrayXXd scale_exp;         // exp(-|scale logits|)
  Eigen::VectorXd loss_per_sample;
  Eigen::MatrixXd delta, dz;
};

// sigmoid(x) recovered from e = exp(-|x|) without further transcendentals.
inline double sigmoid_from_exp(double x, double e) {
  return (x >= 0.0 ? 1.0 : e) / (1.0 + e);
}

// Batched loss (mean NLL over columns) and, when `grads` is non-null, the
// exact gradient of that mean with respect to every weight and bias.
//
// The branch indicator (bulk vs tail) is evaluated per sample against the
// current threshold and treated as fixed during differentiation; the
// surviving terms carry smooth threshold gradients through both the bulk
// exceedance mass and the Pareto density.
inline double mdn_loss_batch(const ModelWeights& w, const TrainingBatch& batch,
                             MdnWorkspace& ws, WeightGradients* grads) {
  const ModelConfig& cfg = w.config;
  const int k = cfg.num_centers;
  const Eigen::Index batch_size = batch.latencies.size();
  const std::size_t layers = w.weights.size();
  const bool spliced = cfg.head == HeadKind::kGmevm;

  if (batch.conditions.rows() != cfg.input_dim ||
      batch.conditions.cols() != batch_size) {
    throw ConfigError("batch condition matrix shape mismatch");
  }
  if (batch_size == 0) throw ConfigError("empty batch");

  // Forward through the hidden stack.
  ws.act.resize(layers);
  ws.pre.resize(layers - 1);
  ws.act_exp.resize(layers - 1);
  ws.act[0] = batch.conditions;
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    ws.pre[l].noalias() = w.weights[l] * ws.act[l];
    ws.pre[l].colwise() += w.biases[l];
    ws.act_exp[l] = (-ws.pre[l].array().abs()).exp();
    ws.act[l + 1] =
        (ws.pre[l].array().max(0.0) + (1.0 + ws.act_exp[l]).log()).matrix();
  }
  ws.raw.noalias() = w.weights[layers - 1] * ws.act[layers - 1];
  ws.raw.colwise() += w.biases[layers - 1];

  using RowArrayXd = Eigen::Array<double, 1, Eigen::Dynamic>;

  // Head blocks, all K x B.
  const auto weight_logits = ws.raw.topRows(k).array();
  ws.locations = ws.raw.middleRows(k, k).array();
  ws.scale_logits = ws.raw.middleRows(2 * k, k).array();
  ws.scale_exp = (-ws.scale_logits.abs()).exp();
  ws.scales = ws.scale_logits.max(0.0) + (1.0 + ws.scale_exp).log() + kScaleFloor;
  ws.log_scales = ws.scales.log();

  // log mixture weights: shift-by-max softmax in log space.
  const RowArrayXd col_max = weight_logits.colwise().maxCoeff();
  ws.weight_exp = weight_logits.rowwise() - col_max;
  ws.weight_exp = ws.weight_exp.exp();
  const RowArrayXd weight_norm = ws.weight_exp.colwise().sum();
  const RowArrayXd lse = col_max + weight_norm.log();
  ws.log_weights = weight_logits.rowwise() - lse;

  const RowArrayXd y = batch.latencies.transpose().array();
  ws.zscores = ((-ws.locations).rowwise() + y) / ws.scales;
  ws.log_norm = -ws.log_scales - 0.5 * kLogTwoPi - 0.5 * ws.zscores.square();
  ws.comp_log_density = ws.log_weights + ws.log_norm;

  // Bulk negative log likelihood for every column (tail columns overwritten
  // below).
  const RowArrayXd comp_max = ws.comp_log_density.colwise().maxCoeff();
  ws.resp_exp = ws.comp_log_density.rowwise() - comp_max;
  ws.resp_exp = ws.resp_exp.exp();
  const RowArrayXd resp_norm = ws.resp_exp.colwise().sum();
  const RowArrayXd bulk_ll = comp_max + resp_norm.log();
  ws.loss_per_sample = (-bulk_ll).matrix().transpose();

  const bool want_grad = grads != nullptr;
  if (want_grad) {
    ws.raw_grad.resize(ws.raw.rows(), ws.raw.cols());
    // Bulk-branch gradients, vectorized across the whole batch; the softmax
    // numerators from the forward pass normalize into responsibilities and
    // mixture weights without new exponentials.
    Eigen::ArrayXXd resp = ws.resp_exp;
    resp.rowwise() /= resp_norm;
    Eigen::ArrayXXd mix_w = ws.weight_exp;
    mix_w.rowwise() /= weight_norm;
    Eigen::ArrayXXd scale_sig =
        (ws.scale_logits >= 0.0).select(1.0, ws.scale_exp) / (1.0 + ws.scale_exp);
    ws.raw_grad.topRows(k) = (mix_w - resp).matrix();
    ws.raw_grad.middleRows(k, k) = (-resp * ws.zscores / ws.scales).matrix();
    ws.raw_grad.middleRows(2 * k, k) =
        (-resp * (ws.zscores.square() - 1.0) / ws.scales * scale_sig).matrix();
    if (spliced) ws.raw_grad.bottomRows(3).setZero();
  }

  if (spliced) {
    const auto thresholds = ws.raw.row(3 * k).array();
    const auto beta_logits = ws.raw.row(3 * k + 1).array();
    const auto xi_logits = ws.raw.row(3 * k + 2).array();
    for (Eigen::Index j = 0; j < batch_size; ++j) {
      const double yj = batch.latencies[j];
      const double u = thresholds[j];
      if (yj <= u) continue;

      const double beta = softplus(beta_logits[j]) + kBetaFloor;
      const double xi = softplus(xi_logits[j]);
      const double h = yj - u;

      // log of the bulk exceedance mass T = sum_k w_k Phi_c(t_k).
      double log_t = -std::numeric_limits<double>::infinity();
      thread_local std::vector<double> comp_terms, t_values;
      comp_terms.resize(k);
      t_values.resize(k);
      for (int i = 0; i < k; ++i) {
        t_values[i] = (u - ws.locations(i, j)) / ws.scales(i, j);
        comp_terms[i] = ws.log_weights(i, j) + log_std_normal_ccdf(t_values[i]);
        log_t = std::max(log_t, comp_terms[i]);
      }
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += std::exp(comp_terms[i] - log_t);
      log_t += std::log(acc);

      double log_gpd;
      if (xi < kShapeExponentialSwitch) {
        log_gpd = -std::log(beta) - h / beta;
      } else {
        log_gpd = -std::log(beta) - (1.0 / xi + 1.0) * std::log1p(xi * h / beta);
      }
      ws.loss_per_sample[j] = -log_t - log_gpd;

      if (want_grad) {
        double d_threshold = 0.0;
        for (int i = 0; i < k; ++i) {
          const double mix_wi = std::exp(ws.log_weights(i, j));
          const double exceed_frac = std::exp(comp_terms[i] - log_t);
          const double density_frac =
              std::exp(ws.log_weights(i, j) + log_std_normal_pdf(t_values[i]) - log_t);
          ws.raw_grad(i, j) = mix_wi - exceed_frac;
          ws.raw_grad(k + i, j) = -density_frac / ws.scales(i, j);
          ws.raw_grad(2 * k + i, j) =
              -density_frac * t_values[i] / ws.scales(i, j) *
              sigmoid_from_exp(ws.scale_logits(i, j), ws.scale_exp(i, j));
          d_threshold += density_frac / ws.scales(i, j);
        }
        double d_beta, d_xi;
        if (xi < kShapeExponentialSwitch) {
          d_beta = 1.0 / beta - h / (beta * beta);
          d_xi = h / beta - 0.5 * h * h / (beta * beta);
          d_threshold += -1.0 / beta;
        } else {
          const double ratio = xi * h / beta;
          const double denom = 1.0 + ratio;
          d_beta = 1.0 / beta - (1.0 + xi) * h / (beta * beta * denom);
          d_xi = -std::log1p(ratio) / (xi * xi) +
                 (1.0 / xi + 1.0) * (h / beta) / denom;
          d_threshold += -(1.0 + xi) / (beta * denom);
        }
        ws.raw_grad(3 * k, j) = d_threshold;
        ws.raw_grad(3 * k + 1, j) = d_beta * sigmoid(beta_logits[j]);
        ws.raw_grad(3 * k + 2, j) = d_xi * sigmoid(xi_logits[j]);
      }
    }
  }

  const double loss = ws.loss_per_sample.mean();

  if (want_grad) {
    const double inv_b = 1.0 / static_cast<double>(batch_size);
    ws.raw_grad *= inv_b;
    grads->weights[layers - 1].noalias() =
        ws.raw_grad * ws.act[layers - 1].transpose();
    grads->biases[layers - 1] = ws.raw_grad.rowwise().sum();
    if (layers >= 2) {
      ws.delta.noalias() = w.weights[layers - 1].transpose() * ws.raw_grad;
      for (std::size_t l = layers - 1; l-- > 0;) {
        // softplus' = sigmoid, recovered from the stored exp(-|pre|).
        ws.dz = (ws.delta.array() *
                 ((ws.pre[l].array() >= 0.0).select(1.0, ws.act_exp[l]) /
                  (1.0 + ws.act_exp[l])))
                    .matrix();
        grads->weights[l].noalias() = ws.dz * ws.act[l].transpose();
        grads->biases[l] = ws.dz.rowwise().sum();
        if (l > 0) ws.delta.noalias() = w.weights[l].transpose() * ws.dz;
      }
    }
  }
  return loss;
}

}  // namespace detail

/// Maps a normalized condition vector to distribution parameters. The head
/// squashing guarantees the result satisfies every SplicedMixtureParams
/// invariant by construction.
inline SplicedMixtureParams forward(std::span<const double> x_normalized,
                                    const ModelWeights& w) {
  if (x_normalized.size() != static_cast<std::size_t>(w.config.input_dim)) {
    throw ConfigError("forward: condition dimension mismatch");
  }
  Eigen::VectorXd x(static_cast<Eigen::Index>(x_normalized.size()));
  for (std::size_t i = 0; i < x_normalized.size(); ++i) {
    x[static_cast<Eigen::Index>(i)] = x_normalized[i];
  }
  return detail::head_squash(detail::raw_forward(x, w), w.config);
}

/// Mean negative log likelihood of a normalized batch.
inline double nll(const TrainingBatch& batch, const ModelWeights& w) {
  detail::MdnWorkspace ws;
  const double loss = detail::mdn_loss_batch(w, batch, ws, nullptr);
  if (!std::isfinite(loss)) {
    Eigen::Index bad = 0;
    for (Eigen::Index i = 0; i < ws.loss_per_sample.size(); ++i) {
      if (!std::isfinite(ws.loss_per_sample[i])) {
        bad = i;
        break;
      }
    }
    throw TrainingError("non-finite training loss (sample index " +
                        std::to_string(bad) + ", y=" +
                        std::to_string(batch.latencies[bad]) + ")");
  }
  return loss;
}

/// Exact gradient of nll via reverse-mode differentiation through both
/// density branches.
inline WeightGradients grad_nll(const TrainingBatch& batch, const ModelWeights& w) {
  detail::MdnWorkspace ws;
  WeightGradients grads = WeightGradients::zeros_like(w);
  const double loss = detail::mdn_loss_batch(w, batch, ws, &grads);
  if (!std::isfinite(loss) || !grads.all_finite()) {
    throw TrainingError("non-finite loss or gradient in grad_nll");
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Model file format: one self-describing JSON document, bit-exact roundtrip.
// ---------------------------------------------------------------------------

inline nlohmann::json serialize_to_json(const ModelWeights& w) {
  w.validate();
  nlohmann::json j;
  j["kind"] = "latmix-model";
  j["format_version"] = 1;
  j["head_kind"] = to_string(w.config.head);
  j["seed"] = w.seed;
  j["config"] = {{"hidden_sizes", w.config.hidden_sizes},
                 {"num_centers", w.config.num_centers},
                 {"input_dim", w.config.input_dim}};
  nlohmann::json conditions = nlohmann::json::array();
  for (std::size_t i = 0; i < w.normalization.condition_names.size(); ++i) {
    conditions.push_back({{"name", w.normalization.condition_names[i]},
                          {"min", w.normalization.condition_min[i]},
                          {"max", w.normalization.condition_max[i]}});
  }
  j["normalization"] = {{"latency_mean_ms", w.normalization.latency_mean_ms},
                        {"latency_scale_ms", w.normalization.latency_scale_ms},
                        {"conditions", conditions}};
  j["layers"] = nlohmann::json::array();
  for (std::size_t l = 0; l < w.weights.size(); ++l) {
    const auto& m = w.weights[l];
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
    }
    std::vector<double> bias(w.biases[l].data(),
                             w.biases[l].data() + w.biases[l].size());
    j["layers"].push_back({{"rows", m.rows()},
                           {"cols", m.cols()},
                           {"weights", flat},
                           {"bias", bias}});
  }
  return j;
}

inline std::string serialize(const ModelWeights& w) {
  return serialize_to_json(w).dump(2);
}

inline ModelWeights deserialize_from_json(const nlohmann::json& j) {
  ModelWeights w;
  try {
    if (j.at("kind").get<std::string>() != "latmix-model") {
      throw FormatError("not a latmix model file");
    }
    if (j.at("format_version").get<int>() != 1) {
      throw FormatError("unsupported model format_version");
    }
    w.config.head = head_kind_from_string(j.at("head_kind").get<std::string>());
    w.seed = j.at("seed").get<std::uint64_t>();
    const auto& cj = j.at("config");
    w.config.hidden_sizes = cj.at("hidden_sizes").get<std::vector<int>>();
    w.config.num_centers = cj.at("num_centers").get<int>();
    w.config.input_dim = cj.at("input_dim").get<int>();
    const auto& nj = j.at("normalization");
    w.normalization.latency_mean_ms = nj.at("latency_mean_ms").get<double>();
    w.normalization.latency_scale_ms = nj.at("latency_scale_ms").get<double>();
    for (const auto& cond : nj.at("conditions")) {
      w.normalization.condition_names.push_back(cond.at("name").get<std::string>());
      w.normalization.condition_min.push_back(cond.at("min").get<double>());
      w.normalization.condition_max.push_back(cond.at("max").get<double>());
    }
    for (const auto& lj : j.at("layers")) {
      const auto rows = lj.at("rows").get<Eigen::Index>();
      const auto cols = lj.at("cols").get<Eigen::Index>();
      const auto flat = lj.at("weights").get<std::vector<double>>();
      const auto bias = lj.at("bias").get<std::vector<double>>();
      if (flat.size() != static_cast<std::size_t>(rows * cols) ||
          bias.size() != static_cast<std::size_t>(rows)) {
        throw FormatError("layer payload size disagrees with declared shape");
      }
      Eigen::MatrixXd m(rows, cols);
      std::size_t idx = 0;
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat[idx++];
      }
      w.weights.push_back(std::move(m));
      w.biases.push_back(Eigen::Map<const Eigen::VectorXd>(
          bias.data(), static_cast<Eigen::Index>(bias.size())));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
  try {
    w.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
  return w;
}

inline ModelWeights deserialize(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
  return deserialize_from_json(j);
}

inline void save_model(const ModelWeights& w, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << serialize(w) << '\n';
  if (!out) throw FormatError("failed writing " + path);
}

inline ModelWeights load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return deserialize(text);
}

}  // namespace latmix
