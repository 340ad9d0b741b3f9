#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "moe/common.hpp"
#include "moe/nn.hpp"
#include "moe/parallel.hpp"
#include "moe/rng.hpp"
#include "moe/sensing.hpp"
#include "moe/serialize.hpp"

namespace moe {

using ForceVector = Vec3;  // newtons, end-effector frame, z = closing axis

// Per-axis weights of the weighted mean squared error loss.
struct LossWeights {
  Vec3 lambda{1.0, 1.0, 1.0};

  void validate() const {
    require(lambda.minCoeff() > 0.0, "LossWeights: all components must be > 0");
  }
};

// L(w, w_hat) = || lambda ⊙ (w - w_hat) ||^2
inline double weighted_mse(const ForceVector& w, const ForceVector& w_hat,
                           const LossWeights& weights) {
  weights.validate();
  const Vec3 e = weights.lambda.cwiseProduct(w - w_hat);
  return e.squaredNorm();
}

enum class Variant { kFused, kDepthOnly, kLoadOnly };

inline std::string variant_to_string(Variant v) {
  switch (v) {
    case Variant::kFused: return "fused";
    case Variant::kDepthOnly: return "depth-only";
    case Variant::kLoadOnly: return "load-only";
  }
  return "fused";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "fused") return Variant::kFused;
  if (s == "depth-only") return Variant::kDepthOnly;
  if (s == "load-only") return Variant::kLoadOnly;
  throw ContractViolation("unknown estimator variant: " + s);
}

// Depth encoder (stride-2 conv blocks + GAP + linear), load encoder
// (two-layer perceptron) and fusion head. Default widths give the
// 64 + 64 -> 128 -> 3 contract.
struct EncoderConfig {
  std::vector<int> conv_channels{8, 16, 32};
  int kernel = 3;
  int stride = 2;
  int pad = 1;
  int depth_feature = 64;
  int load_hidden = 32;
  int load_feature = 64;
  int fusion_hidden = 64;
  int input_h = 64;
  int input_w = 64;
  int load_dim = 4;
  int output_dim = 3;

  int fused_width() const { return depth_feature + load_feature; }

  void validate() const {
    require(!conv_channels.empty(), "EncoderConfig: need at least one conv block");
    for (int c : conv_channels) require(c > 0, "EncoderConfig: channels must be > 0");
    require(depth_feature > 0 && load_feature > 0 && fusion_hidden > 0,
            "EncoderConfig: feature widths must be > 0");
    require(input_h > 0 && input_w > 0, "EncoderConfig: input size must be > 0");
    require(output_dim == 3, "EncoderConfig: output width is the force vector");
  }
};

struct Normalization {
  double depth_scale = 1.0 / 500.0;  // mm -> [0, 1] over the camera range
  double q_scale = 1.0;              // 1 / max |q| over the training set
};

inline nn::ParamLayout build_layout(const EncoderConfig& cfg) {
  cfg.validate();
  nn::ParamLayout layout;
  int in_c = 1;
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    const int out_c = cfg.conv_channels[i];
    layout.add("conv" + std::to_string(i) + ".weight",
               {out_c, in_c, cfg.kernel, cfg.kernel});
    layout.add("conv" + std::to_string(i) + ".bias", {out_c});
    in_c = out_c;
  }
  layout.add("depth_fc.weight", {cfg.depth_feature, in_c});
  layout.add("depth_fc.bias", {cfg.depth_feature});
  layout.add("load_fc1.weight", {cfg.load_hidden, cfg.load_dim});
  layout.add("load_fc1.bias", {cfg.load_hidden});
  layout.add("load_fc2.weight", {cfg.load_feature, cfg.load_hidden});
  layout.add("load_fc2.bias", {cfg.load_feature});
  layout.add("fuse_fc1.weight", {cfg.fusion_hidden, cfg.fused_width()});
  layout.add("fuse_fc1.bias", {cfg.fusion_hidden});
  layout.add("fuse_fc2.weight", {cfg.output_dim, cfg.fusion_hidden});
  layout.add("fuse_fc2.bias", {cfg.output_dim});
  return layout;
}

struct EstimatorParams {
  EncoderConfig config;
  Variant variant = Variant::kFused;
  Normalization norm;
  VecX values;

  void validate() const {
    config.validate();
    require(values.size() == build_layout(config).total(),
            "EstimatorParams: parameter count does not match config");
    require(values.allFinite(), "EstimatorParams: parameters must be finite");
  }
};

inline EstimatorParams init_params(const EncoderConfig& cfg, Variant variant,
                                   std::uint64_t seed) {
  const nn::ParamLayout layout = build_layout(cfg);
  EstimatorParams p;
  p.config = cfg;
  p.variant = variant;
  p.values = VecX::Zero(layout.total());
  Rng rng(derive_seed(seed, 0x1217ull));
  for (const auto& e : layout.entries()) {
    const bool is_bias = e.dims.size() == 1;
    int fan_in = 1, fan_out = e.dims[0];
    if (!is_bias) {
      fan_in = 1;
      for (std::size_t i = 1; i < e.dims.size(); ++i) fan_in *= e.dims[i];
    }
    nn::init_tensor(rng, p.values.data() + e.offset, e.count, fan_in, fan_out,
                    is_bias);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace detail {

struct ConvPlan {
  std::vector<nn::ConvSpec> specs;
  int last_c = 1;
  int last_h = 0, last_w = 0;
};

inline ConvPlan make_conv_plan(const EncoderConfig& cfg) {
  ConvPlan plan;
  int c = 1, h = cfg.input_h, w = cfg.input_w;
  for (int out_c : cfg.conv_channels) {
    nn::ConvSpec s;
    s.in_c = c;
    s.out_c = out_c;
    s.kernel = cfg.kernel;
    s.stride = cfg.stride;
    s.pad = cfg.pad;
    s.in_h = h;
    s.in_w = w;
    plan.specs.push_back(s);
    c = out_c;
    h = s.out_h();
    w = s.out_w();
    require(h > 0 && w > 0, "EncoderConfig: conv stack exhausts the image");
  }
  plan.last_c = c;
  plan.last_h = h;
  plan.last_w = w;
  return plan;
}

// Activation buffers for one sample; reused across calls.
struct Workspace {
  std::vector<double> input;
  std::vector<std::vector<double>> conv_out;
  std::vector<double> gap;
  std::vector<double> depth_feat;
  std::vector<double> load_in;
  std::vector<double> load_hidden;
  std::vector<double> load_feat;
  std::vector<double> fused;
  std::vector<double> fuse_hidden;
  Vec3 out;

  // gradient scratch (same shapes)
  std::vector<std::vector<double>> d_conv;
  std::vector<double> d_input;
  std::vector<double> d_gap;
  std::vector<double> d_depth_feat;
  std::vector<double> d_load_hidden;
  std::vector<double> d_load_in;
  std::vector<double> d_fused;
  std::vector<double> d_fuse_hidden;

  void resize(const EncoderConfig& cfg, const ConvPlan& plan) {
    input.assign(static_cast<std::size_t>(cfg.input_h) * cfg.input_w, 0.0);
    conv_out.resize(plan.specs.size());
    d_conv.resize(plan.specs.size());
    for (std::size_t i = 0; i < plan.specs.size(); ++i) {
      const auto& s = plan.specs[i];
      conv_out[i].assign(
          static_cast<std::size_t>(s.out_c) * s.out_h() * s.out_w(), 0.0);
      d_conv[i].assign(conv_out[i].size(), 0.0);
    }
    gap.assign(plan.last_c, 0.0);
    depth_feat.assign(cfg.depth_feature, 0.0);
    load_in.assign(cfg.load_dim, 0.0);
    load_hidden.assign(cfg.load_hidden, 0.0);
    load_feat.assign(cfg.load_feature, 0.0);
    fused.assign(cfg.fused_width(), 0.0);
    fuse_hidden.assign(cfg.fusion_hidden, 0.0);
    d_input.assign(input.size(), 0.0);
    d_gap.assign(gap.size(), 0.0);
    d_depth_feat.assign(depth_feat.size(), 0.0);
    d_load_hidden.assign(load_hidden.size(), 0.0);
    d_load_in.assign(load_in.size(), 0.0);
    d_fused.assign(fused.size(), 0.0);
    d_fuse_hidden.assign(fuse_hidden.size(), 0.0);
  }
};

inline const double* tensor(const EstimatorParams& p,
                            const nn::ParamLayout& layout, const char* name) {
  return p.values.data() + layout.find(name).offset;
}

inline Vec3 forward(const EstimatorParams& p, const nn::ParamLayout& layout,
                    const ConvPlan& plan, const DepthFrame& frame,
                    const Vec4& q, Workspace& ws) {
  const EncoderConfig& cfg = p.config;
  ws.resize(cfg, plan);

  // depth branch (skipped entirely when its feature is zeroed: parameters
  // downstream of a zeroed feature receive zero gradient either way)
  if (p.variant != Variant::kLoadOnly) {
    for (std::size_t i = 0; i < ws.input.size(); ++i) {
      ws.input[i] = frame.depth_mm[i] * p.norm.depth_scale;
    }
    const double* x = ws.input.data();
    for (std::size_t i = 0; i < plan.specs.size(); ++i) {
      const std::string idx = std::to_string(i);
      conv2d_forward(plan.specs[i], x,
                     tensor(p, layout, ("conv" + idx + ".weight").c_str()),
                     tensor(p, layout, ("conv" + idx + ".bias").c_str()),
                     ws.conv_out[i].data());
      nn::relu_forward(static_cast<int>(ws.conv_out[i].size()),
                       ws.conv_out[i].data());
      x = ws.conv_out[i].data();
    }
    nn::global_average_pool(plan.last_c, plan.last_h, plan.last_w, x,
                            ws.gap.data());
    nn::linear_forward(plan.last_c, cfg.depth_feature, ws.gap.data(),
                       tensor(p, layout, "depth_fc.weight"),
                       tensor(p, layout, "depth_fc.bias"),
                       ws.depth_feat.data());
  }

  if (p.variant != Variant::kDepthOnly) {
    for (int i = 0; i < cfg.load_dim; ++i) ws.load_in[i] = q[i] * p.norm.q_scale;
    nn::linear_forward(cfg.load_dim, cfg.load_hidden, ws.load_in.data(),
                       tensor(p, layout, "load_fc1.weight"),
                       tensor(p, layout, "load_fc1.bias"),
                       ws.load_hidden.data());
    nn::relu_forward(cfg.load_hidden, ws.load_hidden.data());
    nn::linear_forward(cfg.load_hidden, cfg.load_feature, ws.load_hidden.data(),
                       tensor(p, layout, "load_fc2.weight"),
                       tensor(p, layout, "load_fc2.bias"),
                       ws.load_feat.data());
  }

  std::copy(ws.depth_feat.begin(), ws.depth_feat.end(), ws.fused.begin());
  std::copy(ws.load_feat.begin(), ws.load_feat.end(),
            ws.fused.begin() + cfg.depth_feature);
  nn::linear_forward(cfg.fused_width(), cfg.fusion_hidden, ws.fused.data(),
                     tensor(p, layout, "fuse_fc1.weight"),
                     tensor(p, layout, "fuse_fc1.bias"), ws.fuse_hidden.data());
  nn::relu_forward(cfg.fusion_hidden, ws.fuse_hidden.data());
  double out[3];
  nn::linear_forward(cfg.fusion_hidden, cfg.output_dim, ws.fuse_hidden.data(),
                     tensor(p, layout, "fuse_fc2.weight"),
                     tensor(p, layout, "fuse_fc2.bias"), out);
  ws.out = Vec3(out[0], out[1], out[2]);
  return ws.out;
}

// Accumulates d(loss)/d(params) into grad, given d(loss)/d(output).
inline void backward(const EstimatorParams& p, const nn::ParamLayout& layout,
                     const ConvPlan& plan, const Vec3& d_out, Workspace& ws,
                     VecX& grad) {
  const EncoderConfig& cfg = p.config;
  auto g = [&](const char* name) {
    return grad.data() + layout.find(name).offset;
  };

  std::fill(ws.d_fuse_hidden.begin(), ws.d_fuse_hidden.end(), 0.0);
  const double d_out_arr[3] = {d_out[0], d_out[1], d_out[2]};
  nn::linear_backward(cfg.fusion_hidden, cfg.output_dim, ws.fuse_hidden.data(),
                      tensor(p, layout, "fuse_fc2.weight"), d_out_arr,
                      ws.d_fuse_hidden.data(), g("fuse_fc2.weight"),
                      g("fuse_fc2.bias"));
  nn::relu_backward(cfg.fusion_hidden, ws.fuse_hidden.data(),
                    ws.d_fuse_hidden.data());
  std::fill(ws.d_fused.begin(), ws.d_fused.end(), 0.0);
  nn::linear_backward(cfg.fused_width(), cfg.fusion_hidden, ws.fused.data(),
                      tensor(p, layout, "fuse_fc1.weight"),
                      ws.d_fuse_hidden.data(), ws.d_fused.data(),
                      g("fuse_fc1.weight"), g("fuse_fc1.bias"));

  if (p.variant != Variant::kDepthOnly) {
    const double* d_load_feat = ws.d_fused.data() + cfg.depth_feature;
    std::fill(ws.d_load_hidden.begin(), ws.d_load_hidden.end(), 0.0);
    nn::linear_backward(cfg.load_hidden, cfg.load_feature, ws.load_hidden.data(),
                        tensor(p, layout, "load_fc2.weight"), d_load_feat,
                        ws.d_load_hidden.data(), g("load_fc2.weight"),
                        g("load_fc2.bias"));
    nn::relu_backward(cfg.load_hidden, ws.load_hidden.data(),
                      ws.d_load_hidden.data());
    std::fill(ws.d_load_in.begin(), ws.d_load_in.end(), 0.0);
    nn::linear_backward(cfg.load_dim, cfg.load_hidden, ws.load_in.data(),
                        tensor(p, layout, "load_fc1.weight"),
                        ws.d_load_hidden.data(), ws.d_load_in.data(),
                        g("load_fc1.weight"), g("load_fc1.bias"));
  }

  if (p.variant != Variant::kLoadOnly) {
    std::fill(ws.d_gap.begin(), ws.d_gap.end(), 0.0);
    nn::linear_backward(plan.last_c, cfg.depth_feature, ws.gap.data(),
                        tensor(p, layout, "depth_fc.weight"), ws.d_fused.data(),
                        ws.d_gap.data(), g("depth_fc.weight"),
                        g("depth_fc.bias"));
    const std::size_t n_conv = plan.specs.size();
    std::fill(ws.d_conv[n_conv - 1].begin(), ws.d_conv[n_conv - 1].end(), 0.0);
    nn::global_average_pool_backward(plan.last_c, plan.last_h, plan.last_w,
                                     ws.d_gap.data(),
                                     ws.d_conv[n_conv - 1].data());
    for (std::size_t i = n_conv; i-- > 0;) {
      const std::string idx = std::to_string(i);
      nn::relu_backward(static_cast<int>(ws.conv_out[i].size()),
                        ws.conv_out[i].data(), ws.d_conv[i].data());
      const double* x = i == 0 ? ws.input.data() : ws.conv_out[i - 1].data();
      double* dx = nullptr;
      if (i > 0) {
        std::fill(ws.d_conv[i - 1].begin(), ws.d_conv[i - 1].end(), 0.0);
        dx = ws.d_conv[i - 1].data();
      }
      nn::conv2d_backward(plan.specs[i], x,
                          tensor(p, layout, ("conv" + idx + ".weight").c_str()),
                          ws.d_conv[i].data(), dx,
                          g(("conv" + idx + ".weight").c_str()),
                          g(("conv" + idx + ".bias").c_str()));
    }
  }
}

}  // namespace detail

// Deterministic forward pass of the estimator. The input type guarantees
// the frame went through apply_mask.
inline ForceVector predict(const EstimatorParams& params,
                           const MaskedDepthFrame& masked,
                           const ActuatorLoad& load) {
  params.validate();
  const DepthFrame& frame = masked.frame();
  require(frame.width == params.config.input_w &&
              frame.height == params.config.input_h,
          "predict: frame dimensions do not match the encoder config");
  require(is_finite(load.q), "predict: q must be finite");
  const nn::ParamLayout layout = build_layout(params.config);
  const detail::ConvPlan plan = detail::make_conv_plan(params.config);
  detail::Workspace ws;
  return detail::forward(params, layout, plan, frame, load.q, ws);
}

// One labelled training record as the estimator consumes it.
struct TrainExample {
  const DepthFrame* frame = nullptr;  // masked depth
  Vec4 q = Vec4::Zero();
  Vec3 w = Vec3::Zero();
};

struct GradResult {
  VecX grad;
  double loss = 0.0;
};

// Mean Eq.-1 loss and its exact reverse-mode gradient over a batch.
// Per-sample gradients are reduced in fixed blocks of 8 samples, so the
// result is bit-identical for any thread count.
inline GradResult loss_gradient(const EstimatorParams& params,
                                const std::vector<TrainExample>& batch,
                                const LossWeights& weights,
                                unsigned n_threads = 1) {
  require(!batch.empty(), "loss_gradient: batch must be non-empty");
  weights.validate();
  const nn::ParamLayout layout = build_layout(params.config);
  const detail::ConvPlan plan = detail::make_conv_plan(params.config);

  constexpr std::size_t kBlock = 8;
  const std::size_t n_blocks = (batch.size() + kBlock - 1) / kBlock;
  std::vector<VecX> block_grads(n_blocks);
  std::vector<double> block_losses(n_blocks, 0.0);

  parallel_for(n_blocks, n_threads, [&](std::size_t begin, std::size_t end) {
    detail::Workspace ws;
    for (std::size_t blk = begin; blk < end; ++blk) {
      VecX grad = VecX::Zero(params.values.size());
      double loss = 0.0;
      const std::size_t lo = blk * kBlock;
      const std::size_t hi = std::min(batch.size(), lo + kBlock);
      for (std::size_t s = lo; s < hi; ++s) {
        const TrainExample& ex = batch[s];
        const Vec3 w_hat =
            detail::forward(params, layout, plan, *ex.frame, ex.q, ws);
        const Vec3 err = ex.w - w_hat;
        const Vec3 lam2 = weights.lambda.cwiseProduct(weights.lambda);
        loss += lam2.cwiseProduct(err).dot(err);
        const Vec3 d_out = -2.0 * lam2.cwiseProduct(err);
        detail::backward(params, layout, plan, d_out, ws, grad);
      }
      block_grads[blk] = std::move(grad);
      block_losses[blk] = loss;
    }
  });

  GradResult out;
  out.grad = VecX::Zero(params.values.size());
  for (std::size_t blk = 0; blk < n_blocks; ++blk) {
    out.grad += block_grads[blk];
    out.loss += block_losses[blk];
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.grad *= inv;
  out.loss *= inv;
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 0.005;
  int batch_size = 32;
  int epochs = 14;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  LossWeights lambda;
  Normalization norm;        // q_scale <= 0 derives it from the training set
  EncoderConfig encoder;
  unsigned n_threads = 0;    // 0 = hardware default

  void validate() const {
    require(learning_rate > 0.0, "TrainConfig: learning rate must be > 0");
    require(batch_size >= 1, "TrainConfig: batch size must be >= 1");
    require(epochs >= 1, "TrainConfig: epochs must be >= 1");
    lambda.validate();
  }
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  EstimatorParams params;  // at best validation loss
  std::vector<EpochStats> history;
  double best_val_loss = 0.0;
};

inline double mean_loss(const EstimatorParams& params,
                        const std::vector<TrainExample>& examples,
                        const LossWeights& weights, unsigned n_threads) {
  require(!examples.empty(), "mean_loss: examples must be non-empty");
  const nn::ParamLayout layout = build_layout(params.config);
  const detail::ConvPlan plan = detail::make_conv_plan(params.config);
  constexpr std::size_t kBlock = 8;
  const std::size_t n_blocks = (examples.size() + kBlock - 1) / kBlock;
  std::vector<double> block_losses(n_blocks, 0.0);
  parallel_for(n_blocks, n_threads, [&](std::size_t begin, std::size_t end) {
    detail::Workspace ws;
    for (std::size_t blk = begin; blk < end; ++blk) {
      const std::size_t lo = blk * kBlock;
      const std::size_t hi = std::min(examples.size(), lo + kBlock);
      double loss = 0.0;
      for (std::size_t s = lo; s < hi; ++s) {
        const Vec3 w_hat = detail::forward(params, layout, plan,
                                           *examples[s].frame, examples[s].q, ws);
        loss += weighted_mse(examples[s].w, w_hat, weights);
      }
      block_losses[blk] = loss;
    }
  });
  double total = 0.0;
  for (double l : block_losses) total += l;
  return total / static_cast<double>(examples.size());
}

// Momentum SGD on the mean weighted MSE; deterministic given the seed
// (seeded init, seeded shuffling, fixed-order reductions). Returns the
// parameters at the best validation loss.
inline TrainResult train(const std::vector<TrainExample>& train_set,
                         const std::vector<TrainExample>& val_set,
                         const TrainConfig& cfg, Variant variant) {
  cfg.validate();
  require(!train_set.empty(), "train: training set must be non-empty");
  require(!val_set.empty(), "train: validation set must be non-empty");
  const unsigned n_threads =
      cfg.n_threads == 0 ? default_thread_count() : cfg.n_threads;

  EstimatorParams params = init_params(cfg.encoder, variant, cfg.seed);
  params.norm = cfg.norm;
  if (params.norm.q_scale <= 0.0) {
    double q_max = 0.0;
    for (const auto& ex : train_set) {
      q_max = std::max(q_max, ex.q.cwiseAbs().maxCoeff());
    }
    params.norm.q_scale = q_max > 1e-12 ? 1.0 / q_max : 1.0;
  }

  VecX velocity = VecX::Zero(params.values.size());
  Rng shuffle_rng(derive_seed(cfg.seed, 0x54FFull));
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
    }
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(
          order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<TrainExample> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(train_set[order[i]]);
      const GradResult g = loss_gradient(params, batch, cfg.lambda, n_threads);
      if (!std::isfinite(g.loss) || !g.grad.allFinite()) {
        throw TrainingError("train: loss diverged at epoch " +
                                std::to_string(epoch),
                            epoch);
      }
      velocity = cfg.momentum * velocity - cfg.learning_rate * g.grad;
      params.values += velocity;
      epoch_loss += g.loss;
      ++n_batches;
    }
    const double val_loss = mean_loss(params, val_set, cfg.lambda, n_threads);
    if (!std::isfinite(val_loss)) {
      throw TrainingError("train: validation loss diverged at epoch " +
                              std::to_string(epoch),
                          epoch);
    }
    result.history.push_back(
        {epoch, epoch_loss / static_cast<double>(n_batches), val_loss});
    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.params = params;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

struct RmseReport {
  Vec3 per_axis = Vec3::Zero();
  double total = 0.0;  // sqrt(mean ||w - w_hat||^2 / 3)
};

inline RmseReport evaluate_rmse(const EstimatorParams& params,
                                const std::vector<TrainExample>& examples,
                                unsigned n_threads = 1) {
  require(!examples.empty(), "evaluate_rmse: examples must be non-empty");
  const nn::ParamLayout layout = build_layout(params.config);
  const detail::ConvPlan plan = detail::make_conv_plan(params.config);
  constexpr std::size_t kBlock = 8;
  const std::size_t n_blocks = (examples.size() + kBlock - 1) / kBlock;
  std::vector<Vec3> block_sq(n_blocks, Vec3::Zero());
  parallel_for(n_blocks, n_threads, [&](std::size_t begin, std::size_t end) {
    detail::Workspace ws;
    for (std::size_t blk = begin; blk < end; ++blk) {
      const std::size_t lo = blk * kBlock;
      const std::size_t hi = std::min(examples.size(), lo + kBlock);
      Vec3 acc = Vec3::Zero();
      for (std::size_t s = lo; s < hi; ++s) {
        const Vec3 w_hat = detail::forward(params, layout, plan,
                                           *examples[s].frame, examples[s].q, ws);
        const Vec3 e = examples[s].w - w_hat;
        acc += e.cwiseProduct(e);
      }
      block_sq[blk] = acc;
    }
  });
  Vec3 sq = Vec3::Zero();
  for (const auto& b : block_sq) sq += b;
  sq /= static_cast<double>(examples.size());
  RmseReport report;
  report.per_axis = sq.cwiseSqrt();
  report.total = std::sqrt(sq.sum() / 3.0);
  return report;
}

// lambda_k = clamp(sigma_z / sigma_k, 1, 10), z pinned to 1; degenerate
// axes get the upper clamp.
inline LossWeights default_lambda(const std::vector<Vec3>& labels) {
  require(labels.size() >= 10, "default_lambda: need at least 10 samples");
  Vec3 mean = Vec3::Zero();
  for (const auto& w : labels) mean += w;
  mean /= static_cast<double>(labels.size());
  Vec3 var = Vec3::Zero();
  for (const auto& w : labels) var += (w - mean).cwiseProduct(w - mean);
  var /= static_cast<double>(labels.size());
  const Vec3 sigma = var.cwiseSqrt();

  LossWeights out;
  for (int k = 0; k < 2; ++k) {
    out.lambda[k] = sigma[k] > 1e-12
                        ? std::clamp(sigma[2] / sigma[k], 1.0, 10.0)
                        : 10.0;
  }
  out.lambda[2] = 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: one-line JSON header (shape table, variant, normalization),
// newline, then the flat parameter vector as little-endian f64.

inline void save_checkpoint(const EstimatorParams& params,
                            const std::string& path,
                            const nlohmann::json& extra = {}) {
  params.validate();
  const nn::ParamLayout layout = build_layout(params.config);
  nlohmann::json header;
  header["magic"] = "MOECKPT";
  header["version"] = 1;
  header["variant"] = variant_to_string(params.variant);
  header["param_count"] = layout.total();
  header["normalization"] = {{"depth_scale", params.norm.depth_scale},
                             {"q_scale", params.norm.q_scale}};
  header["config"] = {{"conv_channels", params.config.conv_channels},
                      {"kernel", params.config.kernel},
                      {"stride", params.config.stride},
                      {"pad", params.config.pad},
                      {"depth_feature", params.config.depth_feature},
                      {"load_hidden", params.config.load_hidden},
                      {"load_feature", params.config.load_feature},
                      {"fusion_hidden", params.config.fusion_hidden},
                      {"input_h", params.config.input_h},
                      {"input_w", params.config.input_w},
                      {"load_dim", params.config.load_dim},
                      {"output_dim", params.config.output_dim}};
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& e : layout.entries()) {
    shapes.push_back({{"name", e.name}, {"dims", e.dims}});
  }
  header["shapes"] = shapes;
  if (!extra.is_null() && !extra.empty()) header["extra"] = extra;

  ByteWriter out;
  const std::string head_str = header.dump();
  out.bytes(head_str.data(), head_str.size());
  out.u8('\n');
  for (Eigen::Index i = 0; i < params.values.size(); ++i) out.f64(params.values[i]);
  write_file(path, out.data());
}

struct Checkpoint {
  EstimatorParams params;
  nlohmann::json extra;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  const auto buf = read_file(path);
  const auto nl = std::find(buf.begin(), buf.end(), '\n');
  if (nl == buf.end()) {
    throw IoError(IoError::Kind::Malformed, "checkpoint has no header line");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(std::string(buf.begin(), nl));
  } catch (const nlohmann::json::exception&) {
    throw IoError(IoError::Kind::Malformed, "checkpoint header is not JSON");
  }
  if (header.value("magic", "") != "MOECKPT") {
    throw IoError(IoError::Kind::BadMagic, "not a checkpoint file");
  }
  if (header.value("version", 0) != 1) {
    throw IoError(IoError::Kind::BadVersion, "unsupported checkpoint version");
  }

  Checkpoint ck;
  ck.params.variant = variant_from_string(header.at("variant"));
  const auto& cfg = header.at("config");
  ck.params.config.conv_channels = cfg.at("conv_channels").get<std::vector<int>>();
  ck.params.config.kernel = cfg.at("kernel");
  ck.params.config.stride = cfg.at("stride");
  ck.params.config.pad = cfg.at("pad");
  ck.params.config.depth_feature = cfg.at("depth_feature");
  ck.params.config.load_hidden = cfg.at("load_hidden");
  ck.params.config.load_feature = cfg.at("load_feature");
  ck.params.config.fusion_hidden = cfg.at("fusion_hidden");
  ck.params.config.input_h = cfg.at("input_h");
  ck.params.config.input_w = cfg.at("input_w");
  ck.params.config.load_dim = cfg.at("load_dim");
  ck.params.config.output_dim = cfg.at("output_dim");
  ck.params.norm.depth_scale = header.at("normalization").at("depth_scale");
  ck.params.norm.q_scale = header.at("normalization").at("q_scale");
  if (header.contains("extra")) ck.extra = header.at("extra");

  const int count = header.at("param_count");
  const std::size_t body =
      buf.size() - static_cast<std::size_t>(nl - buf.begin()) - 1;
  if (body != static_cast<std::size_t>(count) * 8) {
    throw IoError(IoError::Kind::Malformed, "checkpoint body size mismatch");
  }
  ByteReader r(&*nl + 1, body);
  ck.params.values = VecX::Zero(count);
  for (int i = 0; i < count; ++i) ck.params.values[i] = r.f64();
  ck.params.validate();
  return ck;
}

inline void write_loss_history(const std::vector<EpochStats>& history,
                               const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(IoError::Kind::Filesystem, "cannot open " + path);
  out << "epoch,train_loss,val_loss\n";
  char buf[128];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", h.epoch, h.train_loss,
                  h.val_loss);
    out << buf;
  }
}

}  // namespace moe
