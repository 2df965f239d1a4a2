#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "adafer/dataset.hpp"
#include "adafer/rng.hpp"

namespace adafer {

inline constexpr double kLogFloor = 1e-12;
inline constexpr double kNormFloor = 1e-12;

/// Two-layer head: a relu hidden layer whose L2-normalized activation is the
/// metric-learning embedding, followed by a linear classifier.
struct HeadParams {
  Eigen::MatrixXd W1;  // H x D
  Eigen::VectorXd b1;  // H
  Eigen::MatrixXd W2;  // C x H
  Eigen::VectorXd b2;  // C
  std::optional<double> margin_raw;  // set only when the triplet margin is learned

  std::size_t input_dim() const { return static_cast<std::size_t>(W1.cols()); }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(W1.rows()); }
  std::size_t num_classes() const { return static_cast<std::size_t>(W2.rows()); }

  /// Effective triplet margin: the learned one clamped at zero, else `fixed`.
  double margin(double fixed) const { return margin_raw ? std::max(0.0, *margin_raw) : fixed; }
};

namespace detail {

template <class A, class B>
bool same_bits(const A& a, const B& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::equal(a.data(), a.data() + a.size(), b.data(), [](double x, double y) {
    return std::memcmp(&x, &y, sizeof(double)) == 0;
  });
}

}  // namespace detail

inline bool bitwise_equal(const HeadParams& a, const HeadParams& b) {
  if (a.margin_raw.has_value() != b.margin_raw.has_value()) return false;
  if (a.margin_raw && std::memcmp(&*a.margin_raw, &*b.margin_raw, sizeof(double)) != 0) return false;
  return detail::same_bits(a.W1, b.W1) && detail::same_bits(a.b1, b.b1) && detail::same_bits(a.W2, b.W2) &&
         detail::same_bits(a.b2, b.b2);
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
inline HeadParams init_head(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_classes,
                            std::uint64_t seed, std::optional<double> learnable_margin = std::nullopt) {
  if (input_dim == 0 || hidden_dim == 0 || num_classes < 2) throw std::invalid_argument("init_head: invalid dims");
  const auto D = static_cast<Eigen::Index>(input_dim);
  const auto H = static_cast<Eigen::Index>(hidden_dim);
  const auto C = static_cast<Eigen::Index>(num_classes);
  auto engine = keyed_engine(seed, Stream::HeadInit);
  HeadParams p;
  p.W1.resize(H, D);
  p.W2.resize(C, H);
  const double r1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double r2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  std::uniform_real_distribution<double> u1(-r1, r1), u2(-r2, r2);
  for (Eigen::Index i = 0; i < H; ++i)
    for (Eigen::Index j = 0; j < D; ++j) p.W1(i, j) = u1(engine);
  for (Eigen::Index i = 0; i < C; ++i)
    for (Eigen::Index j = 0; j < H; ++j) p.W2(i, j) = u2(engine);
  p.b1 = Eigen::VectorXd::Zero(H);
  p.b2 = Eigen::VectorXd::Zero(C);
  p.margin_raw = learnable_margin;
  return p;
}

struct ForwardResult {
  Eigen::VectorXd pre;        // W1 x + b1
  Eigen::VectorXd hidden;     // relu(pre)
  double hidden_norm = 0.0;
  Eigen::VectorXd embedding;  // hidden / |hidden|, zero when |hidden| < kNormFloor
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;
};

inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

inline ForwardResult forward(const HeadParams& params, const Eigen::VectorXd& x) {
  if (static_cast<std::size_t>(x.size()) != params.input_dim()) throw std::invalid_argument("forward: input length mismatch");
  ForwardResult r;
  r.pre = params.W1 * x + params.b1;
  r.hidden = r.pre.cwiseMax(0.0);
  r.hidden_norm = r.hidden.norm();
  r.embedding = r.hidden_norm < kNormFloor ? Eigen::VectorXd::Zero(r.hidden.size()).eval()
                                           : (r.hidden / r.hidden_norm).eval();
  r.logits = params.W2 * r.hidden + params.b2;
  r.probs = softmax(r.logits);
  return r;
}

/// argmax with ties resolved to the lowest class index.
inline ClassId predict_class(const Eigen::VectorXd& probs) {
  ClassId best = 0;
  for (Eigen::Index c = 1; c < probs.size(); ++c) {
    if (probs[c] > probs[static_cast<Eigen::Index>(best)]) best = static_cast<ClassId>(c);
  }
  return best;
}

inline double ce_loss(const Eigen::VectorXd& probs, ClassId label) {
  if (label >= static_cast<std::size_t>(probs.size())) throw std::out_of_range("ce_loss: label out of range");
  return -std::log(std::max(probs[static_cast<Eigen::Index>(label)], kLogFloor));
}

/// D_KL(soft_target || probs), with 0 log 0 = 0.
inline double kl_loss(const Eigen::VectorXd& soft_target, const Eigen::VectorXd& probs) {
  if (soft_target.size() != probs.size()) throw std::invalid_argument("kl_loss: length mismatch");
  double sum = 0.0;
  for (Eigen::Index c = 0; c < probs.size(); ++c) {
    const double y = soft_target[c];
    if (y > 0.0) sum += y * std::log(y / std::max(probs[c], kLogFloor));
  }
  return sum;
}

/// Margin hinge on the gap between anchor-negative and anchor-positive distances.
inline double triplet_loss(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive,
                           const Eigen::VectorXd& negative, double gamma) {
  const double d_ap = (anchor - positive).norm();
  const double d_an = (anchor - negative).norm();
  return std::max(0.0, gamma - (d_an - d_ap));
}

enum class KlDirection {
  TargetToPrediction,  // D_KL(soft_target || prediction)
  PredictionToTarget,  // D_KL(prediction || soft_target)
};

inline double kl_term(const Eigen::VectorXd& soft_target, const Eigen::VectorXd& probs, KlDirection dir) {
  return dir == KlDirection::TargetToPrediction ? kl_loss(soft_target, probs) : kl_loss(probs, soft_target);
}

struct LossConfig {
  double beta = 1.0;
  double epsilon = 1.0;
  double gamma = 0.5;  // fixed margin, ignored when the head carries margin_raw
  KlDirection kl_direction = KlDirection::TargetToPrediction;
};

struct LabeledInput {
  const Eigen::VectorXd* x;
  ClassId label;
};

struct SoftInput {
  const Eigen::VectorXd* x;
  const Eigen::VectorXd* target;
};

struct TripletInput {
  const Eigen::VectorXd* anchor;
  const Eigen::VectorXd* positive;
  const Eigen::VectorXd* negative;
};

/// One optimization step's worth of inputs. Pointers are non-owning.
struct Batch {
  std::vector<LabeledInput> source;
  std::vector<LabeledInput> target_hard;
  std::vector<SoftInput> target_soft;
  std::vector<TripletInput> triplets;
};

struct LossBreakdown {
  double ce_source = 0.0;
  double ce_target = 0.0;
  double kl_target = 0.0;
  double L_c = 0.0;
  double L_tri = 0.0;
  double L_all = 0.0;
  std::size_t active_triplets = 0;
  std::size_t num_triplets = 0;

  double active_fraction() const {
    return num_triplets == 0 ? 0.0 : static_cast<double>(active_triplets) / static_cast<double>(num_triplets);
  }
};

/// Gradient of the loss, shaped like HeadParams.
struct HeadGradient {
  Eigen::MatrixXd W1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd W2;
  Eigen::VectorXd b2;
  double margin_raw = 0.0;

  static HeadGradient zeros_like(const HeadParams& p) {
    return {Eigen::MatrixXd::Zero(p.W1.rows(), p.W1.cols()), Eigen::VectorXd::Zero(p.b1.size()),
            Eigen::MatrixXd::Zero(p.W2.rows(), p.W2.cols()), Eigen::VectorXd::Zero(p.b2.size()), 0.0};
  }
};

namespace detail {

template <class Fn>
double mean_over(std::size_t n, Fn&& term) {
  if (n == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += term(i);
  return sum / static_cast<double>(n);
}

struct TripletEval {
  ForwardResult a, p, n;
  double d_ap, d_an, hinge;
};

inline TripletEval eval_triplet(const HeadParams& params, const TripletInput& t, double gamma) {
  TripletEval e{forward(params, *t.anchor), forward(params, *t.positive), forward(params, *t.negative), 0, 0, 0};
  e.d_ap = (e.a.embedding - e.p.embedding).norm();
  e.d_an = (e.a.embedding - e.n.embedding).norm();
  e.hinge = gamma - (e.d_an - e.d_ap);
  return e;
}

// Backpropagates dL/dlogits and dL/dembedding of one forward pass into grad.
inline void accumulate(const HeadParams& params, const ForwardResult& f, const Eigen::VectorXd& x,
                       const Eigen::VectorXd* d_logits, const Eigen::VectorXd* d_embedding,
                       HeadGradient& grad) {
  Eigen::VectorXd d_hidden = Eigen::VectorXd::Zero(f.hidden.size());
  if (d_logits) {
    grad.W2.noalias() += *d_logits * f.hidden.transpose();
    grad.b2 += *d_logits;
    d_hidden.noalias() += params.W2.transpose() * *d_logits;
  }
  if (d_embedding && f.hidden_norm >= kNormFloor) {
    d_hidden += (*d_embedding - f.embedding * f.embedding.dot(*d_embedding)) / f.hidden_norm;
  }
  Eigen::VectorXd d_pre = (f.pre.array() > 0.0).select(d_hidden, 0.0);
  grad.W1.noalias() += d_pre * x.transpose();
  grad.b1 += d_pre;
}

// dL/dlogits given w_c = p_c * dL/dp_c: w - p * sum(w).
inline Eigen::VectorXd softmax_backward(const Eigen::VectorXd& probs, const Eigen::VectorXd& w) {
  return w - probs * w.sum();
}

inline Eigen::VectorXd ce_logit_grad(const Eigen::VectorXd& probs, ClassId label) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(probs.size());
  const auto y = static_cast<Eigen::Index>(label);
  if (probs[y] >= kLogFloor) w[y] = -1.0;
  return softmax_backward(probs, w);
}

inline Eigen::VectorXd kl_logit_grad(const Eigen::VectorXd& soft_target, const Eigen::VectorXd& probs,
                                     KlDirection dir) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(probs.size());
  for (Eigen::Index c = 0; c < probs.size(); ++c) {
    if (dir == KlDirection::TargetToPrediction) {
      if (soft_target[c] > 0.0 && probs[c] >= kLogFloor) w[c] = -soft_target[c];
    } else if (probs[c] > 0.0) {
      w[c] = probs[c] * (std::log(probs[c] / std::max(soft_target[c], kLogFloor)) + 1.0);
    }
  }
  return softmax_backward(probs, w);
}

}  // namespace detail

inline LossBreakdown total_loss(const Batch& batch, const HeadParams& params, const LossConfig& cfg) {
  LossBreakdown out;
  out.ce_source = detail::mean_over(batch.source.size(), [&](std::size_t i) {
    return ce_loss(forward(params, *batch.source[i].x).probs, batch.source[i].label);
  });
  out.ce_target = detail::mean_over(batch.target_hard.size(), [&](std::size_t i) {
    return ce_loss(forward(params, *batch.target_hard[i].x).probs, batch.target_hard[i].label);
  });
  out.kl_target = detail::mean_over(batch.target_soft.size(), [&](std::size_t i) {
    return kl_term(*batch.target_soft[i].target, forward(params, *batch.target_soft[i].x).probs, cfg.kl_direction);
  });
  const double gamma = params.margin(cfg.gamma);
  out.num_triplets = batch.triplets.size();
  out.L_tri = detail::mean_over(batch.triplets.size(), [&](std::size_t i) {
    const auto e = detail::eval_triplet(params, batch.triplets[i], gamma);
    if (e.hinge > 0.0) ++out.active_triplets;
    return std::max(0.0, e.hinge);
  });
  out.L_c = out.ce_source + cfg.beta * (out.ce_target + out.kl_target);
  out.L_all = out.L_c + cfg.epsilon * out.L_tri;
  return out;
}

struct LossAndGradient {
  LossBreakdown loss;
  HeadGradient grad;
};

/// Loss and exact analytic gradient of L_all. Terms whose weight is zero are
/// skipped, so their inputs cannot influence the gradient.
inline LossAndGradient backward(const Batch& batch, const HeadParams& params, const LossConfig& cfg) {
  LossAndGradient out{{}, HeadGradient::zeros_like(params)};
  auto& loss = out.loss;
  auto& grad = out.grad;

  if (!batch.source.empty()) {
    const double scale = 1.0 / static_cast<double>(batch.source.size());
    double sum = 0.0;
    for (const auto& s : batch.source) {
      const auto f = forward(params, *s.x);
      sum += ce_loss(f.probs, s.label);
      const Eigen::VectorXd g = scale * detail::ce_logit_grad(f.probs, s.label);
      detail::accumulate(params, f, *s.x, &g, nullptr, grad);
    }
    loss.ce_source = sum * scale;
  }

  if (cfg.beta != 0.0 && !batch.target_hard.empty()) {
    const double scale = cfg.beta / static_cast<double>(batch.target_hard.size());
    double sum = 0.0;
    for (const auto& t : batch.target_hard) {
      const auto f = forward(params, *t.x);
      sum += ce_loss(f.probs, t.label);
      const Eigen::VectorXd g = scale * detail::ce_logit_grad(f.probs, t.label);
      detail::accumulate(params, f, *t.x, &g, nullptr, grad);
    }
    loss.ce_target = sum / static_cast<double>(batch.target_hard.size());
  }

  if (cfg.beta != 0.0 && !batch.target_soft.empty()) {
    const double scale = cfg.beta / static_cast<double>(batch.target_soft.size());
    double sum = 0.0;
    for (const auto& t : batch.target_soft) {
      const auto f = forward(params, *t.x);
      sum += kl_term(*t.target, f.probs, cfg.kl_direction);
      const Eigen::VectorXd g = scale * detail::kl_logit_grad(*t.target, f.probs, cfg.kl_direction);
      detail::accumulate(params, f, *t.x, &g, nullptr, grad);
    }
    loss.kl_target = sum / static_cast<double>(batch.target_soft.size());
  }

  if (cfg.epsilon != 0.0 && !batch.triplets.empty()) {
    const double gamma = params.margin(cfg.gamma);
    const double scale = cfg.epsilon / static_cast<double>(batch.triplets.size());
    double sum = 0.0;
    const auto H = static_cast<Eigen::Index>(params.hidden_dim());
    for (const auto& t : batch.triplets) {
      const auto e = detail::eval_triplet(params, t, gamma);
      loss.num_triplets++;
      if (!(e.hinge > 0.0)) continue;
      sum += e.hinge;
      loss.active_triplets++;
      Eigen::VectorXd g_a = Eigen::VectorXd::Zero(H), g_p = Eigen::VectorXd::Zero(H), g_n = Eigen::VectorXd::Zero(H);
      if (e.d_ap >= kNormFloor) {
        const Eigen::VectorXd u = (e.a.embedding - e.p.embedding) * (scale / e.d_ap);
        g_a += u;
        g_p -= u;
      }
      if (e.d_an >= kNormFloor) {
        const Eigen::VectorXd u = (e.a.embedding - e.n.embedding) * (scale / e.d_an);
        g_a -= u;
        g_n += u;
      }
      detail::accumulate(params, e.a, *t.anchor, nullptr, &g_a, grad);
      detail::accumulate(params, e.p, *t.positive, nullptr, &g_p, grad);
      detail::accumulate(params, e.n, *t.negative, nullptr, &g_n, grad);
    }
    loss.L_tri = sum / static_cast<double>(batch.triplets.size());
    if (params.margin_raw && *params.margin_raw > 0.0) {
      grad.margin_raw = scale * static_cast<double>(loss.active_triplets);
    }
  }

  loss.L_c = loss.ce_source + cfg.beta * (loss.ce_target + loss.kl_target);
  loss.L_all = loss.L_c + cfg.epsilon * loss.L_tri;
  return out;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  HeadGradient m;
  HeadGradient v;
  std::size_t step = 0;

  static AdamState for_params(const HeadParams& p) {
    return {HeadGradient::zeros_like(p), HeadGradient::zeros_like(p), 0};
  }
};

/// Bias-corrected Adam update in place. A learned margin is clamped at zero
/// afterwards.
inline void adam_step(HeadParams& params, const HeadGradient& grad, AdamState& state, double lr,
                      const AdamConfig& cfg = {}) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
  };
  update(params.W1, grad.W1, state.m.W1, state.v.W1);
  update(params.b1, grad.b1, state.m.b1, state.v.b1);
  update(params.W2, grad.W2, state.m.W2, state.v.W2);
  update(params.b2, grad.b2, state.m.b2, state.v.b2);
  if (params.margin_raw) {
    auto& m = state.m.margin_raw;
    auto& v = state.v.margin_raw;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad.margin_raw;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.margin_raw * grad.margin_raw;
    *params.margin_raw -= lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
    *params.margin_raw = std::max(0.0, *params.margin_raw);
  }
}

/// Per-epoch exponential schedule: lr0 * decay^epoch.
inline double lr_at(std::size_t epoch, double lr0, double decay) {
  return lr0 * std::pow(decay, static_cast<double>(epoch));
}

}  // namespace adafer
